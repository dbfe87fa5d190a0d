//! The inverse operator `T̃` of `-Δ_p v + m φ_p(v)` with Neumann conditions,
//! realized as a convex minimization, and the pseudo-gradient `K(u) = T̃(f̃(u))`.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{dual_norm, phi_p};
use crate::error::{Error, Result};
use crate::grid::{fmt_f64, is_in_cone, monotonicity_violation, ConeTolerance, RadialFunction, RadialGrid};
use crate::linalg::Tridiag;
use crate::nonlinearity::{ConstantStates, TruncatedNonlinearity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerSolveOptions {
    /// Stopping tolerance on the dual norm of the gradient of `J`.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial regularization of the Hessian weights.
    pub epsilon_reg: f64,
}

impl Default for InnerSolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 500,
            epsilon_reg: 1e-8,
        }
    }
}

impl InnerSolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters < 1 || !(self.epsilon_reg >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid inner options {self:?}")));
        }
        Ok(())
    }
}

/// One row of the inner iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerTraceRow {
    pub iter: usize,
    #[serde(rename = "J")]
    pub j: f64,
    pub grad_norm: f64,
}

pub fn write_inner_trace<W: Write>(rows: &[InnerTraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iter,J,grad_norm")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.iter, fmt_f64(r.j), fmt_f64(r.grad_norm))?;
    }
    Ok(())
}

/// Multiple of machine epsilon times the gradient magnitude treated as converged.
const ROUNDOFF_FACTOR: f64 = 64.0;

/// `J(v) = ∫ r^(N-1)(|v'|^p + m|v|^p)/p - Σ b_i v_i` with optional fixed last node.
pub(crate) struct ConvexProblem<'a> {
    pub grid: &'a RadialGrid,
    pub p: f64,
    pub mass: f64,
    pub load: &'a [f64],
    pub dirichlet_last: Option<f64>,
}

impl ConvexProblem<'_> {
    fn objective(&self, v: &[f64]) -> f64 {
        let g = self.grid;
        let (p, m) = (self.p, self.mass);
        let k = g.points_per_element();
        let (w, xi) = (g.qp_weights(), g.ref_points());
        let mut total = 0.0;
        for e in 0..g.element_count() {
            let d = (v[e + 1] - v[e]) / g.element_length(e);
            total += g.element_mass(e) * d.abs().powf(p) / p;
            for q in 0..k {
                let s = v[e] + (v[e + 1] - v[e]) * xi[q];
                total += w[e * k + q] * m * s.abs().powf(p) / p;
            }
        }
        total - v.iter().zip(self.load).map(|(a, b)| a * b).sum::<f64>()
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let (p, m) = (self.p, self.mass);
        let k = g.points_per_element();
        let (w, xi) = (g.qp_weights(), g.ref_points());
        let mut out: Vec<f64> = self.load.iter().map(|b| -b).collect();
        for e in 0..g.element_count() {
            let h = g.element_length(e);
            let flux = phi_p((v[e + 1] - v[e]) / h, p) * g.element_mass(e) / h;
            out[e] -= flux;
            out[e + 1] += flux;
            for q in 0..k {
                let s = v[e] + (v[e + 1] - v[e]) * xi[q];
                let c = w[e * k + q] * m * phi_p(s, p);
                out[e] += c * (1.0 - xi[q]);
                out[e + 1] += c * xi[q];
            }
        }
        if self.dirichlet_last.is_some() {
            *out.last_mut().unwrap() = 0.0;
        }
        out
    }

    /// Dual norm of `|b| + |H||v|`: the scale of the gradient's rounding error
    /// under one-ulp perturbations of the iterate.
    fn gradient_magnitude(&self, v: &[f64]) -> f64 {
        let h = self.hessian(v, 1e-12);
        let n = v.len();
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = self.load[i].abs() + h.diag[i].abs() * v[i].abs();
                if i > 0 {
                    s += h.sub[i - 1].abs() * v[i - 1].abs();
                }
                if i + 1 < n {
                    s += h.sup[i].abs() * v[i + 1].abs();
                }
                s
            })
            .collect();
        dual_norm(&out, self.grid)
    }

    fn hessian(&self, v: &[f64], eps: f64) -> Tridiag {
        let g = self.grid;
        let (p, m) = (self.p, self.mass);
        let k = g.points_per_element();
        let (w, xi) = (g.qp_weights(), g.ref_points());
        let mut a = Tridiag::zeros(g.node_count());
        let e2 = eps * eps;
        for e in 0..g.element_count() {
            let h = g.element_length(e);
            let d = (v[e + 1] - v[e]) / h;
            let stiff = (p - 1.0) * (e2 + d * d).powf(0.5 * (p - 2.0)) * g.element_mass(e) / (h * h);
            a.diag[e] += stiff;
            a.diag[e + 1] += stiff;
            a.sub[e] -= stiff;
            a.sup[e] -= stiff;
            for q in 0..k {
                let s = v[e] + (v[e + 1] - v[e]) * xi[q];
                let c = w[e * k + q] * m * (p - 1.0) * (e2 + s * s).powf(0.5 * (p - 2.0));
                let (l, r) = (1.0 - xi[q], xi[q]);
                a.diag[e] += c * l * l;
                a.diag[e + 1] += c * r * r;
                a.sub[e] += c * l * r;
                a.sup[e] += c * l * r;
            }
        }
        if self.dirichlet_last.is_some() {
            let n = a.len();
            a.diag[n - 1] = 1.0;
            a.sub[n - 2] = 0.0;
            a.sup[n - 2] = 0.0;
        }
        a
    }

    /// Damped Newton on the regularized Hessian with backtracking on `J`.
    pub fn minimize(
        &self,
        start: Vec<f64>,
        opts: &InnerSolveOptions,
        mut trace: Option<&mut Vec<InnerTraceRow>>,
    ) -> Result<Vec<f64>> {
        let mut v = start;
        if let Some(c) = self.dirichlet_last {
            *v.last_mut().unwrap() = c;
        }
        let mut j = self.objective(&v);
        let mut grad = self.gradient(&v);
        let mut gnorm = dual_norm(&grad, self.grid);
        let mut eps = opts.epsilon_reg;
        // Relative to the load so that large reactions (high q) meet the same digits.
        let tol = opts.tol * dual_norm(self.load, self.grid).max(1.0);
        for iter in 0..opts.max_iters {
            if let Some(t) = trace.as_deref_mut() {
                t.push(InnerTraceRow { iter, j, grad_norm: gnorm });
            }
            if gnorm < tol {
                return Ok(v);
            }
            // At the rounding floor of the gradient itself no further digits exist.
            if gnorm < 1e4 * tol && gnorm <= ROUNDOFF_FACTOR * f64::EPSILON * self.gradient_magnitude(&v) {
                return Ok(v);
            }
            let h = self.hessian(&v, eps.max(1e-12));
            let step = h.solve(&grad.iter().map(|g| -g).collect::<Vec<_>>())?;
            let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
            let mut sigma = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = v.iter().zip(&step).map(|(a, b)| a + sigma * b).collect();
                let jt = self.objective(&trial);
                let armijo = jt <= j + 1e-4 * sigma * slope;
                // Near the minimizer J is flat to roundoff; accept on gradient decrease.
                let flat = (jt - j).abs() <= 1e-14 * (1.0 + j.abs());
                if armijo || flat {
                    let gt = self.gradient(&trial);
                    let gn = dual_norm(&gt, self.grid);
                    if armijo || gn < gnorm {
                        v = trial;
                        j = jt;
                        grad = gt;
                        gnorm = gn;
                        accepted = true;
                        break;
                    }
                }
                sigma *= 0.5;
            }
            if !accepted {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    grad_norm: gnorm,
                    last_iterate: v,
                });
            }
            eps *= 0.1;
        }
        if gnorm < tol {
            return Ok(v);
        }
        Err(Error::NonConvergence {
            iterations: opts.max_iters,
            grad_norm: gnorm,
            last_iterate: v,
        })
    }
}

/// Nodal load `b_i = ∫ r^(N-1) h φ_i dr` of a profile.
pub fn load_vector(h: &RadialFunction) -> Vec<f64> {
    load_from_qp(h.grid(), &h.qp_values(), |s| s)
}

fn load_from_qp(grid: &RadialGrid, qp: &[f64], map: impl Fn(f64) -> f64) -> Vec<f64> {
    let k = grid.points_per_element();
    let (w, xi) = (grid.qp_weights(), grid.ref_points());
    let mut b = vec![0.0; grid.node_count()];
    for e in 0..grid.element_count() {
        for q in 0..k {
            let c = w[e * k + q] * map(qp[e * k + q]);
            b[e] += c * (1.0 - xi[q]);
            b[e + 1] += c * xi[q];
        }
    }
    b
}

/// Pointwise inverse `sign(h)|h/m|^(1/(p-1))` of the lumped load, the exact
/// answer for constant data.
fn lumped_start(grid: &RadialGrid, load: &[f64], p: f64, mass: f64) -> Vec<f64> {
    load.iter()
        .zip(grid.node_weights())
        .map(|(b, w)| {
            let h = b / (w * mass);
            h.signum() * h.abs().powf(1.0 / (p - 1.0))
        })
        .collect()
}

/// Minimizer of `J` for a given nodal load and reaction coefficient `mass`.
pub fn apply_t_load(
    grid: &Arc<RadialGrid>,
    p: f64,
    mass: f64,
    load: &[f64],
    start: Option<&[f64]>,
    opts: &InnerSolveOptions,
    trace: Option<&mut Vec<InnerTraceRow>>,
) -> Result<RadialFunction> {
    opts.validate()?;
    if !(p >= 2.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be >= 2")));
    }
    if load.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidParameter("load must be finite".into()));
    }
    let problem = ConvexProblem {
        grid,
        p,
        mass,
        load,
        dirichlet_last: None,
    };
    let v0 = match start {
        Some(s) => s.to_vec(),
        None => lumped_start(grid, load, p, mass),
    };
    let v = problem.minimize(v0, opts, trace)?;
    RadialFunction::new(grid.clone(), v)
}

/// `T̃(h)`: the discrete weak solution of `-(r^(N-1)φ_p(v'))' + r^(N-1)φ_p(v) = r^(N-1)h`
/// with `v'(0) = v'(1) = 0`.
pub fn apply_t(h: &RadialFunction, p: f64, opts: &InnerSolveOptions) -> Result<RadialFunction> {
    apply_t_load(h.grid(), p, 1.0, &load_vector(h), None, opts, None)
}

/// Nodal load `∫ r^(N-1) f̃(u) φ_i`, matching the reaction term of the weak gradient.
pub fn reaction_load(u: &RadialFunction, tnl: &TruncatedNonlinearity) -> Vec<f64> {
    load_from_qp(u.grid(), &u.qp_values(), |s| tnl.f(s))
}

/// `K(u) = T̃(f̃(u))`; `K(u) = u` exactly when the weak gradient of `Ĩ` vanishes.
pub fn pseudo_gradient_k(
    u: &RadialFunction,
    tnl: &TruncatedNonlinearity,
    opts: &InnerSolveOptions,
) -> Result<RadialFunction> {
    let load = reaction_load(u, tnl);
    apply_t_load(u.grid(), tnl.p(), tnl.mass(), &load, Some(u.values()), opts, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub trials: usize,
    pub failures: usize,
    /// Largest downward jump between consecutive nodes of any `K(u)`.
    pub worst_violation: f64,
}

/// Random nondecreasing piecewise-linear profile with values in `[lo, hi]`.
pub fn random_cone_input(grid: &Arc<RadialGrid>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> RadialFunction {
    let knots = rng.gen_range(2..9);
    let mut xs: Vec<f64> = (0..knots).map(|_| rng.gen::<f64>()).collect();
    xs.push(0.0);
    xs.push(1.0);
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ys: Vec<f64> = (0..xs.len()).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let values = grid
        .nodes()
        .iter()
        .map(|&r| {
            let j = xs.partition_point(|&x| x <= r).clamp(1, xs.len() - 1);
            let (x0, x1) = (xs[j - 1], xs[j]);
            let t = if x1 > x0 { ((r - x0) / (x1 - x0)).clamp(0.0, 1.0) } else { 1.0 };
            ys[j - 1] + (ys[j] - ys[j - 1]) * t
        })
        .collect();
    RadialFunction::new(grid.clone(), values).expect("finite profile")
}

/// Applies `K` to random cone inputs and counts outputs leaving the cone
/// (monotone tolerance `1e-8`).
pub fn verify_cone_preservation(
    grid: &Arc<RadialGrid>,
    tnl: &TruncatedNonlinearity,
    states: &ConstantStates,
    trials: usize,
    seed: u64,
    opts: &InnerSolveOptions,
) -> Result<ConeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hi = states.u_plus_or_inf().min(tnl.k_inf());
    let tol = ConeTolerance::new(1e-12, 1e-8)?;
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let u = random_cone_input(grid, &mut rng, states.u_minus, hi);
        let ku = pseudo_gradient_k(&u, tnl, opts)?;
        worst = worst.max(monotonicity_violation(&ku));
        if !is_in_cone(&ku, tol) {
            failures += 1;
        }
    }
    Ok(ConeReport {
        trials,
        failures,
        worst_violation: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::grad_norm;
    use crate::grid::{make_grid, Grading};
    use crate::nonlinearity::{build_truncation, find_constant_states, Nonlinearity};

    fn pure(p: f64, q: f64, dim: usize) -> TruncatedNonlinearity {
        build_truncation(&Nonlinearity::pure_power(p, q).unwrap(), 2.0, dim).unwrap()
    }

    #[test]
    fn constants_invert_exactly() {
        let grid = make_grid(64, 2, Grading::Uniform).unwrap();
        let c: f64 = 1.7;
        let h = RadialFunction::constant(grid.clone(), c * c);
        let v = apply_t(&h, 3.0, &InnerSolveOptions::default()).unwrap();
        assert!(v.values().iter().all(|x| (x - c).abs() < 1e-12));
        let zero = apply_t(&RadialFunction::constant(grid, 0.0), 3.0, &InnerSolveOptions::default()).unwrap();
        assert!(zero.values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn linear_closed_form() {
        let grid = make_grid(1024, 1, Grading::Uniform).unwrap();
        let h = RadialFunction::from_fn(grid.clone(), |r| r);
        let v = apply_t(&h, 2.0, &InnerSolveOptions::default()).unwrap();
        let a = (1f64.cosh() - 1.0) / 1f64.sinh();
        let exact = RadialFunction::from_fn(grid, |r| r - r.sinh() + a * r.cosh());
        assert!(v.sup_distance(&exact) < 1e-6, "{}", v.sup_distance(&exact));
        assert!((a - 0.46212).abs() < 1e-5);
    }

    #[test]
    fn two_starts_agree() {
        let grid = make_grid(256, 2, Grading::Uniform).unwrap();
        let h = RadialFunction::from_fn(grid.clone(), |r| 0.2 + r.powi(3));
        let load = load_vector(&h);
        let opts = InnerSolveOptions::default();
        let a = apply_t_load(&grid, 3.0, 1.0, &load, Some(&vec![0.0; grid.node_count()]), &opts, None).unwrap();
        let b = apply_t_load(&grid, 3.0, 1.0, &load, None, &opts, None).unwrap();
        assert!(a.sup_distance(&b) < 1e-8);
    }

    #[test]
    fn constant_state_is_fixed_point() {
        let t = pure(3.0, 5.0, 2);
        let grid = make_grid(128, 2, Grading::Uniform).unwrap();
        let u = RadialFunction::constant(grid.clone(), 1.0);
        let ku = pseudo_gradient_k(&u, &t, &InnerSolveOptions::default()).unwrap();
        assert!(ku.sup_distance(&u) < 1e-9);
        assert!(grad_norm(&u, &t) < 1e-9);
        let c: f64 = 0.5;
        let kc = pseudo_gradient_k(&RadialFunction::constant(grid, c), &t, &InnerSolveOptions::default()).unwrap();
        let expected = c.powi(4).powf(0.5);
        assert!(kc.values().iter().all(|x| (x - expected).abs() < 1e-10));
    }

    #[test]
    fn fixed_point_iff_critical() {
        // A profile that is not critical is moved by K.
        let t = pure(3.0, 5.0, 2);
        let grid = make_grid(128, 2, Grading::Uniform).unwrap();
        let u = RadialFunction::from_fn(grid, |r| 0.8 + 0.4 * r * r);
        let ku = pseudo_gradient_k(&u, &t, &InnerSolveOptions::default()).unwrap();
        assert!(grad_norm(&u, &t) > 1e-3);
        assert!(ku.sup_distance(&u) > 1e-3);
    }

    #[test]
    fn inverse_residual() {
        let grid = make_grid(1024, 2, Grading::Uniform).unwrap();
        let h = RadialFunction::from_fn(grid.clone(), |r| 0.5 + r * r);
        let v = apply_t(&h, 3.0, &InnerSolveOptions::default()).unwrap();
        // Residual of -Δ_p v + φ_p(v) = h expressed through a linear reaction.
        let nl = Nonlinearity::custom("zero", 3.0, |_| 0.0, |_| 0.0, None).unwrap();
        let tz = build_truncation(&nl, 2.0, 2).unwrap();
        let mut g = crate::energy::gradient(&v, &tz);
        for (gi, bi) in g.iter_mut().zip(load_vector(&h)) {
            *gi -= bi;
        }
        let res = g.iter().enumerate().map(|(i, x)| x.abs() / grid.dual_width(i)).fold(0.0, f64::max);
        assert!(res < 1e-6, "{res}");
    }

    #[test]
    fn cone_preservation_pure_power() {
        let t = pure(3.0, 5.0, 2);
        let grid = make_grid(128, 2, Grading::Uniform).unwrap();
        let states = find_constant_states(&t).unwrap()[0];
        let rep = verify_cone_preservation(&grid, &t, &states, 20, 3, &InnerSolveOptions::default()).unwrap();
        assert_eq!(rep.failures, 0, "{rep:?}");
        let empty = verify_cone_preservation(&grid, &t, &states, 0, 3, &InnerSolveOptions::default()).unwrap();
        assert_eq!(empty.trials, 0);
    }

    #[test]
    fn trace_is_recorded() {
        let grid = make_grid(64, 2, Grading::Uniform).unwrap();
        let h = RadialFunction::from_fn(grid.clone(), |r| 1.0 + r);
        let mut rows = Vec::new();
        apply_t_load(&grid, 3.0, 1.0, &load_vector(&h), Some(&vec![0.1; 65]), &InnerSolveOptions::default(), Some(&mut rows)).unwrap();
        assert!(rows.len() > 1);
        assert!(rows.windows(2).all(|w| w[1].j <= w[0].j + 1e-14));
        let mut buf = Vec::new();
        write_inner_trace(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("iter,J,grad_norm\n"));
    }
}
