//! Shooting oracle for the radial ODE in conserved form
//!
//! ```text
//! u' = sgn(w) |w / r^(N-1)|^(1/(p-1)),   w' = r^(N-1) (m φ_p(u) - f̃(u)),
//! ```
//!
//! with `w = r^(N-1) φ_p(u')`. Neumann solutions are found by shooting on
//! `u(0)` for `w(1) = 0`; the limit profile `G` by shooting on `G(0)` for
//! `G(1) = 1` with `f̃ ≡ 0`.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{energy, phi_p};
use crate::error::{Error, Result};
use crate::grid::{fmt_f64, gauss_legendre_unit, is_in_cone, ConeTolerance, RadialFunction, RadialGrid};
use crate::nonlinearity::{ConstantStates, TruncatedNonlinearity};
use crate::ode::{Dp45, Outcome};
use crate::operator::{ConvexProblem, InnerSolveOptions};

/// Width of the closed-form startup layer at the origin.
pub const STARTUP_DELTA: f64 = 1e-6;
/// Number of initial values in the bracketing scan.
pub const SCAN_POINTS: usize = 64;

/// The radial initial-value problem for one choice of reaction.
pub struct RadialIvp<'a> {
    pub p: f64,
    pub dim: usize,
    pub mass: f64,
    pub reaction: &'a (dyn Fn(f64) -> f64 + Sync),
    /// `|u|` above this value ends the integration.
    pub blowup: f64,
    pub integrator: Dp45,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IvpEvent {
    BlowUp,
    BelowZero,
    Stalled,
}

/// Samples of `(u, w)` at requested radii, possibly cut short by an event.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub event: Option<IvpEvent>,
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "r,u,w")?;
        for i in 0..self.r.len() {
            writeln!(out, "{},{},{}", fmt_f64(self.r[i]), fmt_f64(self.u[i]), fmt_f64(self.w[i]))?;
        }
        Ok(())
    }
}

impl RadialIvp<'_> {
    fn rhs(&self, r: f64, y: &[f64; 2]) -> [f64; 2] {
        let rn = r.powi(self.dim as i32 - 1);
        let du = {
            let s = y[1] / rn;
            s.signum() * s.abs().powf(1.0 / (self.p - 1.0))
        };
        let dw = rn * (self.mass * phi_p(y[0], self.p) - (self.reaction)(y[0]));
        [du, dw]
    }

    /// Closed-form state on `[0, δ]` from the balance at the origin.
    fn startup(&self, a: f64, r: f64) -> [f64; 2] {
        let p = self.p;
        let g = self.mass * phi_p(a, p) - (self.reaction)(a);
        let amp = (g.abs() / self.dim as f64).powf(1.0 / (p - 1.0)) * g.signum();
        let u = a + amp * (p - 1.0) / p * r.powf(p / (p - 1.0));
        let w = g * r.powi(self.dim as i32) / self.dim as f64;
        [u, w]
    }

    /// Integrates from `u(0) = a` and samples at the increasing radii `at`.
    pub fn integrate(&self, a: f64, at: &[f64]) -> Trajectory {
        let delta = STARTUP_DELTA;
        let mut traj = Trajectory {
            r: Vec::with_capacity(at.len()),
            u: Vec::with_capacity(at.len()),
            w: Vec::with_capacity(at.len()),
            event: None,
        };
        let mut r = delta;
        let mut y = self.startup(a, delta);
        let mut h = 1e-4;
        for &target in at {
            if target <= delta {
                let s = self.startup(a, target);
                traj.r.push(target);
                traj.u.push(s[0]);
                traj.w.push(s[1]);
                continue;
            }
            let blowup = self.blowup;
            let outcome = self.integrator.integrate(
                |rr, yy| self.rhs(rr, yy),
                r,
                y,
                target,
                &mut h,
                |yy| yy[0] > blowup || yy[0] < 0.0,
            );
            match outcome {
                Outcome::Reached(v) => {
                    r = target;
                    y = v;
                    traj.r.push(target);
                    traj.u.push(v[0]);
                    traj.w.push(v[1]);
                }
                Outcome::Event { r: re, y: v } => {
                    traj.r.push(re);
                    traj.u.push(v[0]);
                    traj.w.push(v[1]);
                    traj.event = Some(if v[0] < 0.0 { IvpEvent::BelowZero } else { IvpEvent::BlowUp });
                    return traj;
                }
                Outcome::Stalled { r: re, y: v } => {
                    traj.r.push(re);
                    traj.u.push(v[0]);
                    traj.w.push(v[1]);
                    traj.event = Some(IvpEvent::Stalled);
                    return traj;
                }
            }
        }
        traj
    }

    /// Neumann defect `w(1)`; events map to `±∞` following the sign of the flux.
    fn neumann_miss(&self, a: f64) -> f64 {
        let t = self.integrate(a, &[1.0]);
        match t.event {
            None => t.w[0],
            Some(IvpEvent::BlowUp) => f64::INFINITY,
            Some(IvpEvent::BelowZero) => f64::NEG_INFINITY,
            Some(IvpEvent::Stalled) => f64::NAN,
        }
    }
}

/// `integrate_ivp` for the truncated problem, sampled at `at`.
pub fn integrate_ivp(a: f64, tnl: &TruncatedNonlinearity, at: &[f64]) -> Result<Trajectory> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("initial value a = {a} must be positive")));
    }
    if at.iter().any(|&r| !(0.0..=1.0).contains(&r)) || at.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("sample radii must increase within [0, 1]".into()));
    }
    let reaction = |s: f64| tnl.f(s);
    let ivp = RadialIvp {
        p: tnl.p(),
        dim: tnl.dim(),
        mass: tnl.mass(),
        reaction: &reaction,
        blowup: 10.0 * tnl.k_inf(),
        integrator: Dp45::default(),
    };
    Ok(ivp.integrate(a, at))
}

/// A root of the shooting map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub parameter: f64,
    pub miss: f64,
    pub monotone: bool,
    pub nonconstant: bool,
    pub exceeds_u0: bool,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct ShootResult {
    /// `a* = u(0)` or `b* = G(0)`.
    pub parameter: f64,
    pub profile: RadialFunction,
    /// `w = r^(N-1) φ_p(u')` at the grid nodes.
    pub flux: Vec<f64>,
    pub p: f64,
    pub miss: f64,
    pub bisection_iters: usize,
    /// Every bracketed root of the scan (Neumann mode).
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootSummary {
    pub parameter: f64,
    pub miss: f64,
    pub bisection_iters: usize,
    pub u0: f64,
    pub u1: f64,
    pub slope_at_1: f64,
    pub candidates: Vec<Candidate>,
}

impl ShootResult {
    /// `u'` at the nodes recovered from the flux.
    pub fn derivatives(&self) -> Vec<f64> {
        let dim = self.profile.grid().dim() as i32;
        self.profile
            .grid()
            .nodes()
            .iter()
            .zip(&self.flux)
            .map(|(&r, &w)| {
                if r == 0.0 {
                    0.0
                } else {
                    let s = w / r.powi(dim - 1);
                    s.signum() * s.abs().powf(1.0 / (self.p - 1.0))
                }
            })
            .collect()
    }

    pub fn summary(&self) -> ShootSummary {
        let v = self.profile.values();
        ShootSummary {
            parameter: self.parameter,
            miss: self.miss,
            bisection_iters: self.bisection_iters,
            u0: v[0],
            u1: *v.last().unwrap(),
            slope_at_1: *self.derivatives().last().unwrap(),
            candidates: self.candidates.clone(),
        }
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            r: self.profile.grid().nodes().to_vec(),
            u: self.profile.values().to_vec(),
            w: self.flux.clone(),
            event: None,
        }
    }
}

/// `∫ r^(N-1) (f̃(u) - m u^(p-1)) dr` with `u` the cubic Hermite interpolant
/// of the nodal values and slopes.
pub fn identity_defect_hermite(res: &ShootResult, tnl: &TruncatedNonlinearity) -> f64 {
    let grid = res.profile.grid();
    let nodes = grid.nodes();
    let u = res.profile.values();
    let du = res.derivatives();
    let (xs, ws) = gauss_legendre_unit(6);
    let (p, m, dim) = (tnl.p(), tnl.mass(), grid.dim() as i32);
    let mut total = 0.0;
    for e in 0..grid.element_count() {
        let (r0, h) = (nodes[e], nodes[e + 1] - nodes[e]);
        for (&t, &w) in xs.iter().zip(&ws) {
            let (t2, t3) = (t * t, t * t * t);
            let s = (2.0 * t3 - 3.0 * t2 + 1.0) * u[e]
                + (t3 - 2.0 * t2 + t) * h * du[e]
                + (-2.0 * t3 + 3.0 * t2) * u[e + 1]
                + (t3 - t2) * h * du[e + 1];
            let r = r0 + t * h;
            total += w * h * r.powi(dim - 1) * (tnl.f(s) - m * phi_p(s, p));
        }
    }
    total
}

fn bisect(mut lo: f64, mut hi: f64, mut m_lo: f64, miss: &dyn Fn(f64) -> f64, tol: f64) -> (f64, f64, usize) {
    let mut best = (lo, m_lo);
    for it in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return (best.0, best.1, it);
        }
        let mm = miss(mid);
        if mm.is_finite() && mm.abs() < best.1.abs() {
            best = (mid, mm);
        }
        if mm.is_finite() && mm.abs() < tol {
            return (mid, mm, it + 1);
        }
        if mm.is_nan() {
            return (best.0, best.1, it + 1);
        }
        if (mm > 0.0) == (m_lo > 0.0) {
            lo = mid;
            m_lo = mm;
        } else {
            hi = mid;
        }
    }
    (best.0, best.1, 200)
}

/// Neumann shooting in the cone bounded by `states`, sampled on `grid`.
///
/// Scans `u(0)` over `(u₋, u₀)`, bisects every sign change of `w(1)`, keeps
/// roots whose profiles are nondecreasing, nonconstant and exceed `u₀` at
/// `r = 1`, and returns the one of least energy.
pub fn shoot_neumann(
    tnl: &TruncatedNonlinearity,
    states: &ConstantStates,
    grid: &Arc<RadialGrid>,
) -> Result<ShootResult> {
    let reaction = |s: f64| tnl.f(s);
    let ivp = RadialIvp {
        p: tnl.p(),
        dim: tnl.dim(),
        mass: tnl.mass(),
        reaction: &reaction,
        blowup: 10.0 * tnl.k_inf(),
        integrator: Dp45::default(),
    };
    let (lo, hi) = (states.u_minus + 1e-6, states.u_zero - 1e-6);
    let scan: Vec<(f64, f64)> = (0..SCAN_POINTS)
        .map(|k| {
            let a = lo + (hi - lo) * k as f64 / (SCAN_POINTS - 1) as f64;
            (a, ivp.neumann_miss(a))
        })
        .collect();
    let miss = |a: f64| ivp.neumann_miss(a);
    let mut candidates = Vec::new();
    let mut best: Option<(ShootResult, f64)> = None;
    for pair in scan.windows(2) {
        let ((a0, m0), (a1, m1)) = (pair[0], pair[1]);
        if m0.is_nan() || m1.is_nan() || m0 == 0.0 || (m0 > 0.0) == (m1 > 0.0) {
            continue;
        }
        let (a, mm, iters) = bisect(a0, a1, m0, &miss, 1e-10);
        let traj = ivp.integrate(a, grid.nodes());
        if traj.event.is_some() || traj.u.len() != grid.node_count() {
            continue;
        }
        let profile = RadialFunction::new(grid.clone(), traj.u.clone())?;
        let monotone = is_in_cone(&profile, ConeTolerance::new(1e-12, 1e-8)?);
        let nonconstant = profile.oscillation() > 1e-4;
        let exceeds_u0 = *traj.u.last().unwrap() > states.u_zero;
        let en = energy(&profile, tnl);
        let cand = Candidate {
            parameter: a,
            miss: mm,
            monotone,
            nonconstant,
            exceeds_u0,
            energy: en,
        };
        candidates.push(cand);
        if monotone && nonconstant && exceeds_u0 && best.as_ref().is_none_or(|(_, e)| en < *e) {
            best = Some((
                ShootResult {
                    parameter: a,
                    profile,
                    flux: traj.w,
                    p: tnl.p(),
                    miss: mm,
                    bisection_iters: iters,
                    candidates: Vec::new(),
                },
                en,
            ));
        }
    }
    match best {
        Some((mut res, _)) => {
            res.candidates = candidates;
            Ok(res)
        }
        None => {
            let table: Vec<String> = scan.iter().map(|(a, m)| format!("{a:.6}:{m:.3e}")).collect();
            Err(Error::Shooting(format!(
                "no admissible Neumann bracket in ({lo}, {hi}); scan a:miss = [{}]",
                table.join(", ")
            )))
        }
    }
}

/// Shooting for `-Δ_p G + G^(p-1) = 0`, `G'(0) = 0`, `G(1) = 1`.
///
/// The map `b ↦ G(1; b)` is bisected, and the final profile is divided by its
/// boundary value, which is exact because the equation is homogeneous.
pub fn shoot_dirichlet_g(p: f64, grid: &Arc<RadialGrid>) -> Result<ShootResult> {
    if !(p >= 2.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be >= 2")));
    }
    let zero = |_: f64| 0.0;
    let ivp = RadialIvp {
        p,
        dim: grid.dim(),
        mass: 1.0,
        reaction: &zero,
        blowup: 1e12,
        integrator: Dp45::default(),
    };
    let end = |b: f64| -> f64 {
        let t = ivp.integrate(b, &[1.0]);
        if t.event.is_some() {
            f64::NAN
        } else {
            t.u[0] - 1.0
        }
    };
    let (lo, hi) = (1e-3, 1.0);
    let (m_lo, m_hi) = (end(lo), end(hi));
    if !(m_lo < 0.0 && m_hi > 0.0) {
        return Err(Error::Shooting(format!("no bracket for G(0): miss({lo}) = {m_lo}, miss({hi}) = {m_hi}")));
    }
    let (b, _, iters) = bisect(lo, hi, m_lo, &end, 1e-12);
    let traj = ivp.integrate(b, grid.nodes());
    if traj.event.is_some() {
        return Err(Error::Shooting("integration of G stopped early".into()));
    }
    let scale = *traj.u.last().unwrap();
    let u: Vec<f64> = traj.u.iter().map(|v| v / scale).collect();
    // w scales like u^(p-1).
    let wscale = scale.powf(p - 1.0);
    let flux: Vec<f64> = traj.w.iter().map(|w| w / wscale).collect();
    let profile = RadialFunction::new(grid.clone(), u)?;
    Ok(ShootResult {
        parameter: b / scale,
        profile,
        flux,
        p,
        miss: scale - 1.0,
        bisection_iters: iters,
        candidates: Vec::new(),
    })
}

/// `c_∞ = (1/p)∫ r^(N-1)(|G'|^p + G^p) dr = w(1)/p` from a shot `G`.
pub fn c_infinity_from_flux(g: &ShootResult) -> f64 {
    *g.flux.last().unwrap() / g.p
}

/// Minimizer of `(1/p)∫ r^(N-1)(|v'|^p + |v|^p)` with `v(1) = 1`.
pub fn variational_g(p: f64, grid: &Arc<RadialGrid>, opts: &InnerSolveOptions) -> Result<RadialFunction> {
    if !(p >= 2.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be >= 2")));
    }
    let load = vec![0.0; grid.node_count()];
    let problem = ConvexProblem {
        grid,
        p,
        mass: 1.0,
        load: &load,
        dirichlet_last: Some(1.0),
    };
    let v = problem.minimize(vec![1.0; grid.node_count()], opts, None)?;
    RadialFunction::new(grid.clone(), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{gradient, residual_strong};
    use crate::grid::{make_grid, norm_w1p_pow, Grading};
    use crate::nonlinearity::{build_truncation, find_constant_states, Nonlinearity};

    #[test]
    fn equilibrium_stays_constant() {
        let t = build_truncation(&Nonlinearity::pure_power(3.0, 5.0).unwrap(), 2.0, 2).unwrap();
        let traj = integrate_ivp(1.0, &t, &[0.0, 0.5, 1.0]).unwrap();
        assert!(traj.u.iter().all(|u| *u == 1.0));
        assert!(traj.w.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn linear_cosh() {
        let zero = |_: f64| 0.0;
        let ivp = RadialIvp {
            p: 2.0,
            dim: 1,
            mass: 1.0,
            reaction: &zero,
            blowup: 1e9,
            integrator: Dp45::default(),
        };
        let t = ivp.integrate(1.0, &[0.5, 1.0]);
        assert!((t.u[1] - 1f64.cosh()).abs() < 1e-8);
        assert!((t.u[0] - 0.5f64.cosh()).abs() < 1e-8);
    }

    #[test]
    fn dirichlet_linear_closed_form() {
        let grid = make_grid(256, 1, Grading::Uniform).unwrap();
        let g = shoot_dirichlet_g(2.0, &grid).unwrap();
        assert!((g.parameter - 1.0 / 1f64.cosh()).abs() < 1e-8);
        assert!((c_infinity_from_flux(&g) - 0.5 * 1f64.tanh()).abs() < 1e-8);
        assert_eq!(*g.profile.values().last().unwrap(), 1.0);
        assert!(g.summary().slope_at_1 > 0.0);
    }

    #[test]
    fn variational_matches_shooting() {
        for (p, dim) in [(2.0, 1), (3.0, 2)] {
            let grid = make_grid(1024, dim, Grading::Uniform).unwrap();
            let g = shoot_dirichlet_g(p, &grid).unwrap();
            let v = variational_g(p, &grid, &InnerSolveOptions::default()).unwrap();
            assert_eq!(*v.values().last().unwrap(), 1.0);
            assert!(v.sup_distance(&g.profile) < 1e-5, "{}", v.sup_distance(&g.profile));
            let cv = norm_w1p_pow(&v, p) / p;
            assert!((cv - c_infinity_from_flux(&g)).abs() < 1e-5);
        }
    }

    #[test]
    fn neumann_pure_power() {
        let t = build_truncation(&Nonlinearity::pure_power(3.0, 5.0).unwrap(), 2.0, 2).unwrap();
        let states = find_constant_states(&t).unwrap()[0];
        let grid = make_grid(512, 2, Grading::Uniform).unwrap();
        let res = shoot_neumann(&t, &states, &grid).unwrap();
        assert!(res.parameter > 0.0 && res.parameter < 1.0);
        assert!((res.parameter - 0.92390).abs() < 1e-4, "{}", res.parameter);
        assert!(res.miss.abs() < 1e-9);
        assert!(identity_defect_hermite(&res, &t).abs() < 1e-8);
    }

    #[test]
    fn interpolated_shot_is_second_order_in_the_bulk() {
        // u' ~ (1-r)^(1/(p-1)) and u' ~ r^(1/(p-1)) make the end cells O(1) and
        // O(h); away from them the defect of the interpolant is O(h²).
        let t = build_truncation(&Nonlinearity::pure_power(3.0, 5.0).unwrap(), 2.0, 2).unwrap();
        let states = find_constant_states(&t).unwrap()[0];
        let bulk = |n: usize| {
            let grid = make_grid(n, 2, Grading::Uniform).unwrap();
            let res = shoot_neumann(&t, &states, &grid).unwrap();
            let g = gradient(&res.profile, &t);
            let whole = residual_strong(&res.profile, &t);
            let inner = (0..=n)
                .filter(|&i| (0.05..=0.95).contains(&grid.nodes()[i]))
                .map(|i| g[i].abs() / grid.dual_width(i))
                .fold(0.0, f64::max);
            (inner, whole)
        };
        let (coarse, _) = bulk(512);
        let (fine, whole) = bulk(2048);
        assert!(fine < 1e-6, "{fine}");
        assert!(coarse / fine > 10.0);
        assert!(whole > 1e-3);
    }
}
