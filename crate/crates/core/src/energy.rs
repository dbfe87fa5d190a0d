//! The truncated energy `Ĩ`, its discrete weak gradient and Jacobian, residuals,
//! the Nehari functional and sampled mountain-pass geometry.
//!
//! All integrals are one-dimensional with weight `r^(N-1)`; the surface
//! measure of the sphere is dropped throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{is_in_cone, norm_w1p_pow, ConeTolerance, RadialFunction, RadialGrid};
use crate::linalg::Tridiag;
use crate::nonlinearity::{ConstantStates, TruncatedNonlinearity};

/// `|s|^(p-2) s`.
#[inline]
pub fn phi_p(s: f64, p: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.abs().powf(p - 2.0) * s
    }
}

/// `Ĩ(u) = ∫ r^(N-1) [(|u'|^p + m|u|^p)/p - F̃(u)] dr`.
pub fn energy(u: &RadialFunction, tnl: &TruncatedNonlinearity) -> f64 {
    let grid = u.grid();
    let (p, m) = (tnl.p(), tnl.mass());
    let k = grid.points_per_element();
    let (w, xi) = (grid.qp_weights(), grid.ref_points());
    let vals = u.values();
    let mut total = 0.0;
    for e in 0..grid.element_count() {
        let d = u.derivative(e);
        total += grid.element_mass(e) * d.abs().powf(p) / p;
        let (a, b) = (vals[e], vals[e + 1]);
        for q in 0..k {
            let s = a + (b - a) * xi[q];
            total += w[e * k + q] * (m * s.abs().powf(p) / p - tnl.big_f(s));
        }
    }
    total
}

/// Energy of the constant profile `u ≡ t`: `(m t^p/p - F̃(t)) / N`.
pub fn constant_energy(t: f64, tnl: &TruncatedNonlinearity) -> f64 {
    let p = tnl.p();
    (tnl.mass() * t.abs().powf(p) / p - tnl.big_f(t)) / tnl.dim() as f64
}

/// Nodal weak form `G_i = ∫ r^(N-1) [φ_p(u') φ_i' + (m φ_p(u) - f̃(u)) φ_i] dr`.
pub fn gradient(u: &RadialFunction, tnl: &TruncatedNonlinearity) -> Vec<f64> {
    let grid = u.grid();
    let (p, m) = (tnl.p(), tnl.mass());
    let k = grid.points_per_element();
    let (w, xi) = (grid.qp_weights(), grid.ref_points());
    let vals = u.values();
    let mut g = vec![0.0; grid.node_count()];
    for e in 0..grid.element_count() {
        let h = grid.element_length(e);
        let flux = phi_p(u.derivative(e), p) * grid.element_mass(e) / h;
        g[e] -= flux;
        g[e + 1] += flux;
        let (a, b) = (vals[e], vals[e + 1]);
        for q in 0..k {
            let s = a + (b - a) * xi[q];
            let react = w[e * k + q] * (m * phi_p(s, p) - tnl.f(s));
            g[e] += react * (1.0 - xi[q]);
            g[e + 1] += react * xi[q];
        }
    }
    g
}

/// Jacobian of [`gradient`], i.e. the discrete second variation of `Ĩ`.
pub fn hessian(u: &RadialFunction, tnl: &TruncatedNonlinearity) -> Tridiag {
    let grid = u.grid();
    let (p, m) = (tnl.p(), tnl.mass());
    let k = grid.points_per_element();
    let (w, xi) = (grid.qp_weights(), grid.ref_points());
    let vals = u.values();
    let mut a = Tridiag::zeros(grid.node_count());
    for e in 0..grid.element_count() {
        let h = grid.element_length(e);
        let stiff = (p - 1.0) * u.derivative(e).abs().powf(p - 2.0) * grid.element_mass(e) / (h * h);
        a.diag[e] += stiff;
        a.diag[e + 1] += stiff;
        a.sub[e] -= stiff;
        a.sup[e] -= stiff;
        let (va, vb) = (vals[e], vals[e + 1]);
        for q in 0..k {
            let s = va + (vb - va) * xi[q];
            let c = w[e * k + q] * (m * (p - 1.0) * s.abs().powf(p - 2.0) - tnl.f_prime(s));
            let (l, r) = (1.0 - xi[q], xi[q]);
            a.diag[e] += c * l * l;
            a.diag[e + 1] += c * r * r;
            a.sub[e] += c * l * r;
            a.sup[e] += c * l * r;
        }
    }
    a
}

/// Dual norm `sqrt(Σ G_i² / w_i)` of a nodal defect.
pub fn dual_norm(g: &[f64], grid: &RadialGrid) -> f64 {
    g.iter()
        .zip(grid.node_weights())
        .map(|(gi, wi)| gi * gi / wi)
        .sum::<f64>()
        .sqrt()
}

pub fn grad_norm(u: &RadialFunction, tnl: &TruncatedNonlinearity) -> f64 {
    dual_norm(&gradient(u, tnl), u.grid())
}

/// Largest finite-volume defect `|G_i| / |cell_i|` over all nodes.
///
/// At interior nodes this is the flux difference of `r^(N-1) φ_p(u')` across
/// the dual cell minus the cell-averaged reaction; at `r = 0` and `r = 1` the
/// half cell carries the boundary flux defect.
pub fn residual_strong(u: &RadialFunction, tnl: &TruncatedNonlinearity) -> f64 {
    let grid = u.grid();
    gradient(u, tnl)
        .iter()
        .enumerate()
        .map(|(i, g)| g.abs() / grid.dual_width(i))
        .fold(0.0, f64::max)
}

/// `max_i |ΔĨ_i - G_i| / max_i |G_i|`, where `ΔĨ_i` is the central difference
/// of the energy in nodal direction `i` with step `h·max(1, |u_i|)`.
pub fn gradient_fd_error(u: &RadialFunction, tnl: &TruncatedNonlinearity, h: f64) -> f64 {
    let g = gradient(u, tnl);
    let mut vals = u.values().to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..vals.len() {
        let step = h * vals[i].abs().max(1.0);
        let base = vals[i];
        vals[i] = base + step;
        let plus = energy(&RadialFunction::from_parts(u.grid().clone(), vals.clone()), tnl);
        vals[i] = base - step;
        let minus = energy(&RadialFunction::from_parts(u.grid().clone(), vals.clone()), tnl);
        vals[i] = base;
        worst = worst.max(((plus - minus) / (2.0 * step) - g[i]).abs());
    }
    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    worst / scale.max(f64::MIN_POSITIVE)
}

/// `Ĩ'(u)[u]`.
pub fn nehari(u: &RadialFunction, tnl: &TruncatedNonlinearity) -> f64 {
    gradient(u, tnl).iter().zip(u.values()).map(|(g, v)| g * v).sum()
}

/// Scale `t > 0` putting `t·u` on the Nehari set of `f(s) = s^(q-1)`.
pub fn nehari_scale_pure_power(u: &RadialFunction, p: f64, q: f64) -> Result<f64> {
    let num = norm_w1p_pow(u, p);
    let den = u.grid().integrate_qp(&u.qp_values().iter().map(|v| v.abs().powf(q)).collect::<Vec<_>>());
    if !(den > 0.0) || !(num > 0.0) {
        return Err(Error::DegenerateInput("profile is identically zero".into()));
    }
    Ok((num / den).powf(1.0 / (q - p)))
}

/// Energy, stationarity and cone diagnostics of one profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub value: f64,
    pub grad_norm: f64,
    pub nehari: f64,
    pub residual_strong: f64,
    pub is_cone: bool,
}

pub fn energy_report(u: &RadialFunction, tnl: &TruncatedNonlinearity) -> EnergyReport {
    let g = gradient(u, tnl);
    let grid = u.grid();
    EnergyReport {
        value: energy(u, tnl),
        grad_norm: dual_norm(&g, grid),
        nehari: g.iter().zip(u.values()).map(|(a, b)| a * b).sum(),
        residual_strong: g
            .iter()
            .enumerate()
            .map(|(i, gi)| gi.abs() / grid.dual_width(i))
            .fold(0.0, f64::max),
        is_cone: is_in_cone(u, ConeTolerance::default()),
    }
}

/// Sampled mountain-pass geometry around the constant states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub tau: f64,
    pub samples: usize,
    pub energy_minus: f64,
    pub energy_zero: f64,
    pub energy_plus: Option<f64>,
    /// `min Ĩ - Ĩ(u₋)` over profiles with `‖u - u₋‖_∞ = τ`.
    pub alpha_minus: f64,
    /// Same around `u₊` when it is finite.
    pub alpha_plus: Option<f64>,
    /// `t` with `Ĩ(t·1) < min(Ĩ(u₋), Ĩ(u₊)) - 1` (unbounded cone only).
    pub witness_t: Option<f64>,
}

impl GeometryReport {
    /// Barrier height usable by the endpoint predicates.
    pub fn alpha_hat(&self) -> f64 {
        self.alpha_plus.map_or(self.alpha_minus, |a| a.min(self.alpha_minus))
    }

    pub fn ok(&self) -> bool {
        self.alpha_hat() > 0.0
    }
}

/// Random nondecreasing profile on `grid` with range `[top - span·a, top]`
/// touching `top` at `r = 1`, or `[bottom, bottom + span·a]` touching `bottom`
/// at `r = 0`.
fn random_cone_profile(
    grid: &std::sync::Arc<RadialGrid>,
    rng: &mut ChaCha8Rng,
    anchor: f64,
    span: f64,
    anchored_at_top: bool,
) -> RadialFunction {
    let n = grid.node_count();
    let kind = rng.gen_range(0..3);
    // Nondecreasing shape in [0, 1]; kind 0 is the constant on the sphere.
    let shape: Vec<f64> = match kind {
        0 => vec![if anchored_at_top { 1.0 } else { 0.0 }; n],
        1 => {
            let breaks = rng.gen_range(1..6);
            let mut knots: Vec<(f64, f64)> = (0..breaks).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
            knots.push((0.0, 0.0));
            knots.push((1.0, 1.0));
            knots.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut ys: Vec<f64> = knots.iter().map(|k| k.1).collect();
            ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let xs: Vec<f64> = knots.iter().map(|k| k.0).collect();
            grid.nodes()
                .iter()
                .map(|&r| {
                    let j = xs.partition_point(|&x| x <= r).clamp(1, xs.len() - 1);
                    let (x0, x1) = (xs[j - 1], xs[j]);
                    let t = if x1 > x0 { ((r - x0) / (x1 - x0)).clamp(0.0, 1.0) } else { 1.0 };
                    ys[j - 1] + (ys[j] - ys[j - 1]) * t
                })
                .collect()
        }
        _ => {
            let expo = 0.2 + 6.0 * rng.gen::<f64>();
            grid.nodes().iter().map(|&r| r.powf(expo)).collect()
        }
    };
    let drop = rng.gen::<f64>();
    let values = shape
        .iter()
        .map(|&s| {
            if anchored_at_top {
                // Ends at anchor, starts somewhere in [anchor - span, anchor].
                anchor - span * drop * (1.0 - s)
            } else {
                anchor + span * drop * s
            }
        })
        .collect();
    RadialFunction::new(grid.clone(), values).expect("finite profile")
}

/// Samples the energy on the cone sphere of radius τ around `u₋` (and `u₊`).
pub fn geometry_probe(
    grid: &std::sync::Arc<RadialGrid>,
    tnl: &TruncatedNonlinearity,
    states: &ConstantStates,
    tau: f64,
    sample_count: usize,
    seed: u64,
) -> Result<GeometryReport> {
    let bound = states.tau_bound();
    if !(tau > 0.0) || tau >= bound {
        return Err(Error::Precondition(format!(
            "tau = {tau} must lie in (0, {bound}) = (0, min(u0-u-, u+-u0))"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e_minus = constant_energy(states.u_minus, tnl);
    let e_zero = constant_energy(states.u_zero, tnl);
    let e_plus = states.u_plus.map(|up| constant_energy(up, tnl));

    // Around u₋ the sphere is reached at r = 1: u(1) = u₋ + τ, u ≥ u₋.
    let mut alpha_minus = constant_energy(states.u_minus + tau, tnl) - e_minus;
    for _ in 0..sample_count {
        let u = random_cone_profile(grid, &mut rng, states.u_minus + tau, tau, true);
        alpha_minus = alpha_minus.min(energy(&u, tnl) - e_minus);
    }
    // Around u₊ the sphere is reached at r = 0: u(0) = u₊ - τ, u ≤ u₊.
    let alpha_plus = match (states.u_plus, e_plus) {
        (Some(up), Some(ep)) => {
            let mut a = constant_energy(up - tau, tnl) - ep;
            for _ in 0..sample_count {
                let u = random_cone_profile(grid, &mut rng, up - tau, tau, false);
                a = a.min(energy(&u, tnl) - ep);
            }
            Some(a)
        }
        _ => None,
    };
    let witness_t = if states.u_plus.is_none() {
        let target = e_minus - 1.0;
        (1..=200)
            .map(|k| states.u_zero * (1.0 + 0.5 * k as f64))
            .find(|&t| constant_energy(t, tnl) < target)
    } else {
        None
    };
    Ok(GeometryReport {
        tau,
        samples: sample_count,
        energy_minus: e_minus,
        energy_zero: e_zero,
        energy_plus: e_plus,
        alpha_minus,
        alpha_plus,
        witness_t,
    })
}
