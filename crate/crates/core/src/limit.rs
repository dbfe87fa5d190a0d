//! The `q → ∞` study for the pure power `f(s) = s^(q-1)`.
//!
//! As `q` grows the nonconstant solution `u_q` approaches the Dirichlet profile
//! `G` (`-Δ_p G + G^(p-1) = 0`, `G(1) = 1`), and the level `c_q` approaches
//! `c_∞ = (1/p)‖G‖_{W^{1,p}}^p`. This module runs the q-sweep with either solver
//! and collects the distances to the limit.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::energy;
use crate::error::{Error, Result};
use crate::grid::{fmt_f64, make_grid, norm_w1p, norm_w1p_pow, Grading, RadialFunction, RadialGrid};
use crate::mountain_pass::{solve_warm, MinimaxOptions};
use crate::nonlinearity::{
    base_constant_states, build_truncation, estimate_k_inf, find_constant_states, Nonlinearity,
};
use crate::operator::InnerSolveOptions;
use crate::shooting::{c_infinity_from_flux, identity_defect_hermite, shoot_dirichlet_g, shoot_neumann, variational_g, ShootResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    Minimax,
    Shooting,
    Both,
}

impl std::str::FromStr for SweepMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(Self::Minimax),
            "shooting" => Ok(Self::Shooting),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidParameter(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    /// Elements of the minimax grid.
    pub grid_n: usize,
    /// Elements of the shooting output grid and of the reference `G`.
    pub shooting_n: usize,
    /// From this `q` on, solves use the boundary-refined grid and warm starts.
    pub refine_from_q: f64,
    /// Independent rows in parallel; disables warm starts.
    pub parallel: bool,
    pub holder_pairs: usize,
    pub holder_mu: f64,
    pub seed: u64,
    pub minimax: MinimaxOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            grid_n: 512,
            shooting_n: 2048,
            refine_from_q: 40.0,
            parallel: false,
            holder_pairs: 512,
            holder_mu: 0.5,
            seed: 0,
            minimax: MinimaxOptions::default(),
        }
    }
}

/// One q of the sweep. Failed solves carry `NaN` values and the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub q: f64,
    pub c_q: f64,
    pub u0_val: f64,
    pub u1_val: f64,
    pub sup_dist_g: f64,
    pub norm_w1p: f64,
    pub identity_defect: f64,
    /// `‖u_minimax - u_shooting‖_∞` when both solvers ran.
    pub cross_check: Option<f64>,
    /// `max|u_q| + max|u_q'|`.
    pub c1_bound: f64,
    /// Discrete Hölder quotient of `u_q - G`.
    pub holder_gap: f64,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(q: f64, err: &Error) -> Self {
        Self {
            q,
            c_q: f64::NAN,
            u0_val: f64::NAN,
            u1_val: f64::NAN,
            sup_dist_g: f64::NAN,
            norm_w1p: f64::NAN,
            identity_defect: f64::NAN,
            cross_check: None,
            c1_bound: f64::NAN,
            holder_gap: f64::NAN,
            error: Some(err.to_string()),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// `c_∞` by three routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CInfinity {
    /// Richardson extrapolation of the two variational values.
    pub value: f64,
    pub variational_coarse: f64,
    pub variational_fine: f64,
    pub coarse_n: usize,
    pub fine_n: usize,
    /// `w(1)/p` from the shot `G`.
    pub shooting: f64,
    /// `1/(pN)`, the level of the constant competitor `1`.
    pub constant_bound: f64,
}

impl CInfinity {
    pub fn grid_consistency(&self) -> f64 {
        (self.variational_fine - self.variational_coarse).abs()
    }
}

/// `(1/p)‖G‖^p` on uniform grids of 1024 and 2048 elements, extrapolated with
/// the observed second order, and the shooting value for comparison.
pub fn compute_c_infinity(p: f64, dim: usize) -> Result<CInfinity> {
    let opts = InnerSolveOptions::default();
    let level = |n: usize| -> Result<f64> {
        let grid = make_grid(n, dim, Grading::Uniform)?;
        Ok(norm_w1p_pow(&variational_g(p, &grid, &opts)?, p) / p)
    };
    let (coarse_n, fine_n) = (1024, 2048);
    let coarse = level(coarse_n)?;
    let fine = level(fine_n)?;
    let shot = shoot_dirichlet_g(p, &make_grid(fine_n, dim, Grading::Uniform)?)?;
    Ok(CInfinity {
        value: (4.0 * fine - coarse) / 3.0,
        variational_coarse: coarse,
        variational_fine: fine,
        coarse_n,
        fine_n,
        shooting: c_infinity_from_flux(&shot),
        constant_bound: 1.0 / (p * dim as f64),
    })
}

/// Largest `|e(r_i) - e(r_j)| / |r_i - r_j|^μ` over seeded random node pairs.
pub fn holder_quotient(e: &RadialFunction, mu: f64, pairs: usize, seed: u64) -> f64 {
    let nodes = e.grid().nodes();
    let v = e.values();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let i = rng.gen_range(0..nodes.len());
        let mut j = rng.gen_range(0..nodes.len() - 1);
        if j >= i {
            j += 1;
        }
        best = best.max((v[i] - v[j]).abs() / (nodes[i] - nodes[j]).abs().powf(mu));
    }
    best
}

/// `‖u - g‖_∞` over the nodes of both profiles.
fn sup_distance_union(u: &RadialFunction, g: &RadialFunction) -> f64 {
    let a = u
        .grid()
        .nodes()
        .iter()
        .zip(u.values())
        .map(|(&r, &x)| (x - g.value_at(r)).abs())
        .fold(0.0, f64::max);
    let b = g
        .grid()
        .nodes()
        .iter()
        .zip(g.values())
        .map(|(&r, &x)| (u.value_at(r) - x).abs())
        .fold(0.0, f64::max);
    a.max(b)
}

fn c1_bound(u: &RadialFunction) -> f64 {
    let du = u.derivatives().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    u.values().iter().fold(0.0f64, |m, x| m.max(x.abs())) + du
}

/// Rows of the sweep together with the reference profile and the profiles.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub p: f64,
    pub dim: usize,
    pub method: SweepMethod,
    pub rows: Vec<SweepRow>,
    pub profiles: Vec<Option<RadialFunction>>,
    pub g: ShootResult,
    pub g_prime_at_1: f64,
    pub c_inf: CInfinity,
}

impl SweepOutput {
    pub fn g_norm_w1p(&self) -> f64 {
        norm_w1p(&self.g.profile, self.p).unwrap_or(f64::NAN)
    }
}

fn validate_q_list(p: f64, q_list: &[f64]) -> Result<()> {
    if q_list.is_empty() {
        return Err(Error::InvalidParameter("empty q list".into()));
    }
    if let Some(q) = q_list.iter().find(|&&q| !(q > p) || !q.is_finite()) {
        return Err(Error::InvalidParameter(format!("q = {q} must exceed p = {p}")));
    }
    if q_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("q list must be increasing".into()));
    }
    Ok(())
}

struct Solved {
    profile: RadialFunction,
    c: f64,
    identity_defect: f64,
}

fn grid_for(q: f64, n: usize, dim: usize, opts: &SweepOptions) -> Result<Arc<RadialGrid>> {
    let grading = if q >= opts.refine_from_q {
        Grading::BoundaryRefined
    } else {
        Grading::Uniform
    };
    make_grid(n, dim, grading)
}

fn solve_minimax(p: f64, q: f64, dim: usize, opts: &SweepOptions, warm: Option<&RadialFunction>) -> Result<Solved> {
    let nl = Nonlinearity::pure_power(p, q)?;
    let grid = grid_for(q, opts.grid_n, dim, opts)?;
    let (rep, _) = solve_warm(&nl, &grid, &opts.minimax, warm)?;
    if !rep.accepted() {
        return Err(Error::Minimax(format!("certificates failed: {:?}", rep.certificates)));
    }
    Ok(Solved {
        c: rep.c,
        identity_defect: rep.identity_defect,
        profile: rep.u_star,
    })
}

fn solve_shooting(p: f64, q: f64, dim: usize, opts: &SweepOptions) -> Result<Solved> {
    let nl = Nonlinearity::pure_power(p, q)?;
    let k_inf = estimate_k_inf(&base_constant_states(&nl, 1e6)?);
    let tnl = build_truncation(&nl, k_inf, dim)?;
    let states = find_constant_states(&tnl)?;
    let grid = grid_for(q, opts.shooting_n, dim, opts)?;
    let res = shoot_neumann(&tnl, &states[0], &grid)?;
    Ok(Solved {
        c: energy(&res.profile, &tnl),
        identity_defect: identity_defect_hermite(&res, &tnl),
        profile: res.profile,
    })
}

fn make_row(q: f64, s: &Solved, g: &RadialFunction, p: f64, cross: Option<f64>, opts: &SweepOptions) -> SweepRow {
    let v = s.profile.values();
    let gap = s.profile.lincomb(1.0, &g.resample(s.profile.grid().clone()), -1.0);
    SweepRow {
        q,
        c_q: s.c,
        u0_val: v[0],
        u1_val: *v.last().unwrap(),
        sup_dist_g: sup_distance_union(&s.profile, g),
        norm_w1p: norm_w1p(&s.profile, p).unwrap_or(f64::NAN),
        identity_defect: s.identity_defect,
        cross_check: cross,
        c1_bound: c1_bound(&s.profile),
        holder_gap: holder_quotient(&gap, opts.holder_mu, opts.holder_pairs, opts.seed),
        error: None,
    }
}

fn run_one(
    p: f64,
    q: f64,
    dim: usize,
    method: SweepMethod,
    g: &RadialFunction,
    opts: &SweepOptions,
    warm: Option<&RadialFunction>,
) -> (SweepRow, Option<RadialFunction>) {
    let result = match method {
        SweepMethod::Minimax => solve_minimax(p, q, dim, opts, warm).map(|s| (s, None)),
        SweepMethod::Shooting => solve_shooting(p, q, dim, opts).map(|s| (s, None)),
        SweepMethod::Both => solve_minimax(p, q, dim, opts, warm).and_then(|m| {
            let s = solve_shooting(p, q, dim, opts)?;
            let d = sup_distance_union(&m.profile, &s.profile);
            Ok((m, Some(d)))
        }),
    };
    match result {
        Ok((s, cross)) => (make_row(q, &s, g, p, cross, opts), Some(s.profile)),
        Err(e) => (SweepRow::failed(q, &e), None),
    }
}

/// Solves for every `q` in `q_list`; per-q failures are recorded in the rows.
pub fn run_q_sweep(p: f64, dim: usize, q_list: &[f64], method: SweepMethod, opts: &SweepOptions) -> Result<SweepOutput> {
    if !(p >= 2.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be >= 2")));
    }
    validate_q_list(p, q_list)?;
    let g = shoot_dirichlet_g(p, &make_grid(opts.shooting_n, dim, Grading::Uniform)?)?;
    let g_prime_at_1 = *g.derivatives().last().unwrap();
    let c_inf = compute_c_infinity(p, dim)?;
    let results: Vec<(SweepRow, Option<RadialFunction>)> = if opts.parallel {
        q_list
            .par_iter()
            .map(|&q| run_one(p, q, dim, method, &g.profile, opts, None))
            .collect()
    } else {
        let mut out: Vec<(SweepRow, Option<RadialFunction>)> = Vec::with_capacity(q_list.len());
        for &q in q_list {
            let warm = if q >= opts.refine_from_q {
                out.last().and_then(|(_, u)| u.clone())
            } else {
                None
            };
            out.push(run_one(p, q, dim, method, &g.profile, opts, warm.as_ref()));
        }
        out
    };
    let (rows, profiles) = results.into_iter().unzip();
    Ok(SweepOutput {
        p,
        dim,
        method,
        rows,
        profiles,
        g,
        g_prime_at_1,
        c_inf,
    })
}

/// Per-q distances to the limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub q: f64,
    pub c_gap: f64,
    pub norm_gap: f64,
    pub sup_dist_g: f64,
    pub holder_gap: f64,
}

/// Least-squares slopes of `ln(gap)` against `ln(q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRates {
    pub c_gap: Option<f64>,
    pub norm_gap: Option<f64>,
    pub sup_dist_g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub c_inf: f64,
    pub g_norm_w1p: f64,
    pub rows: Vec<ConvergenceRow>,
    pub rates: DecayRates,
    pub sup_dist_decreasing: bool,
    pub c_gap_decreasing: bool,
    pub norm_gap_decreasing: bool,
    /// `sup_dist_G` of the first row over that of the last.
    pub sup_dist_reduction: f64,
    pub all_rows_straddle_one: bool,
    pub all_identities_ok: bool,
    pub g_prime_at_1: f64,
    /// `|u_q'(1) - G'(1)| = G'(1)`, since `u_q'(1) = 0`.
    pub boundary_derivative_gap: f64,
    pub c1_bound_max: f64,
    /// Names of the diagnostics that are not strictly decreasing.
    pub non_monotone: Vec<String>,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fit_rate(q: &[f64], gap: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = q
        .iter()
        .zip(gap)
        .filter(|(_, g)| **g > 0.0 && g.is_finite())
        .map(|(q, g)| (q.ln(), g.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Distances to the limit over the successful rows; needs at least three.
pub fn convergence_report(out: &SweepOutput) -> Result<ConvergenceReport> {
    let ok: Vec<&SweepRow> = out.rows.iter().filter(|r| r.ok()).collect();
    if ok.len() < 3 {
        return Err(Error::Precondition(format!(
            "convergence report needs at least 3 successful rows, got {}",
            ok.len()
        )));
    }
    let c_inf = out.c_inf.value;
    let g_norm = out.g_norm_w1p();
    let rows: Vec<ConvergenceRow> = ok
        .iter()
        .map(|r| ConvergenceRow {
            q: r.q,
            c_gap: (r.c_q - c_inf).abs(),
            norm_gap: (r.norm_w1p - g_norm).abs(),
            sup_dist_g: r.sup_dist_g,
            holder_gap: r.holder_gap,
        })
        .collect();
    let col = |f: fn(&ConvergenceRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let (qs, c_gap, norm_gap, sup) = (col(|r| r.q), col(|r| r.c_gap), col(|r| r.norm_gap), col(|r| r.sup_dist_g));
    let mut non_monotone = Vec::new();
    for (name, v) in [("sup_dist_G", &sup), ("c_gap", &c_gap), ("norm_gap", &norm_gap)] {
        if !strictly_decreasing(v) {
            non_monotone.push(name.to_string());
        }
    }
    Ok(ConvergenceReport {
        c_inf,
        g_norm_w1p: g_norm,
        rates: DecayRates {
            c_gap: fit_rate(&qs, &c_gap),
            norm_gap: fit_rate(&qs, &norm_gap),
            sup_dist_g: fit_rate(&qs, &sup),
        },
        sup_dist_decreasing: strictly_decreasing(&sup),
        c_gap_decreasing: strictly_decreasing(&c_gap),
        norm_gap_decreasing: strictly_decreasing(&norm_gap),
        sup_dist_reduction: sup[0] / sup[sup.len() - 1],
        all_rows_straddle_one: ok.iter().all(|r| r.u0_val < 1.0 && r.u1_val > 1.0),
        all_identities_ok: ok.iter().all(|r| r.identity_defect.abs() < 1e-6),
        g_prime_at_1: out.g_prime_at_1,
        boundary_derivative_gap: out.g_prime_at_1.abs(),
        c1_bound_max: ok.iter().map(|r| r.c1_bound).fold(0.0, f64::max),
        non_monotone,
        rows,
    })
}

/// CSV `q,c_q,u0,u1,sup_dist_G,norm_W1p,identity_defect`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "q,c_q,u0,u1,sup_dist_G,norm_W1p,identity_defect")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(r.q),
            fmt_f64(r.c_q),
            fmt_f64(r.u0_val),
            fmt_f64(r.u1_val),
            fmt_f64(r.sup_dist_g),
            fmt_f64(r.norm_w1p),
            fmt_f64(r.identity_defect)
        )?;
    }
    Ok(())
}

/// JSON summary of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub p: f64,
    #[serde(rename = "N")]
    pub dim: usize,
    pub method: SweepMethod,
    pub q_list: Vec<f64>,
    pub c_inf: CInfinity,
    pub g_at_0: f64,
    pub g_prime_at_1: f64,
    pub rows: Vec<SweepRow>,
    /// Absent when fewer than three rows succeeded.
    pub report: Option<ConvergenceReport>,
}

impl SweepOutput {
    pub fn summary(&self) -> SweepSummary {
        SweepSummary {
            p: self.p,
            dim: self.dim,
            method: self.method,
            q_list: self.rows.iter().map(|r| r.q).collect(),
            c_inf: self.c_inf,
            g_at_0: self.g.profile.values()[0],
            g_prime_at_1: self.g_prime_at_1,
            rows: self.rows.clone(),
            report: convergence_report(self).ok(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_infinity_closed_form_p2() {
        let c = compute_c_infinity(2.0, 1).unwrap();
        let exact = 1f64.tanh() / 2.0;
        assert!((c.value - exact).abs() < 1e-9, "{c:?}");
        assert!((c.shooting - exact).abs() < 1e-8);
        assert!(c.value < c.constant_bound);
    }

    #[test]
    fn c_infinity_grid_consistent() {
        let c = compute_c_infinity(3.0, 2).unwrap();
        assert!(c.grid_consistency() < 1e-6);
        assert!((c.value - c.shooting).abs() < 1e-8);
        assert!(c.value < 1.0 / 6.0);
    }

    #[test]
    fn holder_of_linear_profile() {
        let grid = make_grid(64, 1, Grading::Uniform).unwrap();
        let u = RadialFunction::from_fn(grid, |r| r);
        let h = holder_quotient(&u, 0.5, 512, 3);
        // |r_i - r_j|^(1/2) <= 1 so the quotient is at most 1.
        assert!(h > 0.5 && h <= 1.0 + 1e-12);
        assert_eq!(h, holder_quotient(&u, 0.5, 512, 3));
    }

    #[test]
    fn fitted_rate_of_power_law() {
        let q = [5.0, 10.0, 20.0, 40.0];
        let gap: Vec<f64> = q.iter().map(|q: &f64| 3.0 * q.powf(-1.5)).collect();
        assert!((fit_rate(&q, &gap).unwrap() + 1.5).abs() < 1e-12);
    }

    #[test]
    fn q_list_validation() {
        assert!(validate_q_list(3.0, &[5.0, 10.0]).is_ok());
        assert!(validate_q_list(3.0, &[3.0, 10.0]).is_err());
        assert!(validate_q_list(3.0, &[10.0, 5.0]).is_err());
        assert!(validate_q_list(3.0, &[]).is_err());
    }

    #[test]
    fn report_needs_three_rows() {
        let opts = SweepOptions::default();
        let out = run_q_sweep(3.0, 2, &[5.0, 10.0], SweepMethod::Shooting, &opts).unwrap();
        assert!(matches!(convergence_report(&out), Err(Error::Precondition(_))));
        assert!(out.summary().report.is_none());
        assert!(out.rows.iter().all(|r| r.u0_val < 1.0 && r.u1_val > 1.0));
    }
}
