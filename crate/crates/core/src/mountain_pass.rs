//! Discrete minimax over paths in the restricted cone.
//!
//! A path of profiles joins a neighbourhood of `u₋` to the region beyond the
//! barrier. Each sweep moves every interior node along `-(u - K(u))` with
//! backtracking and cone projection, then redistributes the nodes by arc
//! length. Once the path level stagnates, the highest point of the path is
//! polished by Newton's method on the weak gradient.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{
    constant_energy, dual_norm, energy, energy_report, geometry_probe, gradient, hessian, phi_p, EnergyReport,
    GeometryReport,
};
use crate::error::{Error, Result};
use crate::grid::{fmt_f64, is_in_cone, project_cone_box, ConeTolerance, RadialFunction, RadialGrid};
use crate::nonlinearity::{
    base_constant_states, build_truncation, estimate_k_inf, find_constant_states, grow_k_inf, ConstantStates,
    Nonlinearity, TruncatedNonlinearity, MAX_K_INF_DOUBLINGS,
};
use crate::operator::{pseudo_gradient_k, InnerSolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimaxOptions {
    /// Barrier radius; `None` means half of `min(u₀-u₋, u₊-u₀)`.
    pub tau: Option<f64>,
    /// Number of path segments (`m`); the path has `m + 1` nodes.
    pub path_nodes: usize,
    /// Largest relaxation factor σ of a descent step.
    pub step0: f64,
    pub grad_tol: f64,
    /// Level change over 20 sweeps that counts as stagnation.
    pub stall_tol: f64,
    pub max_outer: usize,
    /// `s̄ / u₀` for the initial path direction.
    pub s_bar_factor: f64,
    pub geometry_samples: usize,
    pub seed: u64,
    /// Which restricted cone to work in when several exist.
    pub cone_index: usize,
    pub inner: InnerSolveOptions,
}

impl Default for MinimaxOptions {
    fn default() -> Self {
        Self {
            tau: None,
            path_nodes: 32,
            step0: 1.0,
            grad_tol: 1e-8,
            stall_tol: 1e-9,
            max_outer: 3000,
            s_bar_factor: 0.1,
            geometry_samples: 200,
            seed: 0,
            cone_index: 0,
            inner: InnerSolveOptions::default(),
        }
    }
}

impl MinimaxOptions {
    pub fn resolved_tau(&self, states: &ConstantStates) -> f64 {
        self.tau.unwrap_or(0.5 * states.tau_bound())
    }

    pub fn validate(&self, states: &ConstantStates) -> Result<()> {
        let tau = self.resolved_tau(states);
        if !(tau > 0.0 && tau < states.tau_bound()) {
            return Err(Error::InvalidParameter(format!(
                "tau = {tau} must lie in (0, {})",
                states.tau_bound()
            )));
        }
        if self.path_nodes < 8 {
            return Err(Error::InvalidParameter("path needs at least 8 segments".into()));
        }
        if !(self.step0 > 0.0 && self.step0 <= 1.0) || !(self.grad_tol > 0.0) || !(self.stall_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid minimax options {self:?}")));
        }
        self.inner.validate()
    }
}

/// `v(r) = r - N/(N+1)`: nondecreasing with zero weighted mean.
pub fn direction_v(grid: &Arc<RadialGrid>) -> RadialFunction {
    let n = grid.dim() as f64;
    RadialFunction::from_fn(grid.clone(), |r| r - n / (n + 1.0))
}

/// Discrete admissible path.
#[derive(Debug, Clone)]
pub struct Path {
    pub nodes: Vec<RadialFunction>,
    pub energies: Vec<f64>,
    /// Current relaxation factor per node.
    steps: Vec<f64>,
    pub t_minus: f64,
    pub t_plus: f64,
    pub s_bar: f64,
    pub start_in_u_minus: bool,
    pub end_in_u_plus: bool,
}

impl Path {
    pub fn max_index(&self) -> usize {
        let mut best = 0;
        for (i, e) in self.energies.iter().enumerate() {
            if *e > self.energies[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_energy(&self) -> f64 {
        self.energies[self.max_index()]
    }
}

/// Pointwise bounds of the restricted cone.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Box1 {
    lower: f64,
    upper: f64,
}

impl Box1 {
    fn new(states: &ConstantStates, tnl: &TruncatedNonlinearity) -> Self {
        Self {
            lower: states.u_minus,
            upper: states.u_plus_or_inf().min(tnl.k_inf()),
        }
    }

    fn project(&self, u: &RadialFunction) -> RadialFunction {
        project_cone_box(u, self.lower, self.upper)
    }

    fn contains(&self, u: &RadialFunction, tol: f64) -> bool {
        u.min_value() >= self.lower - tol && u.max_value() <= self.upper + tol
    }
}

/// Endpoint predicates: `U₋ = {‖u-u₋‖ < τ, Ĩ(u) < Ĩ(u₋) + α̂/2}` and, for an
/// unbounded cone, `U₊ = {‖u-u₋‖ > τ, Ĩ(u) < Ĩ(u₋)}`; for a bounded cone `U₊`
/// mirrors `U₋` around `u₊`.
fn in_u_minus(u: &RadialFunction, e: f64, states: &ConstantStates, geo: &GeometryReport) -> bool {
    (u.max_value() - states.u_minus) < geo.tau
        && u.min_value() >= states.u_minus - 1e-12
        && e < geo.energy_minus + 0.5 * geo.alpha_hat()
}

fn in_u_plus(u: &RadialFunction, e: f64, states: &ConstantStates, geo: &GeometryReport) -> bool {
    match (states.u_plus, geo.energy_plus) {
        (Some(up), Some(ep)) => {
            (up - u.min_value()) < geo.tau && u.max_value() <= up + 1e-12 && e < ep + 0.5 * geo.alpha_hat()
        }
        _ => (u.max_value() - states.u_minus) > geo.tau && e < geo.energy_minus,
    }
}

/// The path `t ↦ ((1-t)t₋ + t t₊)(u₀ + s̄v)` projected into the restricted cone.
/// With `warm`, that profile replaces `u₀ + s̄v` as the ray direction.
pub fn initial_path(
    grid: &Arc<RadialGrid>,
    tnl: &TruncatedNonlinearity,
    states: &ConstantStates,
    geo: &GeometryReport,
    opts: &MinimaxOptions,
    warm: Option<&RadialFunction>,
) -> Result<Path> {
    let bx = Box1::new(states, tnl);
    let v = direction_v(grid);
    let u0 = states.u_zero;
    let mut s_bar = opts.s_bar_factor * u0;
    let n = grid.dim() as f64;
    // Keep u₀ + s̄v strictly inside the box.
    for _ in 0..60 {
        let lo = u0 - s_bar * n / (n + 1.0);
        let hi = u0 + s_bar / (n + 1.0);
        if lo > bx.lower && hi < bx.upper {
            break;
        }
        s_bar *= 0.5;
    }
    let base = match warm {
        Some(w) => bx.project(&w.resample(grid.clone())),
        None => v.scaled(s_bar).lincomb(1.0, &RadialFunction::constant(grid.clone(), u0), 1.0),
    };
    let at = |t: f64| bx.project(&base.scaled(t));

    let mut t_minus = None;
    let mut t = 1.0;
    for _ in 0..400 {
        t *= 0.95;
        let u = at(t);
        if in_u_minus(&u, energy(&u, tnl), states, geo) {
            t_minus = Some(t);
            break;
        }
    }
    let t_minus = t_minus.ok_or_else(|| Error::Geometry("no path start found in U-".into()))?;

    let t_cap = bx.upper / base.min_value().max(f64::MIN_POSITIVE);
    let mut t_plus = None;
    for k in 1..=400 {
        let t = 1.0 + (t_cap - 1.0) * k as f64 / 400.0;
        let u = at(t);
        if in_u_plus(&u, energy(&u, tnl), states, geo) {
            t_plus = Some(t);
            break;
        }
    }
    let t_plus = t_plus.ok_or_else(|| {
        Error::Geometry(format!(
            "no path end found in U+ below the cap {} (K_inf = {})",
            bx.upper,
            tnl.k_inf()
        ))
    })?;

    let m = opts.path_nodes;
    let nodes: Vec<RadialFunction> = (0..=m)
        .map(|j| {
            let s = j as f64 / m as f64;
            at((1.0 - s) * t_minus + s * t_plus)
        })
        .collect();
    let energies: Vec<f64> = nodes.iter().map(|u| energy(u, tnl)).collect();
    let start_in_u_minus = in_u_minus(&nodes[0], energies[0], states, geo);
    let end_in_u_plus = in_u_plus(&nodes[m], energies[m], states, geo);
    Ok(Path {
        nodes,
        energies,
        steps: vec![opts.step0; m + 1],
        t_minus,
        t_plus,
        s_bar,
        start_in_u_minus,
        end_in_u_plus,
    })
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub sweep: usize,
    /// Highest node energy after the sweep.
    pub c: f64,
    /// Gradient norm at the highest node.
    pub grad_norm: f64,
    pub max_index: usize,
    /// True when no node accepted a step.
    pub stalled: bool,
}

/// Unit tangent `(u_{j+1} - u_{j-1})/‖·‖` in the lumped weighted inner product.
fn unit_tangent(prev: &RadialFunction, next: &RadialFunction) -> Option<Vec<f64>> {
    let d: Vec<f64> = next.values().iter().zip(prev.values()).map(|(a, b)| a - b).collect();
    let norm = weighted_dot(&d, &d, prev.grid().node_weights()).sqrt();
    (norm > 0.0).then(|| d.iter().map(|x| x / norm).collect())
}

fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| w * x * y).sum()
}

/// Relaxed step `u ← P(u - σ d)` with `d = u - K(u)` stripped of its
/// component along the path tangent, backtracking on the energy.
#[allow(clippy::too_many_arguments)]
fn relax_node(
    u: &RadialFunction,
    e: f64,
    sigma0: f64,
    tangent: Option<&[f64]>,
    max_move: f64,
    tnl: &TruncatedNonlinearity,
    bx: Box1,
    opts: &MinimaxOptions,
) -> Result<(RadialFunction, f64, f64, bool)> {
    let ku = pseudo_gradient_k(u, tnl, &opts.inner)?;
    let mut d: Vec<f64> = u.values().iter().zip(ku.values()).map(|(a, b)| a - b).collect();
    if let Some(t) = tangent {
        let c = weighted_dot(&d, t, u.grid().node_weights());
        for (di, ti) in d.iter_mut().zip(t) {
            *di -= c * ti;
        }
    }
    let grid = u.grid().clone();
    // Trust region: a node may not travel further than its neighbours are apart.
    let d_norm = weighted_dot(&d, &d, grid.node_weights()).sqrt();
    let mut sigma = if d_norm * sigma0 > max_move { max_move / d_norm } else { sigma0 };
    for _ in 0..40 {
        let moved = RadialFunction::new(
            grid.clone(),
            u.values().iter().zip(&d).map(|(a, b)| a - sigma * b).collect(),
        )?;
        let trial = bx.project(&moved);
        let et = energy(&trial, tnl);
        if et <= e {
            let next = (2.0 * sigma).min(opts.step0);
            return Ok((trial, et, next, true));
        }
        sigma *= 0.5;
    }
    Ok((u.clone(), e, sigma0 * 0.5, false))
}

/// Redistributes interior nodes to equal weighted-L² arc length.
fn reparametrize(nodes: &[RadialFunction]) -> Vec<RadialFunction> {
    let m = nodes.len() - 1;
    let mut arc = vec![0.0; m + 1];
    for j in 1..=m {
        arc[j] = arc[j - 1] + nodes[j].weighted_l2_distance(&nodes[j - 1]);
    }
    let total = arc[m];
    if !(total > 0.0) {
        return nodes.to_vec();
    }
    let mut out = Vec::with_capacity(m + 1);
    out.push(nodes[0].clone());
    let mut seg = 1;
    for j in 1..m {
        let target = total * j as f64 / m as f64;
        while seg < m && arc[seg] < target {
            seg += 1;
        }
        let len = arc[seg] - arc[seg - 1];
        let s = if len > 0.0 { ((target - arc[seg - 1]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(nodes[seg - 1].lincomb(1.0 - s, &nodes[seg], s));
    }
    out.push(nodes[m].clone());
    out
}

/// Largest node move per sweep relative to the distance to its nearest neighbour.
const TRUST_FRACTION: f64 = 0.5;

/// Fraction of the gap between the path level and the higher endpoint energy
/// that defines the band of nodes updated in a sweep.
const BAND_FRACTION: f64 = 0.5;

/// One outer sweep of the discrete deformation.
pub fn descend(path: &Path, tnl: &TruncatedNonlinearity, states: &ConstantStates, opts: &MinimaxOptions) -> Result<(Path, SweepStats)> {
    let bx = Box1::new(states, tnl);
    let m = path.nodes.len() - 1;
    let top = path.max_energy();
    // Only the upper band of the path is deformed; nodes far below the level do
    // not affect the max and moving them only stretches the path into the basins.
    let floor = path.energies[0].max(path.energies[m]);
    let band = top - BAND_FRACTION * (top - floor);
    let updated: Vec<Result<(RadialFunction, f64, f64, bool)>> = (1..m)
        .into_par_iter()
        .map(|j| {
            if path.energies[j] < band {
                return Ok((path.nodes[j].clone(), path.energies[j], path.steps[j], false));
            }
            let tangent = unit_tangent(&path.nodes[j - 1], &path.nodes[j + 1]);
            let tangent = tangent.as_deref();
            let spacing = path.nodes[j]
                .weighted_l2_distance(&path.nodes[j - 1])
                .min(path.nodes[j].weighted_l2_distance(&path.nodes[j + 1]));
            let max_move = TRUST_FRACTION * spacing.max(1e-12);
            let (mut u, mut e, mut s, mut moved) =
                relax_node(&path.nodes[j], path.energies[j], path.steps[j], tangent, max_move, tnl, bx, opts)?;
            // Extra work on the nodes that carry the path level.
            if path.energies[j] >= top - 1e-14 * (1.0 + top.abs()) {
                for _ in 0..3 {
                    let (u2, e2, s2, ok) = relax_node(&u, e, s, tangent, max_move, tnl, bx, opts)?;
                    u = u2;
                    e = e2;
                    s = s2;
                    moved |= ok;
                }
            }
            Ok((u, e, s, moved))
        })
        .collect();
    let mut nodes = Vec::with_capacity(m + 1);
    let mut energies = Vec::with_capacity(m + 1);
    let mut steps = Vec::with_capacity(m + 1);
    nodes.push(path.nodes[0].clone());
    energies.push(path.energies[0]);
    steps.push(path.steps[0]);
    let mut any_moved = false;
    for r in updated {
        let (u, e, s, moved) = r?;
        any_moved |= moved;
        nodes.push(u);
        energies.push(e);
        steps.push(s);
    }
    nodes.push(path.nodes[m].clone());
    energies.push(path.energies[m]);
    steps.push(path.steps[m]);

    let descended_max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let reparam = reparametrize(&nodes);
    let re_energies: Vec<f64> = reparam.par_iter().map(|u| energy(u, tnl)).collect();
    let re_max = re_energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Keep the monotone level: only accept a redistribution that does not raise it.
    let (nodes, energies) = if re_max <= descended_max {
        (reparam, re_energies)
    } else {
        (nodes, energies)
    };
    let next = Path {
        nodes,
        energies,
        steps,
        ..path.clone()
    };
    let mi = next.max_index();
    let stats = SweepStats {
        sweep: 0,
        c: next.energies[mi],
        grad_norm: dual_norm(&gradient(&next.nodes[mi], tnl), next.nodes[mi].grid()),
        max_index: mi,
        stalled: !any_moved,
    };
    Ok((next, stats))
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Highest point of the polyline through the nodes around index `j`.
fn polyline_peak(path: &Path, j: usize, tnl: &TruncatedNonlinearity) -> RadialFunction {
    let m = path.nodes.len() - 1;
    let lo = j.saturating_sub(1) as f64;
    let hi = (j + 1).min(m) as f64;
    let at = |s: f64| {
        let i = (s.floor() as usize).min(m - 1);
        let t = s - i as f64;
        path.nodes[i].lincomb(1.0 - t, &path.nodes[i + 1], t)
    };
    let s = golden_max(|s| energy(&at(s), tnl), lo, hi, 1e-6);
    at(s)
}

/// Deflation factor `Π_c (1/‖u - c‖² + 1)` over known constant critical points.
fn deflation(u: &RadialFunction, known: &[f64]) -> f64 {
    known
        .iter()
        .map(|&c| {
            let d2: f64 = u.values().iter().zip(u.grid().node_weights()).map(|(v, w)| w * (v - c) * (v - c)).sum();
            1.0 / d2 + 1.0
        })
        .product()
}

/// `∇M·δ / M` for the deflation factor.
fn deflation_slope(u: &RadialFunction, known: &[f64], delta: &[f64]) -> f64 {
    known
        .iter()
        .map(|&c| {
            let w = u.grid().node_weights();
            let d2: f64 = u.values().iter().zip(w).map(|(v, w)| w * (v - c) * (v - c)).sum();
            let dot: f64 = u.values().iter().zip(w).zip(delta).map(|((v, w), d)| w * (v - c) * d).sum();
            (-2.0 * dot / (d2 * d2)) / (1.0 / d2 + 1.0)
        })
        .sum()
}

/// Newton's method on `G(u) = 0`, deflated away from the constant critical
/// points in `known`, with backtracking on the deflated residual norm.
///
/// Iterates until the gradient norm drops below `target`; when the line search
/// stalls at roundoff, the iterate is returned if it is below `accept`.
pub fn newton_polish(
    start: &RadialFunction,
    tnl: &TruncatedNonlinearity,
    known: &[f64],
    target: f64,
    accept: f64,
    max_iters: usize,
) -> Result<(RadialFunction, usize)> {
    let grid = start.grid().clone();
    let mut u = start.clone();
    let mut g = gradient(&u, tnl);
    let mut norm = dual_norm(&g, &grid);
    let mut merit = deflation(&u, known) * norm;
    let fail = |it: usize, norm: f64, u: RadialFunction| Error::NonConvergence {
        iterations: it,
        grad_norm: norm,
        last_iterate: u.into_values(),
    };
    for it in 0..max_iters {
        if norm < target {
            return Ok((u, it));
        }
        let h = hessian(&u, tnl);
        let mut step = h.solve(&g.iter().map(|x| -x).collect::<Vec<_>>())?;
        let beta = 1.0 / (1.0 - deflation_slope(&u, known, &step));
        if beta.is_finite() && beta > 0.0 {
            step.iter_mut().for_each(|x| *x *= beta);
        }
        let mut sigma = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let vals: Vec<f64> = u.values().iter().zip(&step).map(|(a, b)| a + sigma * b).collect();
            if let Ok(trial) = RadialFunction::new(grid.clone(), vals) {
                let gt = gradient(&trial, tnl);
                let nt = dual_norm(&gt, &grid);
                let mt = deflation(&trial, known) * nt;
                if mt.is_finite() && (mt <= (1.0 - 1e-4 * sigma) * merit || nt < target) {
                    u = trial;
                    g = gt;
                    norm = nt;
                    merit = mt;
                    improved = true;
                    break;
                }
            }
            sigma *= 0.5;
        }
        if !improved {
            return if norm < accept { Ok((u, it)) } else { Err(fail(it, norm, u)) };
        }
    }
    if norm < accept {
        Ok((u, max_iters))
    } else {
        Err(fail(max_iters, norm, u))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub nonconstant: bool,
    pub below_u0_level: bool,
    pub identity_ok: bool,
    pub in_cone: bool,
    pub a_priori_ok: bool,
}

impl Certificates {
    pub fn all(&self) -> bool {
        self.nonconstant && self.below_u0_level && self.identity_ok && self.in_cone && self.a_priori_ok
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u_star: RadialFunction,
    pub c: f64,
    pub energy_report: EnergyReport,
    pub iterations: usize,
    pub newton_iterations: usize,
    pub certificates: Certificates,
    /// Path level after the last sweep.
    pub path_level: f64,
    /// Highest node energy after every sweep, starting with the initial path.
    pub level_history: Vec<f64>,
    pub trace: Vec<SweepStats>,
    pub states: ConstantStates,
    pub geometry: GeometryReport,
    pub k_inf: f64,
    pub energy_u0: f64,
    /// `∫ r^(N-1)(f̃(u*) - m u*^(p-1)) dr`.
    pub identity_defect: f64,
    pub min_value: f64,
    pub oscillation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub c: f64,
    pub energy_u0: f64,
    pub path_level: f64,
    pub iterations: usize,
    pub newton_iterations: usize,
    pub energy_report: EnergyReport,
    pub certificates: Certificates,
    pub accepted: bool,
    pub u_at_0: f64,
    pub u_at_1: f64,
    pub min_value: f64,
    pub positive: bool,
    pub oscillation: f64,
    pub identity_defect: f64,
    pub k_inf: f64,
    pub states: ConstantStates,
    pub geometry: GeometryReport,
}

impl SolveReport {
    pub fn accepted(&self) -> bool {
        self.certificates.all()
    }

    pub fn summary(&self) -> SolveSummary {
        let v = self.u_star.values();
        SolveSummary {
            c: self.c,
            energy_u0: self.energy_u0,
            path_level: self.path_level,
            iterations: self.iterations,
            newton_iterations: self.newton_iterations,
            energy_report: self.energy_report,
            certificates: self.certificates,
            accepted: self.accepted(),
            u_at_0: v[0],
            u_at_1: *v.last().unwrap(),
            min_value: self.min_value,
            positive: self.min_value > 0.0,
            oscillation: self.oscillation,
            identity_defect: self.identity_defect,
            k_inf: self.k_inf,
            states: self.states,
            geometry: self.geometry.clone(),
        }
    }

    pub fn write_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sweep,c,grad_norm")?;
        for s in &self.trace {
            writeln!(out, "{},{},{}", s.sweep, fmt_f64(s.c), fmt_f64(s.grad_norm))?;
        }
        Ok(())
    }
}

/// `∫ r^(N-1)(f̃(u) - m φ_p(u)) dr` by the element quadrature.
pub fn identity_defect(u: &RadialFunction, tnl: &TruncatedNonlinearity) -> f64 {
    let (p, m) = (tnl.p(), tnl.mass());
    let qp: Vec<f64> = u.qp_values().iter().map(|&s| tnl.f(s) - m * phi_p(s, p)).collect();
    u.grid().integrate_qp(&qp)
}

const STALL_WINDOW: usize = 20;

/// Mountain-pass solve in one restricted cone for a fixed truncation.
pub fn minimax_solve(
    grid: &Arc<RadialGrid>,
    tnl: &TruncatedNonlinearity,
    states: &ConstantStates,
    opts: &MinimaxOptions,
) -> Result<SolveReport> {
    minimax_solve_warm(grid, tnl, states, opts, None)
}

/// [`minimax_solve`] with an optional warm-start profile for the initial path.
pub fn minimax_solve_warm(
    grid: &Arc<RadialGrid>,
    tnl: &TruncatedNonlinearity,
    states: &ConstantStates,
    opts: &MinimaxOptions,
    warm: Option<&RadialFunction>,
) -> Result<SolveReport> {
    opts.validate(states)?;
    let tau = opts.resolved_tau(states);
    let geo = geometry_probe(grid, tnl, states, tau, opts.geometry_samples, opts.seed)?;
    if !geo.ok() {
        return Err(Error::Geometry(format!(
            "sampled barrier height {} is not positive",
            geo.alpha_hat()
        )));
    }
    let mut path = initial_path(grid, tnl, states, &geo, opts, warm)?;
    let mut history = vec![path.max_energy()];
    let mut trace = Vec::new();
    let mut last_polish = 0usize;
    let mut last_error: Option<Error> = None;
    for sweep in 1..=opts.max_outer {
        let (next, mut stats) = descend(&path, tnl, states, opts)?;
        stats.sweep = sweep;
        path = next;
        history.push(stats.c);
        trace.push(stats);

        let converged = stats.grad_norm < opts.grad_tol;
        let stagnated = history.len() > STALL_WINDOW
            && (history[history.len() - 1 - STALL_WINDOW] - stats.c).abs() < opts.stall_tol
            && sweep >= last_polish + STALL_WINDOW;
        // Early polish attempts once the level has settled to a few digits.
        let settled = history.len() > STALL_WINDOW
            && (history[history.len() - 1 - STALL_WINDOW] - stats.c).abs() < 1e-6 * (1.0 + stats.c.abs())
            && sweep >= last_polish + 5 * STALL_WINDOW;
        if !(converged || stagnated || settled || stats.stalled) {
            continue;
        }
        last_polish = sweep;
        let start = if converged {
            path.nodes[stats.max_index].clone()
        } else {
            polyline_peak(&path, stats.max_index, tnl)
        };
        let mut known = vec![states.u_minus, states.u_zero];
        known.extend(states.u_plus);
        match newton_polish(&start, tnl, &known, opts.grad_tol * 1e-3, opts.grad_tol, 60) {
            Ok((u_star, newton_iterations)) => {
                let report = finish(grid, tnl, states, &geo, &path, history.clone(), trace.clone(), u_star, sweep, newton_iterations, opts)?;
                if report.certificates.nonconstant && report.certificates.in_cone {
                    return Ok(report);
                }
                last_error = Some(Error::Minimax("polish left the cone or collapsed to a constant".into()));
            }
            Err(e) => last_error = Some(e),
        }
    }
    Err(Error::Minimax(format!(
        "no accepted critical point after {} sweeps (level {}, last polish: {})",
        opts.max_outer,
        path.max_energy(),
        last_error.map_or_else(|| "none".to_string(), |e| e.to_string())
    )))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    grid: &Arc<RadialGrid>,
    tnl: &TruncatedNonlinearity,
    states: &ConstantStates,
    geo: &GeometryReport,
    path: &Path,
    level_history: Vec<f64>,
    trace: Vec<SweepStats>,
    u_star: RadialFunction,
    iterations: usize,
    newton_iterations: usize,
    opts: &MinimaxOptions,
) -> Result<SolveReport> {
    let _ = (grid, opts);
    let rep = energy_report(&u_star, tnl);
    let bx = Box1::new(states, tnl);
    let energy_u0 = constant_energy(states.u_zero, tnl);
    let id = identity_defect(&u_star, tnl);
    let certificates = Certificates {
        nonconstant: u_star.oscillation() > 1e-4,
        below_u0_level: rep.value < energy_u0 - 1e-8,
        identity_ok: id.abs() < 1e-6,
        in_cone: is_in_cone(&u_star, ConeTolerance::default()) && bx.contains(&u_star, 1e-12),
        a_priori_ok: u_star.max_value() <= tnl.k_inf(),
    };
    Ok(SolveReport {
        c: rep.value,
        energy_report: rep,
        iterations,
        newton_iterations,
        certificates,
        path_level: path.max_energy(),
        level_history,
        trace,
        states: *states,
        geometry: geo.clone(),
        k_inf: tnl.k_inf(),
        energy_u0,
        identity_defect: id,
        min_value: u_star.min_value(),
        oscillation: u_star.oscillation(),
        u_star,
    })
}

/// Full pipeline for a base nonlinearity: `K_∞` policy, truncation, constant
/// states and minimax, doubling `K_∞` when the solution or the path end
/// violates the bound.
pub fn solve(
    nl: &Nonlinearity,
    grid: &Arc<RadialGrid>,
    opts: &MinimaxOptions,
) -> Result<(SolveReport, TruncatedNonlinearity)> {
    solve_warm(nl, grid, opts, None)
}

/// [`solve`] with an optional warm-start profile.
pub fn solve_warm(
    nl: &Nonlinearity,
    grid: &Arc<RadialGrid>,
    opts: &MinimaxOptions,
    warm: Option<&RadialFunction>,
) -> Result<(SolveReport, TruncatedNonlinearity)> {
    let base_states = base_constant_states(nl, 1e6)?;
    let mut k_inf = estimate_k_inf(&base_states);
    let dim = grid.dim();
    let mut last: Option<Error> = None;
    for _ in 0..=MAX_K_INF_DOUBLINGS {
        let tnl = build_truncation(nl, k_inf, dim)?;
        let states = find_constant_states(&tnl)?;
        let st = *states.get(opts.cone_index).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "cone index {} out of range ({} cones)",
                opts.cone_index,
                states.len()
            ))
        })?;
        match minimax_solve_warm(grid, &tnl, &st, opts, warm) {
            Ok(rep) if rep.certificates.a_priori_ok => return Ok((rep, tnl)),
            Ok(rep) => {
                last = Some(Error::Minimax(format!(
                    "solution max {} exceeds K_inf = {k_inf}",
                    rep.u_star.max_value()
                )));
            }
            Err(Error::Geometry(msg)) if msg.contains("U+") => last = Some(Error::Geometry(msg)),
            Err(e) => return Err(e),
        }
        k_inf = grow_k_inf(k_inf);
    }
    Err(last.unwrap_or_else(|| Error::Minimax("K_inf policy exhausted".into())))
}

/// One row of the second-order energy expansion along `u₀ + s v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorRow {
    pub s: f64,
    pub t_bar: f64,
    pub measured: f64,
    pub predicted: f64,
    pub ratio: f64,
    /// `2·ratio(s) - ratio(2s)`, which cancels the first-order drift of the ratio.
    pub ratio_extrapolated: f64,
}

/// Compares `max_t Ĩ(t(u₀ + sv)) - Ĩ(u₀)` with the quadratic prediction
/// `(s²/2)∫ r^(N-1)[m(p-1)u₀^(p-2) - f̃'(u₀)] v² dr`.
pub fn taylor_certificate(
    grid: &Arc<RadialGrid>,
    tnl: &TruncatedNonlinearity,
    states: &ConstantStates,
    s_list: &[f64],
) -> Vec<TaylorRow> {
    let u0 = states.u_zero;
    let p = tnl.p();
    let v = direction_v(grid);
    let one = RadialFunction::constant(grid.clone(), u0);
    let coef = tnl.mass() * (p - 1.0) * u0.powf(p - 2.0) - tnl.f_prime(u0);
    let v2: Vec<f64> = v.qp_values().iter().map(|x| x * x).collect();
    let quad = coef * grid.integrate_qp(&v2);
    let e0 = energy(&one, tnl);
    let drop = |s: f64| -> (f64, f64) {
        if s == 0.0 {
            return (1.0, 0.0);
        }
        let w = v.scaled(s).lincomb(1.0, &one, 1.0);
        let t = golden_max(|t| energy(&w.scaled(t), tnl), 0.5, 1.5, 1e-10);
        (t, energy(&w.scaled(t), tnl) - e0)
    };
    let ratio = |measured: f64, s: f64| {
        let predicted = 0.5 * s * s * quad;
        if predicted != 0.0 { measured / predicted } else { f64::NAN }
    };
    s_list
        .iter()
        .map(|&s| {
            let (t_bar, measured) = drop(s);
            let r = ratio(measured, s);
            let r2 = ratio(drop(2.0 * s).1, 2.0 * s);
            TaylorRow {
                s,
                t_bar,
                measured,
                predicted: 0.5 * s * s * quad,
                ratio: r,
                ratio_extrapolated: 2.0 * r - r2,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::residual_strong;
    use crate::grid::{make_grid, Grading};

    fn pure(p: f64, q: f64, dim: usize) -> (TruncatedNonlinearity, ConstantStates) {
        let t = build_truncation(&Nonlinearity::pure_power(p, q).unwrap(), 2.0, dim).unwrap();
        let s = find_constant_states(&t).unwrap()[0];
        (t, s)
    }

    #[test]
    fn direction_has_zero_mean() {
        for dim in 1..=4 {
            let grid = make_grid(64, dim, Grading::Uniform).unwrap();
            let v = direction_v(&grid);
            assert!(grid.integrate_nodal(v.values()).abs() < 1e-15);
            assert!((v.values()[64] - v.values()[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn initial_path_is_admissible() {
        let (t, st) = pure(3.0, 5.0, 2);
        let grid = make_grid(128, 2, Grading::Uniform).unwrap();
        let geo = geometry_probe(&grid, &t, &st, 0.5, 100, 1).unwrap();
        let path = initial_path(&grid, &t, &st, &geo, &MinimaxOptions::default(), None).unwrap();
        assert!(path.start_in_u_minus && path.end_in_u_plus);
        assert!(path.t_minus < 1.0 && path.t_plus > 1.0);
        for u in &path.nodes {
            assert!(is_in_cone(u, ConeTolerance::default()));
            assert!(u.max_value() <= t.k_inf());
        }
    }

    #[test]
    fn critical_point_is_not_moved() {
        let (t, st) = pure(3.0, 5.0, 2);
        let grid = make_grid(64, 2, Grading::Uniform).unwrap();
        let u = RadialFunction::constant(grid, 1.0);
        let e = energy(&u, &t);
        let (next, en, _, _) = relax_node(&u, e, 1.0, None, 1.0, &t, Box1::new(&st, &t), &MinimaxOptions::default()).unwrap();
        assert!(next.sup_distance(&u) < 1e-12);
        assert!(en <= e);
    }

    #[test]
    fn reparametrization_equalizes_spacing() {
        let grid = make_grid(16, 1, Grading::Uniform).unwrap();
        let nodes: Vec<RadialFunction> = [0.0, 0.1, 0.15, 0.9, 1.0]
            .iter()
            .map(|&c| RadialFunction::constant(grid.clone(), c))
            .collect();
        let out = reparametrize(&nodes);
        for (j, u) in out.iter().enumerate() {
            assert!((u.values()[0] - 0.25 * j as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn golden_section_finds_peak() {
        let x = golden_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn pure_power_solve() {
        let (t, st) = pure(3.0, 5.0, 2);
        let grid = make_grid(256, 2, Grading::Uniform).unwrap();
        let rep = minimax_solve(&grid, &t, &st, &MinimaxOptions::default()).unwrap();
        assert!(rep.accepted(), "{:?}", rep.summary());
        let v = rep.u_star.values();
        assert!(v[0] < 1.0 && *v.last().unwrap() > 1.0);
        assert!(rep.c < 1.0 / 15.0);
        assert!(rep.energy_report.grad_norm < 1e-8);
        assert!(residual_strong(&rep.u_star, &t) < 1e-6);
        assert!(rep.level_history.windows(2).all(|w| w[1] <= w[0] + 1e-14));
        assert!(rep.geometry.energy_minus < rep.c);
    }

    #[test]
    fn taylor_zero_step() {
        let (t, st) = pure(3.0, 5.0, 1);
        let grid = make_grid(128, 1, Grading::Uniform).unwrap();
        let rows = taylor_certificate(&grid, &t, &st, &[0.0, 0.02]);
        assert_eq!(rows[0].measured, 0.0);
        assert_eq!(rows[0].t_bar, 1.0);
        // (p - q)/12 · s²/2 for N = 1.
        assert!((rows[1].predicted - (-2.0 / 12.0) * 0.5 * 0.02 * 0.02).abs() < 1e-15);
        assert!(rows[1].measured < 0.0);
    }
}
