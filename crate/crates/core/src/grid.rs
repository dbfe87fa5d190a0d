//! Radial discretization of the unit ball.
//!
//! A [`RadialGrid`] partitions `[0, 1]` into elements and carries a Gauss–Legendre
//! rule for integrals against the radial weight `r^(N-1)`. The angular surface
//! factor of the ball is dropped everywhere, so every integral in this crate is
//! the one-dimensional weighted value `∫_0^1 r^(N-1) g(r) dr`.
//!
//! A [`RadialFunction`] is a continuous piecewise-linear profile on a grid. The
//! cone of nonnegative nondecreasing profiles is tested with [`is_in_cone`] and
//! projected onto with [`project_cone`] (weighted isotonic regression).

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node placement for [`make_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grading {
    Uniform,
    /// Nodes cluster towards `r = 1`, where boundary layers form.
    BoundaryRefined,
}

impl std::str::FromStr for Grading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Grading::Uniform),
            "boundary-refined" | "boundary_refined" => Ok(Grading::BoundaryRefined),
            other => Err(Error::InvalidParameter(format!("unknown grading '{other}'"))),
        }
    }
}

/// Exponent of the boundary-refined map `r = 1 - (1 - ξ)^γ`.
const REFINEMENT_EXPONENT: f64 = 1.5;

/// Gauss–Legendre points and weights on `[0, 1]`.
pub fn gauss_legendre_unit(k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1);
    let mut xs = vec![0.0; k];
    let mut ws = vec![0.0; k];
    let kf = k as f64;
    for i in 0..k.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // Legendre recurrence for P_k(x) and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=k {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = kf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = 0.5 * (1.0 - x);
        xs[k - 1 - i] = 0.5 * (1.0 + x);
        ws[i] = 0.5 * w;
        ws[k - 1 - i] = 0.5 * w;
    }
    (xs, ws)
}

/// Partition of `[0, 1]` with per-element quadrature for the weight `r^(N-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    dim: usize,
    /// Local coordinates of the quadrature points in `[0, 1]`.
    ref_points: Vec<f64>,
    /// Radii of all quadrature points, element-major.
    qp_r: Vec<f64>,
    /// Quadrature weights including `h_e` and `r^(N-1)`, element-major.
    qp_w: Vec<f64>,
    /// `∫_e r^(N-1) dr` per element.
    elem_mass: Vec<f64>,
    /// Lumped node weights `∫ r^(N-1) φ_i dr`.
    node_weights: Vec<f64>,
}

impl RadialGrid {
    /// Builds a grid from explicit nodes `0 = r_0 < … < r_n = 1`.
    pub fn from_nodes(nodes: Vec<f64>, dim: usize) -> Result<Self> {
        if dim < 1 {
            return Err(Error::InvalidParameter("dimension N must be >= 1".into()));
        }
        if nodes.len() < 2 {
            return Err(Error::InvalidParameter("a grid needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter("grid must span [0, 1]".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("grid nodes must be strictly increasing".into()));
        }
        // Exact for polynomials of degree <= N + 3 on every element.
        let k = 4usize.max((dim + 4).div_ceil(2));
        let (ref_points, ref_weights) = gauss_legendre_unit(k);
        let n_elem = nodes.len() - 1;
        let mut qp_r = Vec::with_capacity(n_elem * k);
        let mut qp_w = Vec::with_capacity(n_elem * k);
        let mut elem_mass = Vec::with_capacity(n_elem);
        let mut node_weights = vec![0.0; nodes.len()];
        let nm1 = (dim - 1) as i32;
        for e in 0..n_elem {
            let (a, b) = (nodes[e], nodes[e + 1]);
            let h = b - a;
            let mut mass = 0.0;
            for (&xi, &wr) in ref_points.iter().zip(&ref_weights) {
                let r = a + xi * h;
                let w = wr * h * r.powi(nm1);
                qp_r.push(r);
                qp_w.push(w);
                mass += w;
                node_weights[e] += w * (1.0 - xi);
                node_weights[e + 1] += w * xi;
            }
            elem_mass.push(mass);
        }
        Ok(Self {
            nodes,
            dim,
            ref_points,
            qp_r,
            qp_w,
            elem_mass,
            node_weights,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn element_length(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    /// `∫_e r^(N-1) dr` for element `e`.
    pub fn element_mass(&self, e: usize) -> f64 {
        self.elem_mass[e]
    }

    /// Lumped weights `w_i = ∫ r^(N-1) φ_i dr` of the nodal hat functions.
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// Quadrature points per element.
    pub fn points_per_element(&self) -> usize {
        self.ref_points.len()
    }

    pub(crate) fn ref_points(&self) -> &[f64] {
        &self.ref_points
    }

    /// Radii of all quadrature points, element by element.
    pub fn qp_radii(&self) -> &[f64] {
        &self.qp_r
    }

    pub(crate) fn qp_weights(&self) -> &[f64] {
        &self.qp_w
    }

    /// Width of the dual (control) cell around node `i`.
    pub fn dual_width(&self, i: usize) -> f64 {
        let n = self.element_count();
        let left = if i > 0 { self.element_length(i - 1) } else { 0.0 };
        let right = if i < n { self.element_length(i) } else { 0.0 };
        0.5 * (left + right)
    }

    /// `∫_0^1 r^(N-1) g(r) dr` by the element quadrature.
    pub fn integrate<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.qp_r
            .iter()
            .zip(&self.qp_w)
            .map(|(&r, &w)| w * g(r))
            .sum()
    }

    /// Integral of the piecewise-linear interpolant of nodal values.
    pub fn integrate_nodal(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.node_count());
        let k = self.points_per_element();
        let mut sum = 0.0;
        for e in 0..self.element_count() {
            let (a, b) = (values[e], values[e + 1]);
            for q in 0..k {
                let xi = self.ref_points[q];
                sum += self.qp_w[e * k + q] * (a + (b - a) * xi);
            }
        }
        sum
    }

    /// Integral of values given directly at the quadrature points.
    pub fn integrate_qp(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.qp_w.len());
        values.iter().zip(&self.qp_w).map(|(v, w)| v * w).sum()
    }

    /// Index of the element containing `r` (clamped to `[0, 1]`).
    pub fn locate(&self, r: f64) -> usize {
        let n = self.element_count();
        match self.nodes.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 1),
        }
    }
}

/// Builds a grid with `n` elements in dimension `dim`.
pub fn make_grid(n: usize, dim: usize, grading: Grading) -> Result<Arc<RadialGrid>> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!("element count {n} < 4")));
    }
    if dim < 1 {
        return Err(Error::InvalidParameter("dimension N must be >= 1".into()));
    }
    let nodes = (0..=n)
        .map(|i| {
            if i == n {
                return 1.0;
            }
            let xi = i as f64 / n as f64;
            match grading {
                Grading::Uniform => xi,
                Grading::BoundaryRefined => 1.0 - (1.0 - xi).powf(REFINEMENT_EXPONENT),
            }
        })
        .collect();
    Ok(Arc::new(RadialGrid::from_nodes(nodes, dim)?))
}

/// Continuous piecewise-linear radial profile.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialFunction {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl RadialFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidParameter(format!(
                "{} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("profile values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    /// Samples `g` at the nodes.
    pub fn from_fn<F: Fn(f64) -> f64>(grid: Arc<RadialGrid>, g: F) -> Self {
        let values = grid.nodes().iter().map(|&r| g(r)).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Arc<RadialGrid>, c: f64) -> Self {
        let values = vec![c; grid.node_count()];
        Self { grid, values }
    }

    /// Trusted constructor for internal callers that keep lengths consistent.
    pub(crate) fn from_parts(grid: Arc<RadialGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Piecewise-constant derivative on element `e`.
    pub fn derivative(&self, e: usize) -> f64 {
        (self.values[e + 1] - self.values[e]) / self.grid.element_length(e)
    }

    pub fn derivatives(&self) -> Vec<f64> {
        (0..self.grid.element_count()).map(|e| self.derivative(e)).collect()
    }

    /// Values of the interpolant at all quadrature points, element-major.
    pub fn qp_values(&self) -> Vec<f64> {
        let k = self.grid.points_per_element();
        let mut out = Vec::with_capacity(self.grid.element_count() * k);
        for e in 0..self.grid.element_count() {
            let (a, b) = (self.values[e], self.values[e + 1]);
            for &xi in self.grid.ref_points() {
                out.push(a + (b - a) * xi);
            }
        }
        out
    }

    /// Interpolated value at radius `r`.
    pub fn value_at(&self, r: f64) -> f64 {
        let e = self.grid.locate(r);
        let nodes = self.grid.nodes();
        let t = ((r - nodes[e]) / (nodes[e + 1] - nodes[e])).clamp(0.0, 1.0);
        self.values[e] + (self.values[e + 1] - self.values[e]) * t
    }

    /// Interpolates this profile onto another grid.
    pub fn resample(&self, grid: Arc<RadialGrid>) -> Self {
        let values = grid.nodes().iter().map(|&r| self.value_at(r)).collect();
        Self { grid, values }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `max u - min u`.
    pub fn oscillation(&self) -> f64 {
        self.max_value() - self.min_value()
    }

    pub fn sup_distance(&self, other: &RadialFunction) -> f64 {
        assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `a·self + b·other` on the same grid.
    pub fn lincomb(&self, a: f64, other: &RadialFunction, b: f64) -> RadialFunction {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Self::from_parts(self.grid.clone(), values)
    }

    pub fn scaled(&self, t: f64) -> RadialFunction {
        Self::from_parts(self.grid.clone(), self.values.iter().map(|v| t * v).collect())
    }

    /// Weighted discrete L² norm `sqrt(Σ w_i u_i²)` with lumped node weights.
    pub fn weighted_l2(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.node_weights())
            .map(|(v, w)| w * v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn weighted_l2_distance(&self, other: &RadialFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(self.grid.node_weights())
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Writes the `r,u` CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "r,u")?;
        for (r, u) in self.grid.nodes().iter().zip(&self.values) {
            writeln!(out, "{},{}", fmt_f64(*r), fmt_f64(*u))?;
        }
        Ok(())
    }

    /// Writes a gnuplot-ready two-column `.dat` file.
    pub fn write_dat<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (r, u) in self.grid.nodes().iter().zip(&self.values) {
            writeln!(out, "{} {}", fmt_f64(*r), fmt_f64(*u))?;
        }
        Ok(())
    }

    /// Reads an `r,u` CSV produced by [`RadialFunction::write_csv`].
    pub fn read_csv<R: BufRead>(input: R, dim: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "r" || &headers[1] != "u" {
            return Err(Error::InvalidParameter("expected header 'r,u'".into()));
        }
        let mut rs = Vec::new();
        let mut us = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidParameter(format!("bad number '{s}': {e}")))
            };
            rs.push(parse(&record[0])?);
            us.push(parse(&record[1])?);
        }
        let grid = Arc::new(RadialGrid::from_nodes(rs, dim)?);
        Self::new(grid, us)
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Numerical slack for cone membership.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeTolerance {
    pub nonneg_tol: f64,
    pub monotone_tol: f64,
}

impl Default for ConeTolerance {
    fn default() -> Self {
        Self {
            nonneg_tol: 1e-12,
            monotone_tol: 1e-12,
        }
    }
}

impl ConeTolerance {
    pub fn new(nonneg_tol: f64, monotone_tol: f64) -> Result<Self> {
        let ok = |t: f64| t.is_finite() && t >= 0.0;
        if !ok(nonneg_tol) || !ok(monotone_tol) {
            return Err(Error::InvalidParameter("cone tolerances must be finite and >= 0".into()));
        }
        Ok(Self {
            nonneg_tol,
            monotone_tol,
        })
    }

    pub fn exact() -> Self {
        Self {
            nonneg_tol: 0.0,
            monotone_tol: 0.0,
        }
    }
}

/// `(∫ r^(N-1) (|u'|^p + |u|^p) dr)^(1/p)`.
pub fn norm_w1p(u: &RadialFunction, p: f64) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(Error::InvalidParameter(format!("norm exponent p = {p} < 2")));
    }
    Ok(norm_w1p_pow(u, p).powf(1.0 / p))
}

/// `∫ r^(N-1) (|u'|^p + |u|^p) dr`, the p-th power of [`norm_w1p`].
pub fn norm_w1p_pow(u: &RadialFunction, p: f64) -> f64 {
    let grid = u.grid();
    let grad: f64 = (0..grid.element_count())
        .map(|e| grid.element_mass(e) * u.derivative(e).abs().powf(p))
        .sum();
    let qp = u.qp_values();
    let val: f64 = qp
        .iter()
        .zip(grid.qp_weights())
        .map(|(v, w)| w * v.abs().powf(p))
        .sum();
    grad + val
}

/// `(∫ r^(N-1) |u|^p dr)^(1/p)`.
pub fn norm_lp(u: &RadialFunction, p: f64) -> f64 {
    let qp = u.qp_values();
    qp.iter()
        .zip(u.grid().qp_weights())
        .map(|(v, w)| w * v.abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Membership in the cone of nonnegative nondecreasing profiles.
pub fn is_in_cone(u: &RadialFunction, tol: ConeTolerance) -> bool {
    u.min_value() >= -tol.nonneg_tol
        && u.values().windows(2).all(|w| w[1] - w[0] >= -tol.monotone_tol)
}

/// Largest decrease between consecutive nodes (0 for nondecreasing profiles).
pub fn monotonicity_violation(u: &RadialFunction) -> f64 {
    u.values()
        .windows(2)
        .map(|w| (w[0] - w[1]).max(0.0))
        .fold(0.0, f64::max)
}

/// Weighted least-squares nondecreasing fit (pool adjacent violators).
pub fn isotonic_regression(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // Blocks of (weighted mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = (v, w, 1usize);
        while let Some(&(pv, pw, pl)) = blocks.last() {
            if pv <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = pw + cur.1;
            let mean = if tw > 0.0 {
                (pv * pw + cur.0 * cur.1) / tw
            } else {
                0.5 * (pv + cur.0)
            };
            cur = (mean, tw, pl + cur.2);
        }
        blocks.push(cur);
    }
    let mut out = Vec::with_capacity(values.len());
    for (v, _, len) in blocks {
        out.extend(std::iter::repeat_n(v, len));
    }
    out
}

/// Nearest nondecreasing profile in the lumped weighted L² metric, clamped
/// below at `lower`. Profiles already in the cone are returned unchanged.
pub fn project_cone(u: &RadialFunction, lower: f64) -> RadialFunction {
    project_cone_box(u, lower, f64::INFINITY)
}

/// [`project_cone`] with an additional upper clamp. Clamping a nondecreasing
/// sequence keeps it nondecreasing.
pub fn project_cone_box(u: &RadialFunction, lower: f64, upper: f64) -> RadialFunction {
    let monotone = u.values().windows(2).all(|w| w[1] >= w[0]);
    let in_box = u.min_value() >= lower && u.max_value() <= upper;
    if monotone && in_box {
        return u.clone();
    }
    let fitted = if monotone {
        u.values().to_vec()
    } else {
        isotonic_regression(u.values(), u.grid().node_weights())
    };
    let values = fitted.into_iter().map(|v| v.clamp(lower, upper)).collect();
    RadialFunction::from_parts(u.grid().clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize, dim: usize) -> Arc<RadialGrid> {
        make_grid(n, dim, Grading::Uniform).unwrap()
    }

    #[test]
    fn uniform_nodes() {
        let g = uniform(4, 1);
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(matches!(make_grid(3, 1, Grading::Uniform), Err(Error::InvalidParameter(_))));
        assert!(matches!(make_grid(8, 0, Grading::Uniform), Err(Error::InvalidParameter(_))));
        assert!(RadialGrid::from_nodes(vec![0.0, 0.5, 0.5, 1.0], 1).is_err());
    }

    #[test]
    fn refined_grid_shrinks_towards_boundary() {
        let g = make_grid(64, 3, Grading::BoundaryRefined).unwrap();
        assert!(g.element_length(63) < g.element_length(0));
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(*g.nodes().last().unwrap(), 1.0);
    }

    #[test]
    fn quadrature_examples() {
        assert!((uniform(4, 2).integrate(|_| 1.0) - 0.5).abs() < 1e-15);
        assert!((uniform(4, 1).integrate(|r| r) - 0.5).abs() < 1e-15);
        assert!((uniform(4, 2).integrate(|r| r * r) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn quadrature_exact_for_low_degree_on_refined_grids() {
        for dim in 1..=5 {
            let g = make_grid(7, dim, Grading::BoundaryRefined).unwrap();
            for deg in 0..=4 {
                let exact = 1.0 / (deg + dim) as f64;
                let got = g.integrate(|r| r.powi(deg as i32));
                assert!((got - exact).abs() < 1e-14, "N={dim} deg={deg}");
            }
        }
    }

    #[test]
    fn gauss_legendre_weights_sum_to_one() {
        for k in 1..8 {
            let (x, w) = gauss_legendre_unit(k);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(x.windows(2).all(|p| p[1] > p[0]));
        }
    }

    #[test]
    fn norm_examples() {
        let g = uniform(16, 2);
        let one = RadialFunction::constant(g, 1.0);
        assert!((norm_w1p(&one, 3.0).unwrap() - 0.5f64.powf(1.0 / 3.0)).abs() < 1e-14);

        let g = uniform(16, 1);
        let lin = RadialFunction::from_fn(g.clone(), |r| r);
        assert!((norm_w1p(&lin, 2.0).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-14);

        let zero = RadialFunction::constant(g, 0.0);
        assert_eq!(norm_w1p(&zero, 3.0).unwrap(), 0.0);
        assert!(norm_w1p(&zero, 1.5).is_err());
    }

    #[test]
    fn cone_membership_examples() {
        let g = uniform(8, 2);
        assert!(is_in_cone(&RadialFunction::from_fn(g.clone(), |r| r), ConeTolerance::default()));
        assert!(!is_in_cone(
            &RadialFunction::from_fn(g.clone(), |r| 1.0 - r),
            ConeTolerance::default()
        ));
        assert!(is_in_cone(&RadialFunction::constant(g, -1e-15), ConeTolerance::default()));
    }

    #[test]
    fn projection_examples() {
        let g = uniform(8, 3);
        let inc = RadialFunction::from_fn(g.clone(), |r| r * r + 0.1);
        assert_eq!(project_cone(&inc, 0.0), inc);

        let g2 = Arc::new(RadialGrid::from_nodes(vec![0.0, 1.0], 1).unwrap());
        let u = RadialFunction::new(g2, vec![2.0, 1.0]).unwrap();
        let proj = project_cone(&u, 0.0);
        assert!(proj.values().iter().all(|v| (v - 1.5).abs() < 1e-15));

        let neg = RadialFunction::constant(g, -3.0);
        assert!(project_cone(&neg, 0.0).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let g = make_grid(10, 2, Grading::BoundaryRefined).unwrap();
        let u = RadialFunction::from_fn(g, |r| (1.0 + r).ln() / 3.0);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("r,u\n"));
        let back = RadialFunction::read_csv(&buf[..], 2).unwrap();
        assert_eq!(back.values(), u.values());
        assert_eq!(back.grid().nodes(), u.grid().nodes());
    }

    #[test]
    fn value_at_interpolates() {
        let g = uniform(4, 1);
        let u = RadialFunction::from_fn(g, |r| 2.0 * r + 1.0);
        assert!((u.value_at(0.3) - 1.6).abs() < 1e-15);
        assert_eq!(u.value_at(1.0), 3.0);
        assert_eq!(u.value_at(0.0), 1.0);
    }
}
