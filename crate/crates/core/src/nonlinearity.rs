//! Right-hand sides `f`, their hypothesis audit, and the C¹ truncation used to
//! make the energy well defined for supercritical growth.
//!
//! A [`Nonlinearity`] bundles `f`, `f'` and the primitive `F` together with the
//! operator exponent `p` and a reaction coefficient `m` (the equation reads
//! `-Δ_p u + m u^(p-1) = f(u)`; `m = 1` unless [`shift_to_f0`] was applied).
//! All evaluations extend `f` to negative arguments by the constant `f(0)`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::gauss_legendre_unit;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Serializable family selector used by the CLI and config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    /// `f(s) = s^(q-1)`.
    PurePower { q: f64 },
    /// `f(s) = s^(q-1) - eps·s^(p-1)`; violates (f₀) for `eps > 0`.
    ShiftedPower { q: f64, eps: f64 },
    /// `f(s) = s^(p-1)·(1 + c·(s-z₁)(s-z₂)(s-z₃))`: three transversal
    /// crossings of `s^(p-1)`, two of them upward.
    Wells { roots: [f64; 3], strength: f64 },
    /// Monotone cubic interpolation of a tabulated `s,f` CSV starting at `s = 0`.
    CustomTable { csv: String },
}

impl FamilySpec {
    /// Parses the compact CLI form, e.g. `pure_power:5` or `wells:1,2,3,0.1`.
    pub fn parse_cli(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .filter(|a| !a.is_empty())
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidParameter(format!("bad number '{a}': {e}")))
                })
                .collect()
        };
        match name {
            "pure_power" => match nums()?.as_slice() {
                [q] => Ok(FamilySpec::PurePower { q: *q }),
                _ => Err(Error::InvalidParameter("pure_power takes one exponent q".into())),
            },
            "shifted_power" => match nums()?.as_slice() {
                [q, eps] => Ok(FamilySpec::ShiftedPower { q: *q, eps: *eps }),
                _ => Err(Error::InvalidParameter("shifted_power takes q,eps".into())),
            },
            "wells" => match nums()?.as_slice() {
                [a, b, c, k] => Ok(FamilySpec::Wells {
                    roots: [*a, *b, *c],
                    strength: *k,
                }),
                _ => Err(Error::InvalidParameter("wells takes z1,z2,z3,strength".into())),
            },
            "custom_table" if !args.is_empty() => Ok(FamilySpec::CustomTable {
                csv: args.to_string(),
            }),
            _ => Err(Error::InvalidParameter(format!("unknown nonlinearity '{s}'"))),
        }
    }

    /// Exponent `q` when this is a pure power.
    pub fn pure_power_exponent(&self) -> Option<f64> {
        match self {
            FamilySpec::PurePower { q } => Some(*q),
            _ => None,
        }
    }

    pub fn build(&self, p: f64) -> Result<Nonlinearity> {
        match self {
            FamilySpec::PurePower { q } => Nonlinearity::pure_power(p, *q),
            FamilySpec::ShiftedPower { q, eps } => Nonlinearity::shifted_power(p, *q, *eps),
            FamilySpec::Wells { roots, strength } => Nonlinearity::wells(p, *roots, *strength),
            FamilySpec::CustomTable { csv } => Nonlinearity::from_table_csv(p, csv),
        }
    }
}

/// `f`, `f'`, `F` with the operator exponent and reaction coefficient.
#[derive(Clone)]
pub struct Nonlinearity {
    f: ScalarFn,
    fp: ScalarFn,
    big_f: ScalarFn,
    p: f64,
    mass: f64,
    name: String,
    spec: Option<FamilySpec>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("p", &self.p)
            .field("mass", &self.mass)
            .finish()
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!("operator exponent p = {p} must be >= 2")));
    }
    Ok(())
}

impl Nonlinearity {
    /// Builds a nonlinearity from closures. When `big_f` is `None` the
    /// primitive is computed by Gauss–Legendre quadrature of `f`.
    pub fn custom<F, Fp>(name: &str, p: f64, f: F, fp: Fp, big_f: Option<ScalarFn>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        Fp: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_p(p)?;
        let f: ScalarFn = Arc::new(f);
        let big_f = match big_f {
            Some(g) => g,
            None => {
                let f2 = f.clone();
                Arc::new(move |s: f64| primitive_by_quadrature(&*f2, 0.0, s, &[]))
            }
        };
        Ok(Self {
            f,
            fp: Arc::new(fp),
            big_f,
            p,
            mass: 1.0,
            name: name.to_string(),
            spec: None,
        })
    }

    pub fn pure_power(p: f64, q: f64) -> Result<Self> {
        check_p(p)?;
        if !(q > p) {
            return Err(Error::InvalidParameter(format!("pure power needs q > p (q = {q}, p = {p})")));
        }
        let mut nl = Self::custom(
            &format!("pure_power(q={q})"),
            p,
            move |s| s.powf(q - 1.0),
            move |s| (q - 1.0) * s.powf(q - 2.0),
            Some(Arc::new(move |s: f64| s.powf(q) / q)),
        )?;
        nl.spec = Some(FamilySpec::PurePower { q });
        Ok(nl)
    }

    pub fn shifted_power(p: f64, q: f64, eps: f64) -> Result<Self> {
        check_p(p)?;
        if !(q > p) {
            return Err(Error::InvalidParameter(format!("shifted power needs q > p (q = {q})")));
        }
        let mut nl = Self::custom(
            &format!("shifted_power(q={q},eps={eps})"),
            p,
            move |s| s.powf(q - 1.0) - eps * s.powf(p - 1.0),
            move |s| (q - 1.0) * s.powf(q - 2.0) - eps * (p - 1.0) * s.powf(p - 2.0),
            Some(Arc::new(move |s: f64| s.powf(q) / q - eps * s.powf(p) / p)),
        )?;
        nl.spec = Some(FamilySpec::ShiftedPower { q, eps });
        Ok(nl)
    }

    pub fn wells(p: f64, roots: [f64; 3], strength: f64) -> Result<Self> {
        check_p(p)?;
        let [z1, z2, z3] = roots;
        if !(0.0 < z1 && z1 < z2 && z2 < z3) || !(strength > 0.0) {
            return Err(Error::InvalidParameter("wells needs 0 < z1 < z2 < z3 and strength > 0".into()));
        }
        // (s-z1)(s-z2)(s-z3) = s³ - e1 s² + e2 s - e3
        let e1 = z1 + z2 + z3;
        let e2 = z1 * z2 + z1 * z3 + z2 * z3;
        let e3 = z1 * z2 * z3;
        let c = strength;
        let rho = move |s: f64| 1.0 + c * (((s - e1) * s + e2) * s - e3);
        let drho = move |s: f64| c * ((3.0 * s - 2.0 * e1) * s + e2);
        let mut nl = Self::custom(
            &format!("wells(z={z1},{z2},{z3};c={c})"),
            p,
            move |s| s.powf(p - 1.0) * rho(s),
            move |s| (p - 1.0) * s.powf(p - 2.0) * rho(s) + s.powf(p - 1.0) * drho(s),
            Some(Arc::new(move |s: f64| {
                (1.0 - c * e3) * s.powf(p) / p + c * e2 * s.powf(p + 1.0) / (p + 1.0)
                    - c * e1 * s.powf(p + 2.0) / (p + 2.0)
                    + c * s.powf(p + 3.0) / (p + 3.0)
            })),
        )?;
        nl.spec = Some(FamilySpec::Wells { roots, strength });
        Ok(nl)
    }

    /// Monotone cubic (Fritsch–Carlson) interpolation of `(s, f)` samples.
    pub fn from_table(p: f64, name: &str, s: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        let table = Arc::new(MonotoneCubic::new(s, f)?);
        let (t1, t2, t3) = (table.clone(), table.clone(), table);
        Self::custom(
            name,
            p,
            move |x| t1.value(x),
            move |x| t2.derivative(x),
            Some(Arc::new(move |x: f64| t3.primitive(x))),
        )
    }

    /// Reads a two-column `s,f` CSV (with header) and interpolates it.
    pub fn from_table_csv(p: f64, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let mut s = Vec::new();
        let mut f = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::InvalidParameter("table rows need two columns".into()));
            }
            let parse = |t: &str| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidParameter(format!("bad number '{t}': {e}")))
            };
            s.push(parse(&record[0])?);
            f.push(parse(&record[1])?);
        }
        let mut nl = Self::from_table(p, &format!("custom_table({})", path.display()), s, f)?;
        nl.spec = Some(FamilySpec::CustomTable {
            csv: path.display().to_string(),
        });
        Ok(nl)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Reaction coefficient `m` in `-Δ_p u + m u^(p-1) = f(u)`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> Option<&FamilySpec> {
        self.spec.as_ref()
    }

    pub fn f(&self, s: f64) -> f64 {
        if s < 0.0 {
            (self.f)(0.0)
        } else {
            (self.f)(s)
        }
    }

    pub fn f_prime(&self, s: f64) -> f64 {
        if s < 0.0 {
            0.0
        } else {
            (self.fp)(s)
        }
    }

    /// Primitive with `F(0) = 0`.
    pub fn big_f(&self, s: f64) -> f64 {
        if s < 0.0 {
            (self.f)(0.0) * s
        } else {
            (self.big_f)(s)
        }
    }

    /// `f(s) - m s^(p-1)`; its zeros are the constant solutions.
    pub fn balance(&self, s: f64) -> f64 {
        self.f(s) - self.mass * s.max(0.0).powf(self.p - 1.0)
    }

    /// Largest relative central-difference defect of `F' = f` and `(f)' = f'`
    /// on `[0, 10]`, each scaled by `1 + |reference|`.
    pub fn consistency_defect(&self) -> f64 {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 1..=1000 {
            let s = 0.01 * i as f64;
            let df = (self.big_f(s + h) - self.big_f(s - h)) / (2.0 * h);
            let dfp = (self.f(s + h) - self.f(s - h)) / (2.0 * h);
            worst = worst.max((df - self.f(s)).abs() / (1.0 + self.f(s).abs()));
            worst = worst.max((dfp - self.f_prime(s)).abs() / (1.0 + self.f_prime(s).abs()));
        }
        worst
    }
}

/// `∫_a^b f` by composite 8-point Gauss–Legendre with optional breakpoints.
fn primitive_by_quadrature(f: &dyn Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64]) -> f64 {
    if b == a {
        return 0.0;
    }
    let (lo, hi, sign) = if b > a { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts = vec![lo];
    cuts.extend(breaks.iter().copied().filter(|&x| x > lo && x < hi));
    cuts.push(hi);
    let (xs, ws) = gauss_legendre_unit(8);
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let (s0, s1) = (seg[0], seg[1]);
        // Geometric panels when the segment spans decades, uniform otherwise.
        let geometric = s0 > 0.0 && s1 / s0 > 4.0;
        let panels = 32;
        for k in 0..panels {
            let (a0, a1) = if geometric {
                let ratio = (s1 / s0).ln() / panels as f64;
                (s0 * (ratio * k as f64).exp(), s0 * (ratio * (k + 1) as f64).exp())
            } else {
                let w = (s1 - s0) / panels as f64;
                (s0 + w * k as f64, s0 + w * (k + 1) as f64)
            };
            let h = a1 - a0;
            total += xs.iter().zip(&ws).map(|(x, w)| w * h * f(a0 + x * h)).sum::<f64>();
        }
    }
    sign * total
}

/// Piecewise cubic Hermite interpolant with Fritsch–Carlson slopes.
#[derive(Debug, Clone)]
struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
    /// Cumulative integral at each knot.
    cum: Vec<f64>,
    /// Power-law continuation exponent beyond the last knot.
    tail_exp: f64,
}

impl MonotoneCubic {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::InvalidParameter("table needs at least 3 matching rows".into()));
        }
        if x[0] != 0.0 || x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("table abscissae must start at 0 and increase".into()));
        }
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut d = vec![0.0; n];
        d[0] = delta[0];
        d[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            d[i] = if delta[i - 1] * delta[i] <= 0.0 {
                0.0
            } else {
                let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
                let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
                (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i])
            };
        }
        for i in 0..n - 1 {
            if delta[i] == 0.0 {
                d[i] = 0.0;
                d[i + 1] = 0.0;
            }
        }
        let mut cum = vec![0.0; n];
        for i in 0..n - 1 {
            let h = x[i + 1] - x[i];
            // Exact integral of the Hermite cubic over a full interval.
            cum[i + 1] = cum[i] + h * (y[i] + y[i + 1]) / 2.0 + h * h * (d[i] - d[i + 1]) / 12.0;
        }
        let (yn, dn, xn) = (y[n - 1], d[n - 1], x[n - 1]);
        let tail_exp = if yn > 0.0 { (xn * dn / yn).max(0.0) } else { 0.0 };
        Ok(Self { x, y, d, cum, tail_exp })
    }

    fn segment(&self, s: f64) -> usize {
        match self.x.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.x.len() - 2),
        }
    }

    fn value(&self, s: f64) -> f64 {
        let n = self.x.len();
        if s >= self.x[n - 1] {
            return self.y[n - 1] * (s / self.x[n - 1]).powf(self.tail_exp);
        }
        let i = self.segment(s);
        let h = self.x[i + 1] - self.x[i];
        let t = (s - self.x[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.y[i]
            + (t3 - 2.0 * t2 + t) * h * self.d[i]
            + (-2.0 * t3 + 3.0 * t2) * self.y[i + 1]
            + (t3 - t2) * h * self.d[i + 1]
    }

    fn derivative(&self, s: f64) -> f64 {
        let n = self.x.len();
        if s >= self.x[n - 1] {
            let xn = self.x[n - 1];
            return self.y[n - 1] * self.tail_exp * (s / xn).powf(self.tail_exp - 1.0) / xn;
        }
        let i = self.segment(s);
        let h = self.x[i + 1] - self.x[i];
        let t = (s - self.x[i]) / h;
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * self.y[i]
            + (3.0 * t2 - 4.0 * t + 1.0) * h * self.d[i]
            + (-6.0 * t2 + 6.0 * t) * self.y[i + 1]
            + (3.0 * t2 - 2.0 * t) * h * self.d[i + 1])
            / h
    }

    fn primitive(&self, s: f64) -> f64 {
        let n = self.x.len();
        if s >= self.x[n - 1] {
            let (xn, yn, k) = (self.x[n - 1], self.y[n - 1], self.tail_exp);
            return self.cum[n - 1] + yn * xn / (k + 1.0) * ((s / xn).powf(k + 1.0) - 1.0);
        }
        let i = self.segment(s);
        let h = self.x[i + 1] - self.x[i];
        let t = (s - self.x[i]) / h;
        let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
        self.cum[i]
            + h * ((t4 / 2.0 - t3 + t) * self.y[i]
                + (t4 / 4.0 - 2.0 * t3 / 3.0 + t2 / 2.0) * h * self.d[i]
                + (-t4 / 2.0 + t3) * self.y[i + 1]
                + (t4 / 4.0 - t3 / 3.0) * h * self.d[i + 1])
    }
}

/// Outcome of a numeric hypothesis audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Audit {
    Pass,
    Fail,
    Inconclusive,
}

/// A located zero of `f(s) - m s^(p-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub s: f64,
    /// `f'(s) - m (p-1) s^(p-2)`; positive means the crossing is transversal upwards.
    pub margin: f64,
}

impl Intersection {
    pub fn satisfies_f3(&self) -> bool {
        self.margin > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub f0: Audit,
    pub f1: Audit,
    pub f2: Audit,
    pub f3: Audit,
    /// `f(s)/(m s^(p-1))` at the smallest sample.
    pub f1_limit: f64,
    /// Smallest ratio over the top decade of samples.
    pub f2_liminf: f64,
    pub intersections: Vec<Intersection>,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        [self.f0, self.f1, self.f2, self.f3].iter().all(|a| *a == Audit::Pass)
    }
}

/// Log-spaced samples on `[lo, hi]`, `per_decade` per factor of ten.
fn log_samples(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let count = (decades * per_decade as f64).ceil() as usize;
    (0..=count)
        .map(|i| lo * 10f64.powf(decades * i as f64 / count as f64))
        .collect()
}

/// Audits (f₀)–(f₃) on log-spaced samples `s ∈ [1e-8, 1e8]`.
pub fn check_hypotheses(nl: &Nonlinearity) -> HypothesisReport {
    let p = nl.p();
    let m = nl.mass();
    let samples = log_samples(1e-8, 1e8, 100);

    let mut f0 = if nl.f(0.0) >= 0.0 { Audit::Pass } else { Audit::Fail };
    for &s in &samples {
        let (f, fp) = (nl.f(s), nl.f_prime(s));
        if f.is_nan() || fp.is_nan() {
            f0 = Audit::Inconclusive;
        } else if f < 0.0 || fp < 0.0 {
            f0 = Audit::Fail;
            break;
        }
    }

    let ratio = |s: f64| nl.f(s) / (m * s.powf(p - 1.0));
    let r_small = [ratio(1e-8), ratio(1e-7), ratio(1e-6)];
    let f1 = if r_small.iter().any(|r| !r.is_finite()) {
        Audit::Inconclusive
    } else if r_small.iter().all(|&r| (0.0..1.0).contains(&r)) {
        Audit::Pass
    } else if r_small.iter().all(|&r| !(0.0..1.0).contains(&r)) {
        Audit::Fail
    } else {
        Audit::Inconclusive
    };

    let top: Vec<f64> = samples.iter().filter(|&&s| s >= 1e7).map(|&s| ratio(s)).collect();
    let liminf = top.iter().copied().fold(f64::INFINITY, f64::min);
    let f2 = if top.iter().any(|r| r.is_nan()) {
        Audit::Inconclusive
    } else if liminf > 1.0 {
        Audit::Pass
    } else {
        Audit::Fail
    };

    let intersections = locate_intersections(
        &|s| nl.balance(s),
        &|s| nl.f_prime(s) - m * (p - 1.0) * s.powf(p - 2.0),
        &samples,
    );
    let f3 = if intersections.iter().any(Intersection::satisfies_f3) {
        Audit::Pass
    } else {
        Audit::Fail
    };

    HypothesisReport {
        f0,
        f1,
        f2,
        f3,
        f1_limit: r_small[0],
        f2_liminf: liminf,
        intersections,
    }
}

/// Brackets sign changes of `h` over `samples` and refines them by bisection
/// followed by a guarded Newton polish.
fn locate_intersections(
    h: &dyn Fn(f64) -> f64,
    dh: &dyn Fn(f64) -> f64,
    samples: &[f64],
) -> Vec<Intersection> {
    let mut out = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for &s in samples {
        let v = h(s);
        if !v.is_finite() {
            prev = None;
            continue;
        }
        if v == 0.0 {
            out.push(Intersection { s, margin: dh(s) });
            prev = None;
            continue;
        }
        if let Some((s0, v0)) = prev {
            if v0 * v < 0.0 {
                let z = bisect_root(h, s0, s, v0);
                out.push(Intersection { s: z, margin: dh(z) });
            }
        }
        prev = Some((s, v));
    }
    out
}

fn bisect_root(h: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, mut ha: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let hm = h(mid);
        if hm == 0.0 {
            return mid;
        }
        if ha * hm < 0.0 {
            b = mid;
        } else {
            a = mid;
            ha = hm;
        }
    }
    let z = 0.5 * (a + b);
    // Secant polish inside the final bracket.
    let (hz, hb) = (h(z), h(b));
    let (ha2, _) = (h(a), ());
    let cand = if hb != ha2 { a - ha2 * (b - a) / (hb - ha2) } else { z };
    if cand >= a && cand <= b && h(cand).abs() < hz.abs() {
        cand
    } else {
        z
    }
}

/// Returns `(g, m)` with `g = f + (m-1) s^(p-1)` satisfying (f₀) on the audit
/// grid. The returned nonlinearity carries reaction coefficient `m`, so the
/// equation it encodes is unchanged.
pub fn shift_to_f0(nl: &Nonlinearity) -> Result<(Nonlinearity, f64)> {
    let p = nl.p();
    if nl.f(0.0) < 0.0 {
        return Err(Error::UnsupportedNonlinearity(
            "f(0) < 0 cannot be repaired by adding a multiple of s^(p-1)".into(),
        ));
    }
    let samples = log_samples(1e-8, 1e8, 100);
    let need = |s: f64| -> f64 {
        let a = -nl.f(s) / s.powf(p - 1.0);
        let b = -nl.f_prime(s) / ((p - 1.0) * s.powf(p - 2.0));
        a.max(b)
    };
    let mut required: f64 = 0.0;
    for &s in &samples {
        let r = need(s);
        if r.is_nan() {
            return Err(Error::UnsupportedNonlinearity(format!("f or f' undefined at s = {s}")));
        }
        if r.is_finite() {
            required = required.max(r);
        }
    }
    if required <= 0.0 {
        return Ok((nl.clone(), 1.0));
    }
    // An unbounded requirement grows as s → 0; a bounded one has levelled off.
    let (r6, r8) = (need(1e-6), need(1e-8));
    if r8 > 1.5 * r6.max(f64::MIN_POSITIVE) && r8 >= required {
        return Err(Error::UnsupportedNonlinearity(
            "no finite m makes f + (m-1)s^(p-1) nonnegative and nondecreasing".into(),
        ));
    }
    let shift = required;
    let m = 1.0 + shift;
    let (f, fp, big_f) = (nl.f.clone(), nl.fp.clone(), nl.big_f.clone());
    let g = Nonlinearity {
        f: Arc::new(move |s| f(s) + shift * s.powf(p - 1.0)),
        fp: Arc::new(move |s| fp(s) + shift * (p - 1.0) * s.powf(p - 2.0)),
        big_f: Arc::new(move |s| big_f(s) + shift * s.powf(p) / p),
        p,
        mass: nl.mass() + shift,
        name: format!("{}+{shift}·s^(p-1)", nl.name()),
        spec: None,
    };
    Ok((g, m))
}

/// Constant states bounding one restricted cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantStates {
    pub u_minus: f64,
    pub u_zero: f64,
    /// `None` encodes `+∞`.
    pub u_plus: Option<f64>,
    /// `f'(u₀) - m (p-1) u₀^(p-2)`.
    pub f3_margin: f64,
}

impl ConstantStates {
    pub fn u_plus_or_inf(&self) -> f64 {
        self.u_plus.unwrap_or(f64::INFINITY)
    }

    /// Admissible range for the geometry radius τ: `min(u₀-u₋, u₊-u₀)`.
    pub fn tau_bound(&self) -> f64 {
        (self.u_zero - self.u_minus).min(self.u_plus_or_inf() - self.u_zero)
    }
}

fn states_from_intersections(roots: &[Intersection]) -> Vec<ConstantStates> {
    let positives: Vec<f64> = roots.iter().map(|r| r.s).collect();
    roots
        .iter()
        .filter(|r| r.satisfies_f3())
        .map(|r| {
            let u_minus = positives.iter().copied().filter(|&s| s < r.s).fold(0.0, f64::max);
            let u_plus = positives.iter().copied().filter(|&s| s > r.s).reduce(f64::min);
            ConstantStates {
                u_minus,
                u_zero: r.s,
                u_plus,
                f3_margin: r.margin,
            }
        })
        .collect()
}

/// Constant states of the untruncated nonlinearity below `search_max`.
pub fn base_constant_states(nl: &Nonlinearity, search_max: f64) -> Result<Vec<ConstantStates>> {
    let (p, m) = (nl.p(), nl.mass());
    let roots = locate_intersections(
        &|s| nl.balance(s),
        &|s| nl.f_prime(s) - m * (p - 1.0) * s.powf(p - 2.0),
        &log_samples(1e-8, search_max, 200),
    );
    let states = states_from_intersections(&roots);
    if states.is_empty() {
        return Err(Error::InvalidNonlinearity(
            "no transversal upward crossing of m·s^(p-1) (hypothesis f3)".into(),
        ));
    }
    Ok(states)
}

/// Initial a priori bound: `max(1, 2u₀, 2u₊)` over all finite states.
pub fn estimate_k_inf(states: &[ConstantStates]) -> f64 {
    states.iter().fold(1.0f64, |k, s| {
        let k = k.max(2.0 * s.u_zero);
        match s.u_plus {
            Some(up) => k.max(2.0 * up),
            None => k,
        }
    })
}

/// Next bound after an a posteriori violation.
pub fn grow_k_inf(k_inf: f64) -> f64 {
    2.0 * k_inf
}

/// Maximum number of a posteriori doublings of `K_∞`.
pub const MAX_K_INF_DOUBLINGS: usize = 8;

/// Sobolev critical exponent `Np/(N-p)` (or `+∞` when `p >= N`).
pub fn critical_exponent(p: f64, dim: usize) -> f64 {
    let n = dim as f64;
    if p < n {
        n * p / (n - p)
    } else {
        f64::INFINITY
    }
}

fn smoothstep(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        (0.0, 0.0)
    } else if x >= 1.0 {
        (1.0, 0.0)
    } else {
        (x * x * (3.0 - 2.0 * x), 6.0 * x * (1.0 - x))
    }
}

/// Ratio between the end and the start of the coefficient blend.
const COEFFICIENT_SPAN: f64 = 100.0;
/// Widening attempts for the monotonicity audit.
const MAX_WIDENINGS: usize = 6;

/// `f` capped above `K_∞` by a C¹ blend into `s^(ℓ-1)`.
#[derive(Debug, Clone)]
pub struct TruncatedNonlinearity {
    base: Nonlinearity,
    k_inf: f64,
    ell: f64,
    blend_width: f64,
    dim: usize,
    identity: bool,
    f_k: f64,
    fp_k: f64,
    big_f_k: f64,
    log_coef0: f64,
}

impl TruncatedNonlinearity {
    fn assemble(base: &Nonlinearity, k_inf: f64, dim: usize, ell: f64, identity: bool, width: f64) -> Self {
        let f_k = base.f(k_inf);
        let coef0 = f_k / k_inf.powf(ell - 1.0);
        Self {
            base: base.clone(),
            k_inf,
            ell,
            blend_width: width,
            dim,
            identity,
            f_k,
            fp_k: base.f_prime(k_inf),
            big_f_k: base.big_f(k_inf),
            log_coef0: if coef0 > 0.0 { coef0.ln() } else { 0.0 },
        }
    }

    /// Builds the truncation with an explicit blend width and no audit.
    pub fn with_blend_width(base: &Nonlinearity, k_inf: f64, dim: usize, width: f64) -> Result<Self> {
        let (ell, identity) = truncation_exponent(base, dim);
        if !(k_inf > 0.0) {
            return Err(Error::InvalidParameter("K_inf must be positive".into()));
        }
        Ok(Self::assemble(base, k_inf, dim, ell, identity, width.max(0.0)))
    }

    pub fn base(&self) -> &Nonlinearity {
        &self.base
    }

    pub fn p(&self) -> f64 {
        self.base.p()
    }

    pub fn mass(&self) -> f64 {
        self.base.mass()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_inf(&self) -> f64 {
        self.k_inf
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn blend_width(&self) -> f64 {
        self.blend_width
    }

    /// True when `f̃ = f` everywhere (pure power below the critical exponent).
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    fn tail(&self, s: f64) -> (f64, f64) {
        let k = self.k_inf;
        let line = self.f_k + self.fp_k * (s - k);
        let l = COEFFICIENT_SPAN.ln();
        let (sig, dsig) = smoothstep((s / k).ln() / l);
        let log_a = self.log_coef0 * (1.0 - sig);
        let a = log_a.exp();
        let da = -a * self.log_coef0 * dsig / (l * s);
        let pw = s.powf(self.ell - 1.0);
        let power = a * pw;
        let dpower = da * pw + a * (self.ell - 1.0) * s.powf(self.ell - 2.0);
        let (chi, dchi) = if self.blend_width > 0.0 {
            let (c, dc) = smoothstep((s - k) / self.blend_width);
            (c, dc / self.blend_width)
        } else {
            (1.0, 0.0)
        };
        let val = (1.0 - chi) * line + chi * power;
        let der = -dchi * line + (1.0 - chi) * self.fp_k + dchi * power + chi * dpower;
        (val, der)
    }

    pub fn f(&self, s: f64) -> f64 {
        if self.identity || s <= self.k_inf {
            self.base.f(s)
        } else {
            self.tail(s).0
        }
    }

    pub fn f_prime(&self, s: f64) -> f64 {
        if self.identity || s <= self.k_inf {
            self.base.f_prime(s)
        } else {
            self.tail(s).1
        }
    }

    pub fn big_f(&self, s: f64) -> f64 {
        if self.identity || s <= self.k_inf {
            return self.base.big_f(s);
        }
        let k = self.k_inf;
        let breaks = [k + self.blend_width, k * COEFFICIENT_SPAN];
        self.big_f_k + primitive_by_quadrature(&|x| self.tail(x).0, k, s, &breaks)
    }

    /// `f̃(s) - m s^(p-1)`.
    pub fn balance(&self, s: f64) -> f64 {
        self.f(s) - self.mass() * s.max(0.0).powf(self.p() - 1.0)
    }

    /// Audit grid: `0` plus log-spaced points on `[1e-6 K, 1e3 K]`.
    pub fn audit_grid(&self) -> Vec<f64> {
        let mut pts = vec![0.0];
        let (lo, hi) = (1e-6 * self.k_inf, 1e3 * self.k_inf);
        let count = 9_999;
        pts.extend((0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)));
        pts
    }

    pub fn audit(&self) -> TruncationAudit {
        let k = self.k_inf;
        let h = 1e-7 * k;
        let left = (self.f(k) - self.f(k - h)) / h;
        let right = (self.f(k + h) - self.f(k)) / h;
        let junction_value_gap = (self.f(k) - self.base.f(k)).abs()
            + (self.f(k * (1.0 + 1e-15) + f64::MIN_POSITIVE) - self.f(k)).abs();
        let junction_derivative_gap = (self.f_prime(k + 1e-12 * k) - self.base.f_prime(k)).abs()
            / (1.0 + self.base.f_prime(k).abs());
        let grid = self.audit_grid();
        let min_value = grid.iter().map(|&s| self.f(s)).fold(f64::INFINITY, f64::min);
        let min_derivative = grid.iter().map(|&s| self.f_prime(s)).fold(f64::INFINITY, f64::min);
        let far = 1e3 * k;
        let asymptotic_ratio = self.f(far) / far.powf(self.ell - 1.0);
        TruncationAudit {
            junction_value_gap,
            junction_derivative_gap,
            one_sided_slopes: (left, right),
            min_value,
            min_derivative,
            asymptotic_ratio,
        }
    }
}

/// Diagnostics of a built truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationAudit {
    pub junction_value_gap: f64,
    /// Relative gap between `f̃'(K⁺)` and `f'(K)`.
    pub junction_derivative_gap: f64,
    /// Finite-difference slopes just left and right of `K`.
    pub one_sided_slopes: (f64, f64),
    pub min_value: f64,
    pub min_derivative: f64,
    /// `f̃(10³K) / (10³K)^(ℓ-1)`.
    pub asymptotic_ratio: f64,
}

impl TruncationAudit {
    pub fn c1_ok(&self) -> bool {
        self.junction_value_gap <= 1e-10 && self.junction_derivative_gap <= 1e-10
    }

    pub fn monotone_ok(&self) -> bool {
        self.min_value >= 0.0 && self.min_derivative >= 0.0
    }

    pub fn asymptotic_ok(&self) -> bool {
        (self.asymptotic_ratio - 1.0).abs() <= 0.01
    }
}

/// `(ℓ, identity)`: a pure power below the critical exponent is kept as is;
/// otherwise `ℓ = (p + min(p*, p+4)) / 2`.
fn truncation_exponent(base: &Nonlinearity, dim: usize) -> (f64, bool) {
    let p = base.p();
    let p_star = critical_exponent(p, dim);
    if let Some(q) = base.spec().and_then(FamilySpec::pure_power_exponent) {
        if base.mass() == 1.0 && q < p_star {
            return (q, true);
        }
    }
    (0.5 * (p + p_star.min(p + 4.0)), false)
}

/// Builds `f̃` with `f̃ = f` on `[0, K_∞]`, widening the blend until the
/// (f₀) audit passes.
pub fn build_truncation(nl: &Nonlinearity, k_inf: f64, dim: usize) -> Result<TruncatedNonlinearity> {
    if !(k_inf > 0.0) || !k_inf.is_finite() {
        return Err(Error::InvalidParameter(format!("K_inf = {k_inf} must be positive")));
    }
    let (ell, identity) = truncation_exponent(nl, dim);
    if identity {
        return Ok(TruncatedNonlinearity::assemble(nl, k_inf, dim, ell, true, 0.0));
    }
    let mut width = k_inf;
    for _ in 0..=MAX_WIDENINGS {
        let tnl = TruncatedNonlinearity::assemble(nl, k_inf, dim, ell, false, width);
        let audit = tnl.audit();
        if audit.monotone_ok() && audit.c1_ok() {
            return Ok(tnl);
        }
        width *= 2.0;
    }
    Err(Error::TruncationFailure(format!(
        "f̃' >= 0 audit still failing after {MAX_WIDENINGS} widenings (K_inf = {k_inf})"
    )))
}

/// Constant states of `f̃`, one entry per transversal upward crossing.
pub fn find_constant_states(tnl: &TruncatedNonlinearity) -> Result<Vec<ConstantStates>> {
    let (p, m) = (tnl.p(), tnl.mass());
    let roots = locate_intersections(
        &|s| tnl.balance(s),
        &|s| tnl.f_prime(s) - m * (p - 1.0) * s.powf(p - 2.0),
        &log_samples(1e-8, 1e3 * tnl.k_inf(), 200),
    );
    let states = states_from_intersections(&roots);
    if states.is_empty() {
        return Err(Error::InvalidNonlinearity(
            "no transversal upward crossing of m·s^(p-1) (hypothesis f3)".into(),
        ));
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_power_passes_all_hypotheses() {
        let nl = Nonlinearity::pure_power(3.0, 5.0).unwrap();
        let rep = check_hypotheses(&nl);
        assert!(rep.all_pass(), "{rep:?}");
        assert_eq!(rep.intersections.len(), 1);
        assert!((rep.intersections[0].s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_nonlinearity_fails_f2() {
        let nl = Nonlinearity::custom("zero", 3.0, |_| 0.0, |_| 0.0, None).unwrap();
        assert_eq!(check_hypotheses(&nl).f2, Audit::Fail);
    }

    #[test]
    fn tangent_power_fails_f3() {
        let nl = Nonlinearity::custom("tangent", 3.0, |s| s * s, |s| 2.0 * s, None).unwrap();
        let rep = check_hypotheses(&nl);
        assert_eq!(rep.f3, Audit::Fail);
    }

    #[test]
    fn shift_is_identity_when_f0_holds() {
        let nl = Nonlinearity::pure_power(3.0, 5.0).unwrap();
        let (g, m) = shift_to_f0(&nl).unwrap();
        assert_eq!(m, 1.0);
        assert_eq!(g.f(0.7), nl.f(0.7));
    }

    #[test]
    fn shift_repairs_small_negative_perturbation() {
        let eps = 0.05;
        let nl = Nonlinearity::shifted_power(3.0, 5.0, eps).unwrap();
        assert_eq!(check_hypotheses(&nl).f0, Audit::Fail);
        let (g, m) = shift_to_f0(&nl).unwrap();
        assert!((m - (1.0 + eps)).abs() < 1e-9, "m = {m}");
        assert_eq!(check_hypotheses(&g).f0, Audit::Pass);
        // The equation is unchanged: the balance function is the same.
        for s in [0.1, 0.5, 1.3] {
            assert!((g.balance(s) - nl.balance(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_rejects_negative_constant() {
        let nl = Nonlinearity::custom("neg", 3.0, |_| -1.0, |_| 0.0, None).unwrap();
        assert!(matches!(shift_to_f0(&nl), Err(Error::UnsupportedNonlinearity(_))));
    }

    #[test]
    fn k_inf_policy() {
        let pure = ConstantStates {
            u_minus: 0.0,
            u_zero: 1.0,
            u_plus: None,
            f3_margin: 2.0,
        };
        assert_eq!(estimate_k_inf(&[pure]), 2.0);
        let bounded = ConstantStates {
            u_plus: Some(5.0),
            ..pure
        };
        assert_eq!(estimate_k_inf(&[bounded]), 10.0);
        assert_eq!(grow_k_inf(2.0), 4.0);
    }

    #[test]
    fn pure_power_below_critical_is_not_truncated() {
        let nl = Nonlinearity::pure_power(3.0, 5.0).unwrap();
        let t = build_truncation(&nl, 2.0, 2).unwrap();
        assert!(t.is_identity());
        for s in [0.0, 0.5, 2.0, 7.0, 300.0] {
            assert_eq!(t.f(s), nl.f(s));
            assert_eq!(t.big_f(s), nl.big_f(s));
        }
    }

    #[test]
    fn supercritical_truncation_audit() {
        let nl = Nonlinearity::pure_power(2.5, 10.0).unwrap();
        let t = build_truncation(&nl, 2.0, 4).unwrap();
        assert!(!t.is_identity());
        assert!(t.ell() > 2.5 && t.ell() < critical_exponent(2.5, 4));
        let a = t.audit();
        assert!(a.c1_ok(), "{a:?}");
        assert!(a.monotone_ok(), "{a:?}");
        assert!(a.asymptotic_ok(), "{a:?}");
        assert_eq!(t.f(2.0), nl.f(2.0));
        let (l, r) = a.one_sided_slopes;
        assert!((l - r).abs() / l < 1e-5);
    }

    #[test]
    fn truncated_primitive_is_consistent() {
        let nl = Nonlinearity::pure_power(2.5, 10.0).unwrap();
        let t = build_truncation(&nl, 2.0, 4).unwrap();
        for s in [2.5, 3.9, 10.0, 250.0] {
            let h = 1e-5 * s;
            let d = (t.big_f(s + h) - t.big_f(s - h)) / (2.0 * h);
            assert!((d - t.f(s)).abs() / t.f(s) < 1e-7, "s = {s}");
        }
    }

    #[test]
    fn zero_blend_width_breaks_c1() {
        let nl = Nonlinearity::pure_power(2.5, 10.0).unwrap();
        let t = TruncatedNonlinearity::with_blend_width(&nl, 2.0, 4, 0.0).unwrap();
        assert!(!t.audit().c1_ok());
    }

    #[test]
    fn pure_power_constant_states() {
        let nl = Nonlinearity::pure_power(3.0, 5.0).unwrap();
        let t = build_truncation(&nl, 2.0, 2).unwrap();
        let st = find_constant_states(&t).unwrap();
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].u_minus, 0.0);
        assert!((st[0].u_zero - 1.0).abs() < 1e-14);
        assert_eq!(st[0].u_plus, None);
        assert!((st[0].f3_margin - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wells_have_two_cones() {
        let nl = Nonlinearity::wells(3.0, [1.0, 2.0, 3.0], 0.1).unwrap();
        let rep = check_hypotheses(&nl);
        assert!(rep.all_pass(), "{rep:?}");
        let t = build_truncation(&nl, estimate_k_inf(&base_constant_states(&nl, 1e3).unwrap()), 2).unwrap();
        let st = find_constant_states(&t).unwrap();
        assert_eq!(st.len(), 2);
        let (a, b) = (st[0], st[1]);
        assert!(a.u_minus == 0.0 && (a.u_zero - 1.0).abs() < 1e-12);
        assert!((a.u_plus.unwrap() - 2.0).abs() < 1e-12);
        assert!((b.u_minus - 2.0).abs() < 1e-12 && (b.u_zero - 3.0).abs() < 1e-12);
        assert_eq!(b.u_plus, None);
        for s in st {
            assert!(s.u_minus < s.u_zero && s.u_zero < s.u_plus_or_inf());
            assert!(t.balance(s.u_zero).abs() < 1e-10);
        }
    }

    #[test]
    fn tangential_touch_is_rejected() {
        // f(s) = s² (1 + (s-1)²)/(1 + ...) touches s² at s = 1 without crossing.
        let nl = Nonlinearity::custom(
            "touch",
            3.0,
            |s| s * s * (1.0 + (s - 1.0) * (s - 1.0)),
            |s| 2.0 * s * (1.0 + (s - 1.0) * (s - 1.0)) + 2.0 * s * s * (s - 1.0),
            None,
        )
        .unwrap();
        let t = build_truncation(&nl, 2.0, 2).unwrap();
        assert!(matches!(find_constant_states(&t), Err(Error::InvalidNonlinearity(_))));
    }

    #[test]
    fn table_interpolation_reproduces_samples() {
        let s: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
        let f: Vec<f64> = s.iter().map(|x| x.powi(4)).collect();
        let nl = Nonlinearity::from_table(3.0, "tab", s.clone(), f.clone()).unwrap();
        for (x, y) in s.iter().zip(&f) {
            assert!((nl.f(*x) - y).abs() < 1e-12);
        }
        let d = nl.consistency_defect();
        // C¹ only: f'' jumps at knots, so the difference quotient of f' is O(h) there.
        assert!(d < 1e-5, "defect {d}");
        // Monotone data stays monotone between knots.
        let mut prev = 0.0;
        for i in 0..4000 {
            let v = nl.f(i as f64 * 1e-3);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn families_are_self_consistent() {
        for nl in [
            Nonlinearity::pure_power(3.0, 5.0).unwrap(),
            Nonlinearity::shifted_power(2.5, 4.0, 0.1).unwrap(),
            Nonlinearity::wells(3.0, [1.0, 2.0, 3.0], 0.1).unwrap(),
            Nonlinearity::custom("quad", 3.0, |s| s.powi(3), |s| 3.0 * s * s, None).unwrap(),
        ] {
            assert!(nl.consistency_defect() < 1e-6, "{}", nl.name());
        }
    }

    #[test]
    fn cli_family_parsing() {
        assert_eq!(FamilySpec::parse_cli("pure_power:5").unwrap(), FamilySpec::PurePower { q: 5.0 });
        assert!(FamilySpec::parse_cli("pure_power").is_err());
        assert!(FamilySpec::parse_cli("nope:1").is_err());
        let json = r#"{"family":"pure_power","q":5.0}"#;
        let spec: FamilySpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec, FamilySpec::PurePower { q: 5.0 });
    }
}
