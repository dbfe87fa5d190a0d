//! Run configuration: a JSON file whose every field has a default, with flat
//! command-line overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grading;
use crate::limit::{SweepMethod, SweepOptions};
use crate::mountain_pass::MinimaxOptions;
use crate::nonlinearity::{FamilySpec, Nonlinearity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub p: f64,
    #[serde(rename = "N")]
    pub dim: usize,
    /// Compact descriptor such as `pure_power:5` or `wells:1,2,3,0.1`.
    pub f: Option<String>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { p: 3.0, dim: 2, f: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub grading: Grading,
    /// Output grid of the shooting oracle.
    pub shooting_n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n: 512,
            grading: Grading::Uniform,
            shooting_n: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub q_list: Vec<f64>,
    pub method: SweepMethod,
    pub parallel: bool,
    pub refine_from_q: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            q_list: vec![5.0, 10.0, 20.0, 40.0, 80.0],
            method: SweepMethod::Minimax,
            parallel: false,
            refine_from_q: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub solver: MinimaxOptions,
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` uses one per core.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::default(),
            grid: GridConfig::default(),
            solver: MinimaxOptions::default(),
            sweep: SweepConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks the invariants and returns warnings for accepted edge cases.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let p = self.problem.p;
        if !(p >= 2.0) || !p.is_finite() {
            return Err(Error::InvalidParameter(format!("p = {p} must be >= 2")));
        }
        if p == 2.0 {
            warnings.push("p = 2 runs in validation mode, outside the p > 2 regime".to_string());
        }
        if self.problem.dim < 1 {
            return Err(Error::InvalidParameter("N must be >= 1".into()));
        }
        if self.grid.n < 4 || self.grid.shooting_n < 4 {
            return Err(Error::InvalidParameter("grids need at least 4 elements".into()));
        }
        if let Some(q) = self.sweep.q_list.iter().find(|&&q| !(q > p)) {
            return Err(Error::InvalidParameter(format!("q = {q} in q_list must exceed p = {p}")));
        }
        if self.sweep.q_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("q_list must be increasing".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidParameter("workers must be positive".into()));
        }
        self.nonlinearity()?;
        Ok(warnings)
    }

    /// The configured nonlinearity, if any.
    pub fn nonlinearity(&self) -> Result<Option<Nonlinearity>> {
        self.problem
            .f
            .as_deref()
            .map(|f| FamilySpec::parse_cli(f)?.build(self.problem.p))
            .transpose()
    }

    pub fn require_nonlinearity(&self) -> Result<Nonlinearity> {
        self.nonlinearity()?
            .ok_or_else(|| Error::InvalidParameter("a nonlinearity (--f) is required".into()))
    }

    pub fn minimax_options(&self) -> MinimaxOptions {
        MinimaxOptions {
            seed: self.seed,
            ..self.solver
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            grid_n: self.grid.n,
            shooting_n: self.grid.shooting_n,
            refine_from_q: self.sweep.refine_from_q,
            parallel: self.sweep.parallel,
            seed: self.seed,
            minimax: self.minimax_options(),
            ..SweepOptions::default()
        }
    }
}
