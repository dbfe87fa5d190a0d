//! Command-line front end. [`run`] parses arguments, executes one subcommand
//! and returns the process exit code: 0 on success, 1 on solver failure, 2 on
//! configuration errors.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::energy::{grad_norm, gradient_fd_error, residual_strong};
use crate::error::{Error, Result};
use crate::grid::{make_grid, Grading, RadialFunction};
use crate::limit::{run_q_sweep, write_sweep_csv};
use crate::mountain_pass::{solve, MinimaxOptions, SolveSummary};
use crate::nonlinearity::{
    base_constant_states, build_truncation, check_hypotheses, estimate_k_inf, find_constant_states, shift_to_f0, Audit,
    Nonlinearity, TruncatedNonlinearity,
};
use crate::operator::{apply_t, random_cone_input, verify_cone_preservation, InnerSolveOptions};
use crate::shooting::{c_infinity_from_flux, shoot_dirichlet_g, shoot_neumann, ShootSummary};

#[derive(Debug, Parser)]
#[command(name = "radial-plap", version, about = "Radial p-Laplacian Neumann solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mountain-pass solve in the restricted cone.
    Solve(CommonArgs),
    /// Shooting oracle for the Neumann problem or the Dirichlet profile G.
    Shoot(ShootArgs),
    /// q-sweep for the pure power and the limit diagnostics.
    Sweep(CommonArgs),
    /// Property checks with a pass/fail table.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long = "N")]
    pub dim: Option<usize>,
    /// Nonlinearity, e.g. `pure_power:5`, `wells:1,2,3,0.1`, `custom_table:f.csv`.
    #[arg(long)]
    pub f: Option<String>,
    #[arg(long = "q-list", value_delimiter = ',')]
    pub q_list: Option<Vec<f64>>,
    #[arg(long = "grid-n")]
    pub grid_n: Option<usize>,
    /// `uniform` or `boundary-refined`.
    #[arg(long)]
    pub grading: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "path-nodes")]
    pub path_nodes: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// `minimax`, `shooting` or `both`.
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ShootArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Shoot the Dirichlet limit profile G instead of the Neumann problem.
    #[arg(long = "dirichlet-G")]
    pub dirichlet_g: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Forces the truncation blend width (fault injection).
    #[arg(long = "blend-width")]
    pub blend_width: Option<f64>,
}

/// Builds the effective configuration from a file and flag overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = args.p {
        cfg.problem.p = p;
    }
    if let Some(n) = args.dim {
        cfg.problem.dim = n;
    }
    if let Some(f) = &args.f {
        cfg.problem.f = Some(f.clone());
    }
    if let Some(q) = &args.q_list {
        cfg.sweep.q_list = q.clone();
    }
    if let Some(n) = args.grid_n {
        cfg.grid.n = n;
    }
    if let Some(g) = &args.grading {
        cfg.grid.grading = g.parse()?;
    }
    if let Some(t) = args.tau {
        cfg.solver.tau = Some(t);
    }
    if let Some(m) = args.path_nodes {
        cfg.solver.path_nodes = m;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }
    if let Some(m) = &args.method {
        cfg.sweep.method = m.parse()?;
    }
    Ok(cfg)
}

/// Errors that describe a bad request rather than a failed computation.
fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter(_) | Error::UnsupportedNonlinearity(_) | Error::InvalidNonlinearity(_) | Error::Json(_)
    )
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn report_error(e: &Error) {
    let rep = ErrorReport {
        error: e.kind(),
        message: e.to_string(),
    };
    eprintln!("{}", serde_json::to_string(&rep).unwrap_or_else(|_| e.to_string()));
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let common = match &cli.command {
        Command::Solve(c) | Command::Sweep(c) => c,
        Command::Shoot(s) => &s.common,
        Command::Validate(v) => &v.common,
    };
    let cfg = match resolve_config(common).and_then(|cfg| cfg.validate().map(|w| (cfg, w))) {
        Ok((cfg, warnings)) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            cfg
        }
        Err(e) => {
            report_error(&e);
            return 2;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            report_error(&Error::InvalidParameter(e.to_string()));
            return 2;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Solve(_) => cmd_solve(&cfg),
        Command::Shoot(s) => cmd_shoot(&cfg, s.dirichlet_g),
        Command::Sweep(_) => cmd_sweep(&cfg),
        Command::Validate(v) => cmd_validate(&cfg, v.blend_width),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            report_error(&e);
            if is_config_error(&e) {
                2
            } else {
                1
            }
        }
    }
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = out_file(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_profile(dir: &Path, stem: &str, u: &RadialFunction) -> Result<()> {
    let mut w = out_file(dir, &format!("{stem}.csv"))?;
    u.write_csv(&mut w)?;
    w.flush()?;
    let mut w = out_file(dir, &format!("{stem}.dat"))?;
    u.write_dat(&mut w)?;
    w.flush()?;
    Ok(())
}

/// The nonlinearity after restoring (f₀) by a shift when needed.
fn prepared_nonlinearity(cfg: &RunConfig) -> Result<Nonlinearity> {
    let nl = cfg.require_nonlinearity()?;
    if check_hypotheses(&nl).f0 == Audit::Pass {
        return Ok(nl);
    }
    let (g, m) = shift_to_f0(&nl)?;
    eprintln!("note: f shifted by (m-1)s^(p-1) with m = {m} to restore monotonicity");
    Ok(g)
}

#[derive(Serialize)]
struct SolveFile<'a> {
    p: f64,
    #[serde(rename = "N")]
    dim: usize,
    nonlinearity: &'a str,
    grid_n: usize,
    grading: Grading,
    options: MinimaxOptions,
    summary: SolveSummary,
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<i32> {
    let nl = prepared_nonlinearity(cfg)?;
    let grid = make_grid(cfg.grid.n, cfg.problem.dim, cfg.grid.grading)?;
    let opts = cfg.minimax_options();
    let (rep, _) = solve(&nl, &grid, &opts)?;
    let dir = &cfg.output_dir;
    let summary = rep.summary();
    write_json(
        dir,
        "solve_report.json",
        &SolveFile {
            p: cfg.problem.p,
            dim: cfg.problem.dim,
            nonlinearity: nl.name(),
            grid_n: cfg.grid.n,
            grading: cfg.grid.grading,
            options: opts,
            summary: summary.clone(),
        },
    )?;
    write_profile(dir, "profile", &rep.u_star)?;
    let mut w = out_file(dir, "trace.csv")?;
    rep.write_trace(&mut w)?;
    w.flush()?;
    println!(
        "c = {:.12}  u(0) = {:.10}  u(1) = {:.10}  grad_norm = {:.3e}  accepted = {}",
        summary.c, summary.u_at_0, summary.u_at_1, summary.energy_report.grad_norm, summary.accepted
    );
    Ok(if rep.accepted() { 0 } else { 1 })
}

#[derive(Serialize)]
struct ShootFile {
    mode: &'static str,
    p: f64,
    #[serde(rename = "N")]
    dim: usize,
    grid_n: usize,
    summary: ShootSummary,
    c_inf: Option<f64>,
}

pub fn cmd_shoot(cfg: &RunConfig, dirichlet_g: bool) -> Result<i32> {
    let (p, dim) = (cfg.problem.p, cfg.problem.dim);
    let grid = make_grid(cfg.grid.shooting_n, dim, cfg.grid.grading)?;
    let dir = &cfg.output_dir;
    let (mode, res, c_inf) = if dirichlet_g {
        let res = shoot_dirichlet_g(p, &grid)?;
        let c = c_infinity_from_flux(&res);
        println!("b* = G(0) = {:.12}  c_inf = {:.12}", res.parameter, c);
        ("dirichlet_G", res, Some(c))
    } else {
        let nl = prepared_nonlinearity(cfg)?;
        let k_inf = estimate_k_inf(&base_constant_states(&nl, 1e6)?);
        let tnl = build_truncation(&nl, k_inf, dim)?;
        let states = find_constant_states(&tnl)?;
        let st = states.get(cfg.solver.cone_index).ok_or_else(|| {
            Error::InvalidParameter(format!("cone index {} out of range", cfg.solver.cone_index))
        })?;
        let res = shoot_neumann(&tnl, st, &grid)?;
        println!("a* = u(0) = {:.12}  miss = {:.3e}", res.parameter, res.miss);
        ("neumann", res, None)
    };
    write_json(
        dir,
        "shoot_report.json",
        &ShootFile {
            mode,
            p,
            dim,
            grid_n: cfg.grid.shooting_n,
            summary: res.summary(),
            c_inf,
        },
    )?;
    let mut w = out_file(dir, "shoot_trajectory.csv")?;
    res.trajectory().write_csv(&mut w)?;
    w.flush()?;
    write_profile(dir, "shoot_profile", &res.profile)?;
    Ok(0)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<i32> {
    let (p, dim) = (cfg.problem.p, cfg.problem.dim);
    let out = run_q_sweep(p, dim, &cfg.sweep.q_list, cfg.sweep.method, &cfg.sweep_options())?;
    let dir = &cfg.output_dir;
    let mut w = out_file(dir, "sweep.csv")?;
    write_sweep_csv(&out.rows, &mut w)?;
    w.flush()?;
    let summary = out.summary();
    write_json(dir, "sweep_summary.json", &summary)?;
    let mut w = out_file(dir, "G.dat")?;
    out.g.profile.write_dat(&mut w)?;
    w.flush()?;
    for (row, prof) in out.rows.iter().zip(&out.profiles) {
        if let Some(u) = prof {
            let mut w = out_file(dir, &format!("profile_q{}.dat", row.q))?;
            u.write_dat(&mut w)?;
            w.flush()?;
        }
    }
    println!("{:>8} {:>14} {:>12} {:>12} {:>12}", "q", "c_q", "u(0)", "u(1)", "sup|u-G|");
    for r in &out.rows {
        match &r.error {
            None => println!(
                "{:>8} {:>14.10} {:>12.8} {:>12.8} {:>12.4e}",
                r.q, r.c_q, r.u0_val, r.u1_val, r.sup_dist_g
            ),
            Some(e) => println!("{:>8} failed: {e}", r.q),
        }
    }
    println!("c_inf = {:.12}", out.c_inf.value);
    match &summary.report {
        Some(rep) => {
            println!(
                "sup_dist_G decreasing: {}  reduction: {:.2}x  |c_q - c_inf| decreasing: {}",
                rep.sup_dist_decreasing, rep.sup_dist_reduction, rep.c_gap_decreasing
            );
        }
        None => println!("fewer than 3 rows: rate fitting skipped"),
    }
    Ok(if out.rows.iter().all(|r| r.ok()) { 0 } else { 1 })
}

/// One line of the validation table.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

fn truncation_checks(label: &str, nl: &Nonlinearity, dim: usize, blend_width: Option<f64>) -> Result<Vec<Check>> {
    let k_inf = estimate_k_inf(&base_constant_states(nl, 1e6)?);
    let tnl = match blend_width {
        Some(w) => TruncatedNonlinearity::with_blend_width(nl, k_inf, dim, w)?,
        None => build_truncation(nl, k_inf, dim)?,
    };
    let a = tnl.audit();
    let exact = tnl
        .audit_grid()
        .iter()
        .filter(|&&s| s <= k_inf)
        .all(|&s| tnl.f(s).to_bits() == nl.f(s).to_bits());
    Ok(vec![
        check(format!("truncation_identity_below_K[{label}]"), exact, format!("K_inf = {k_inf}")),
        check(
            format!("truncation_c1_junction[{label}]"),
            a.c1_ok(),
            format!("value gap {:.2e}, slope gap {:.2e}", a.junction_value_gap, a.junction_derivative_gap),
        ),
        check(
            format!("truncation_monotone[{label}]"),
            a.monotone_ok(),
            format!("min f~ = {:.2e}, min f~' = {:.2e}", a.min_value, a.min_derivative),
        ),
        check(
            format!("truncation_asymptotic[{label}]"),
            a.asymptotic_ok(),
            format!("ratio at 1e3 K = {:.6}", a.asymptotic_ratio),
        ),
    ])
}

/// Runs the property checks for the configured problem and the fixed
/// reference cases.
pub fn validation_checks(cfg: &RunConfig, blend_width: Option<f64>) -> Result<Vec<Check>> {
    let (p, dim) = (cfg.problem.p, cfg.problem.dim);
    let nl = match cfg.nonlinearity()? {
        Some(nl) => nl,
        None => Nonlinearity::pure_power(p, p + 2.0)?,
    };
    let mut out = Vec::new();

    let h = check_hypotheses(&nl);
    out.push(check(
        format!("hypotheses[{}]", nl.name()),
        h.all_pass(),
        format!("f0 {:?}, f1 {:?}, f2 {:?}, f3 {:?}", h.f0, h.f1, h.f2, h.f3),
    ));
    out.extend(truncation_checks(nl.name(), &nl, dim, blend_width)?);
    let reference = Nonlinearity::pure_power(2.5, 10.0)?;
    out.extend(truncation_checks("pure_power(q=10),p=2.5,N=4", &reference, 4, blend_width)?);

    let k_inf = estimate_k_inf(&base_constant_states(&nl, 1e6)?);
    let tnl = build_truncation(&nl, k_inf, dim)?;
    let states = find_constant_states(&tnl)?;
    let grid = make_grid(cfg.grid.n, dim, cfg.grid.grading)?;
    for st in &states {
        let u0 = RadialFunction::constant(grid.clone(), st.u_zero);
        let (g, r) = (grad_norm(&u0, &tnl), residual_strong(&u0, &tnl));
        out.push(check(
            format!("constant_criticality[u0={}]", st.u_zero),
            g < 1e-10 && r < 1e-10,
            format!("grad_norm {g:.2e}, residual {r:.2e}"),
        ));
        let cone = verify_cone_preservation(&grid, &tnl, st, 100, cfg.seed, &InnerSolveOptions::default())?;
        out.push(check(
            format!("cone_preservation[u0={}]", st.u_zero),
            cone.failures == 0,
            format!("{} trials, {} failures, worst violation {:.2e}", cone.trials, cone.failures, cone.worst_violation),
        ));
    }

    let fd_grid = make_grid(128, dim, Grading::Uniform)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
    let top = states.last().map_or(1.0, |s| s.u_plus_or_inf().min(2.0 * s.u_zero));
    let worst = (0..50)
        .map(|_| gradient_fd_error(&random_cone_input(&fd_grid, &mut rng, 0.0, top), &tnl, 1e-6))
        .fold(0.0, f64::max);
    out.push(check("gradient_fd[50 cone profiles]", worst < 1e-5, format!("max relative error {worst:.2e}")));

    let g = shoot_dirichlet_g(2.0, &make_grid(2048, 1, Grading::Uniform)?)?;
    let (g0, cinf) = (g.parameter, c_infinity_from_flux(&g));
    let (e0, e1) = ((g0 - 1.0 / 1f64.cosh()).abs(), (cinf - 1f64.tanh() / 2.0).abs());
    out.push(check(
        "closed_form_G[p=2,N=1]",
        e0 < 1e-8 && e1 < 1e-8,
        format!("|G(0) - sech 1| = {e0:.2e}, |c_inf - tanh(1)/2| = {e1:.2e}"),
    ));
    let tgrid = make_grid(1024, 1, Grading::Uniform)?;
    let v = apply_t(&RadialFunction::from_fn(tgrid.clone(), |r| r), 2.0, &InnerSolveOptions::default())?;
    let a = (1f64.cosh() - 1.0) / 1f64.sinh();
    let exact = RadialFunction::from_fn(tgrid, |r| r + a * r.cosh() - r.sinh());
    let err = v.sup_distance(&exact);
    out.push(check("closed_form_T[p=2,N=1,h=r]", err < 1e-6, format!("sup error {err:.2e}")));
    Ok(out)
}

pub fn cmd_validate(cfg: &RunConfig, blend_width: Option<f64>) -> Result<i32> {
    let checks = validation_checks(cfg, blend_width)?;
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        println!("{} {:<width$}  {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{} checks, {} failed", checks.len(), failed);
    Ok(if failed == 0 { 0 } else { 1 })
}

