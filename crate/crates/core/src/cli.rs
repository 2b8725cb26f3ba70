//! Command-line front end of the `homog` binary.
//!
//! Exit status: 0 success, 1 a study missed its thresholds, 2 configuration or
//! input error, 3 a structural hypothesis or the centring condition failed,
//! 4 a solver failed.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::cell::{flux_table, flux_table_csv, solve_linear_correctors, solve_nonlinear_cell, CellData, CellEvaluator};
use crate::config::RunConfig;
use crate::effective::{
    build_linear_effective, residual_two_scale, solve_macro_linear, solve_macro_nonlinear, LinearEffectiveModel,
    PointState,
};
use crate::epsilon::{scan_with_solutions, DEFAULT_GROWTH_FACTOR};
use crate::error::{Error, Result};
use crate::fields::validate_hypotheses;
use crate::harness::run_studies;
use crate::report::{sha256_hex, Manifest, OutputDir};

pub const EXIT_OK: i32 = 0;
pub const EXIT_THRESHOLD: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_HYPOTHESIS: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "homog",
    version,
    about = "Homogenization of the p-Laplacian with a large periodic potential"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration; defaults apply to everything it omits.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set problem.p=3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check positivity and periodicity of a and the zero mean of V.
    Validate,
    /// Solve the oscillating problem for every ε and tabulate its norms.
    SolveEps,
    /// Solve the nonlinear cell problem at the configured (θ, ξ).
    SolveCell,
    /// Effective coefficients (p = 2) or the effective flux table (p ≠ 2).
    Effective,
    /// Solve the macroscopic problem with on-demand cell solves.
    SolveHomog,
    /// Run the configured ε-sweep studies.
    Study,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::SolveEps => "solve-eps",
            Command::SolveCell => "solve-cell",
            Command::Effective => "effective",
            Command::SolveHomog => "solve-homog",
            Command::Study => "study",
        }
    }
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Expression { .. }
        | Error::Io { .. }
        | Error::DimensionMismatch(_)
        | Error::InvalidInput(_)
        | Error::Unresolved { .. } => EXIT_CONFIG,
        Error::NotElliptic { .. } | Error::NonZeroMean { .. } | Error::NotCentred { .. } => EXIT_HYPOTHESIS,
        Error::Singular(_)
        | Error::LinearSolve { .. }
        | Error::NotConverged { .. }
        | Error::CellFailure { .. }
        | Error::Stagnation { .. } => EXIT_SOLVER,
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path, &cli.overrides),
        None => RunConfig::parse("", &cli.overrides),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let mut out = OutputDir::new(&cfg.output.dir, &cfg.output.formats);
    let outcome = dispatch(cli.command, &cfg, &mut out);
    let (passed, code, error) = match &outcome {
        Ok(true) => (true, EXIT_OK, None),
        Ok(false) => (false, failure_code(cli.command), None),
        Err(e) => (false, exit_code(e), Some(e.to_string())),
    };
    let resolved = cfg.to_toml();
    let manifest = Manifest {
        command: cli.command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(resolved.as_bytes()),
        config: serde_json::to_value(&cfg).expect("configuration serializes"),
        overrides: cli.overrides.clone(),
        artifacts: Vec::new(),
        passed,
        exit_code: code,
        error: error.clone(),
    };
    if let Err(e) = out.finish(manifest) {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match error {
        Some(msg) => eprintln!("error: {msg}"),
        None => println!(
            "{}: {} ({} artifacts in {})",
            cli.command.name(),
            if passed { "pass" } else { "FAIL" },
            out.artifacts().len(),
            out.root().display()
        ),
    }
    code
}

fn failure_code(command: Command) -> i32 {
    match command {
        Command::Validate => EXIT_HYPOTHESIS,
        Command::Study => EXIT_THRESHOLD,
        _ => EXIT_SOLVER,
    }
}

fn dispatch(command: Command, cfg: &RunConfig, out: &mut OutputDir) -> Result<bool> {
    match command {
        Command::Validate => validate(cfg, out),
        Command::SolveEps => solve_eps(cfg, out),
        Command::SolveCell => solve_cell(cfg, out),
        Command::Effective => effective(cfg, out),
        Command::SolveHomog => solve_homog(cfg, out),
        Command::Study => study(cfg, out),
    }
}

fn validate(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool> {
    let report = validate_hypotheses(
        &cfg.coefficient()?,
        &cfg.potential_field()?,
        cfg.fields.sample_cells,
        cfg.fields.mean_tol,
    )?;
    out.write_json("validation", &report)?;
    Ok(report.passed)
}

fn solve_eps(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool> {
    let template = cfg.template()?;
    let (scan, solutions) = scan_with_solutions(&template, &cfg.eps_list(), &cfg.solver, DEFAULT_GROWTH_FACTOR);
    out.write_report("apriori", &scan)?;
    for (k, u) in cfg.grids.eps_inv.iter().zip(&solutions) {
        if let Some(u) = u {
            out.write_csv(&format!("u_eps{k}"), &u.to_csv())?;
        }
    }
    for r in scan.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("eps = {}: {}", r.eps, r.error.as_deref().unwrap_or_default());
    }
    Ok(scan.rows.iter().all(|r| r.error.is_none()))
}

fn solve_cell(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool> {
    let (a, v) = (cfg.coefficient()?, cfg.potential()?);
    let grid = cfg.cell_grid()?;
    let sol = solve_nonlinear_cell(&a, &v, cfg.problem.p, cfg.cell.theta, cfg.xi(), grid, &cfg.solver)?;
    out.write_json("cell", &sol)?;
    out.write_csv("chi", &sol.chi.to_csv())?;
    Ok(sol.stats.converged)
}

#[derive(Serialize)]
struct EffectiveReport<'a> {
    model: &'a LinearEffectiveModel,
    min_eigenvalue: f64,
    corrector_residual: f64,
}

fn effective(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool> {
    let (a, v) = (cfg.coefficient()?, cfg.potential()?);
    let grid = cfg.cell_grid()?;
    let dim = cfg.problem.dim;
    if cfg.problem.p == 2.0 {
        let coeff = a.into();
        let corr = solve_linear_correctors(&coeff, &v, grid, cfg.solver.lin_tol)?;
        let model = build_linear_effective(&corr, &coeff, &v)?;
        out.write_json(
            "effective",
            &EffectiveReport {
                model: &model,
                min_eigenvalue: model.min_eigenvalue(),
                corrector_residual: corr.residual,
            },
        )?;
        let u = solve_macro_linear(
            &model,
            cfg.study.ansatz,
            &cfg.load_expr()?,
            &cfg.macro_grid()?,
            cfg.solver.lin_tol,
        )?;
        out.write_csv("u_homog", &u.to_csv())?;
        return Ok(true);
    }
    let evaluator = CellEvaluator::new(CellData::new(&a, &v, cfg.problem.p, grid)?, cfg.solver.clone(), None)?;
    let xis: Vec<[f64; 2]> = cfg.cell.table.iter().map(|&x| [x, 0.0]).collect();
    let rows = flux_table(&evaluator, &cfg.cell.table, &xis)?;
    out.write_csv("flux_table", &flux_table_csv(&rows, dim))?;
    out.write_json("flux_table", &rows)?;
    Ok(true)
}

#[derive(Serialize)]
struct HomogReport<'a> {
    stats: &'a crate::effective::MacroStats,
    r_global: f64,
    r_local: f64,
    points: &'a [PointState],
}

fn solve_homog(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool> {
    let (a, v) = (cfg.coefficient()?, cfg.potential()?);
    let data = CellData::new(&a, &v, cfg.problem.p, cfg.cell_grid()?)?;
    let evaluator = CellEvaluator::new(data, cfg.solver.clone(), cfg.quantization())?;
    let f = cfg.load_expr()?;
    let mut mc = cfg.macro_solver.clone();
    mc.keep_u1 = true;
    let pair = solve_macro_nonlinear(&evaluator, &f, &cfg.macro_grid()?, &mc)?;
    let (r_global, r_local) = residual_two_scale(&pair, &evaluator, &f)?;
    out.write_csv("u_homog", &pair.u.to_csv())?;
    out.write_json(
        "homog",
        &HomogReport {
            stats: &pair.stats,
            r_global,
            r_local,
            points: &pair.points,
        },
    )?;
    Ok(pair.stats.converged)
}

fn study(cfg: &RunConfig, out: &mut OutputDir) -> Result<bool> {
    let spec = cfg.study_spec()?;
    let reports = run_studies(&spec, &cfg.study.kinds)?;
    let mut passed = true;
    for r in &reports {
        for (k, s) in r.series.iter().enumerate() {
            let csv = s.to_csv();
            out.write_csv(&format!("{}_{k}", r.study), &csv)?;
        }
        out.write_json(&r.study, r)?;
        passed &= r.passed;
    }
    Ok(passed)
}
