//! The `dpngs` command line: load a covariance or a sample matrix, solve, and
//! write the precision matrix and a per-iteration trace.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod io;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use dpngs::fpgm::FpgmConfig;
use dpngs::graph::{default_theta0, dpngs_solve_monitored, sparsify, DpngsOptions, DpngsTermination, GraphProblem};
use dpngs::linalg::{smallest_eigenvalue_probe, PrecisionIterate, SymmetricMatrix};
use dpngs::scframework::NoMonitor;
use dpngs_diagnostics::ObjectiveMonitor;
use serde::Serialize;
use thiserror::Error;

use crate::io::{empirical_covariance, load_matrix_csv, save_matrix_csv, save_trace_jsonl, square_symmetric, DatasetKind, IoError};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_ITERATION_CAP: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Exact,
    Inexact(usize),
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Variant::Exact),
            _ => {
                let k = s
                    .strip_prefix("inexact:")
                    .ok_or_else(|| format!("expected `exact` or `inexact:K`, got `{s}`"))?;
                match k.parse::<usize>() {
                    Ok(k) if k > 0 => Ok(Variant::Inexact(k)),
                    _ => Err(format!("`{k}` is not a positive iteration count")),
                }
            }
        }
    }
}

impl Variant {
    pub fn preset(self) -> FpgmConfig {
        match self {
            Variant::Exact => FpgmConfig::exact(),
            Variant::Inexact(k) => FpgmConfig::inexact(k),
        }
    }
}

/// Everything that determines a run apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub rho: f64,
    pub outer_eps: f64,
    pub inner_eps: f64,
    pub inner_kmax: usize,
    pub variant: Variant,
    pub i_max: usize,
    pub seed: Option<u64>,
    pub diagnostics: bool,
}

impl RunManifest {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("rho", self.rho), ("eps", self.outer_eps), ("inner-eps", self.inner_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("--{name} must be positive, got {v}"));
            }
        }
        if self.inner_kmax == 0 || self.i_max == 0 {
            return Err("iteration caps must be at least 1".into());
        }
        if let Variant::Inexact(k) = self.variant {
            if self.inner_kmax != k {
                return Err(format!("--variant inexact:{k} conflicts with --inner-kmax {}", self.inner_kmax));
            }
        }
        Ok(())
    }

    pub fn options(&self) -> DpngsOptions {
        DpngsOptions {
            outer_eps: self.outer_eps,
            i_max: self.i_max,
            inner: FpgmConfig { inner_eps: self.inner_eps, k_max: self.inner_kmax, ..self.variant.preset() },
            record_objective: self.diagnostics,
            ..DpngsOptions::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dpngs", version, about = "Sparse precision matrix estimation without matrix inversion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve min -log det(T) + tr(S T) + rho |T|_1.
    Solve(SolveArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["covariance", "samples"])))]
pub struct SolveArgs {
    /// Covariance matrix CSV (p rows of p values).
    #[arg(long, value_name = "PATH")]
    pub covariance: Option<PathBuf>,
    /// Sample matrix CSV (one sample per row).
    #[arg(long, value_name = "PATH")]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub rho: f64,
    /// Outer tolerance on the Newton decrement.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// `exact` or `inexact:K`.
    #[arg(long, default_value = "exact")]
    pub variant: Variant,
    #[arg(long)]
    pub inner_eps: Option<f64>,
    #[arg(long)]
    pub inner_kmax: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// Initial precision matrix CSV; must be positive definite.
    #[arg(long, value_name = "PATH")]
    pub theta0: Option<PathBuf>,
    /// Zero off-diagonal entries below this magnitude in the output.
    #[arg(long)]
    pub sparsify: Option<f64>,
    /// Record the objective value in the trace.
    #[arg(long)]
    pub diagnostics: bool,
    /// Solution CSV; printed to stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Trace file, one JSON object per outer iteration.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Normalize the sample covariance by 1/(m-1) instead of 1/m.
    #[arg(long)]
    pub unbiased: bool,
}

impl SolveArgs {
    pub fn manifest(&self) -> RunManifest {
        let preset = self.variant.preset();
        RunManifest {
            rho: self.rho,
            outer_eps: self.eps,
            inner_eps: self.inner_eps.unwrap_or(preset.inner_eps),
            inner_kmax: self.inner_kmax.unwrap_or(preset.k_max),
            variant: self.variant,
            i_max: self.max_iters,
            seed: None,
            diagnostics: self.diagnostics,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Solve(#[from] dpngs::GraphError),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(e) if e.is_io() => EXIT_IO,
            _ => EXIT_FAILURE,
        }
    }
}

pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_cli_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_CONVERGED };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    let Command::Solve(args) = cli.command;
    match solve(&args, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_problem(args: &SolveArgs, rho: f64) -> Result<GraphProblem, CliError> {
    let sigma = match (&args.covariance, &args.samples) {
        (Some(path), _) => load_matrix_csv(path, DatasetKind::Covariance)?.covariance_matrix()?,
        (None, Some(path)) => empirical_covariance(&load_matrix_csv(path, DatasetKind::Samples)?, args.unbiased)?,
        (None, None) => return Err(CliError::Usage("one of --covariance or --samples is required".into())),
    };
    Ok(GraphProblem::new(sigma, rho)?)
}

fn load_theta0(args: &SolveArgs, prob: &GraphProblem) -> Result<PrecisionIterate, CliError> {
    let Some(path) = &args.theta0 else {
        return Ok(default_theta0(prob));
    };
    let theta: SymmetricMatrix = square_symmetric(&load_matrix_csv(path, DatasetKind::Covariance)?.values)?;
    if theta.dim() != prob.dim() {
        return Err(CliError::Input(format!("--theta0 is {0}x{0}, data has {1} variables", theta.dim(), prob.dim())));
    }
    if !(smallest_eigenvalue_probe(&theta).value > 0.0) {
        return Err(CliError::Input("--theta0 is not positive definite".into()));
    }
    Ok(PrecisionIterate::new(theta))
}

fn solve(args: &SolveArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let manifest = args.manifest();
    manifest.validate().map_err(CliError::Usage)?;
    if let Some(t) = args.sparsify {
        if !(t >= 0.0) {
            return Err(CliError::Usage(format!("--sparsify must be non-negative, got {t}")));
        }
    }
    let prob = load_problem(args, manifest.rho)?;
    let theta0 = load_theta0(args, &prob)?;
    let opts = manifest.options();

    let out = if manifest.diagnostics {
        dpngs_solve_monitored(&prob, theta0, &opts, &mut ObjectiveMonitor::new(&prob))?
    } else {
        dpngs_solve_monitored(&prob, theta0, &opts, &mut NoMonitor)?
    };

    let theta = match args.sparsify {
        Some(t) => sparsify(&out.theta, t),
        None => out.theta.theta.clone(),
    };
    match &args.out {
        Some(path) => save_matrix_csv(path, &theta)?,
        None => io::write_matrix_csv(&mut *stdout, &theta).map_err(|source| IoError::File { path: "<stdout>".into(), source })?,
    }
    if let Some(path) = &args.trace {
        save_trace_jsonl(path, &out.trace)?;
    }

    let last = out.trace.last().map_or(f64::NAN, |r| r.lambda);
    let (status, code) = match out.termination {
        DpngsTermination::Converged => ("converged", EXIT_CONVERGED),
        DpngsTermination::IterationCap => ("stopped at the iteration cap", EXIT_ITERATION_CAP),
    };
    let _ = writeln!(stderr, "{status} after {} iterations, lambda = {last:e}", out.trace.len());
    Ok(code)
}
