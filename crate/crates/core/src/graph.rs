//! Sparse precision matrix estimation,
//!
//! ```text
//! min_{Theta > 0}  -log det(Theta) + tr(S Theta) + rho ||vec(Theta)||_1,
//! ```
//!
//! solved by damped proximal Newton steps whose subproblem is handled in the
//! dual. With `H^{-1}(V) = Theta V Theta` the dual of the Newton subproblem is
//!
//! ```text
//! min_{||vec(U)||_inf <= 1}  tr((Theta U)^2) / 2 + tr(Q U),   Q = (Theta S Theta - 2 Theta) / rho,
//! ```
//!
//! and the primal direction and decrement come back as products only:
//!
//! ```text
//! Delta  = Theta - Theta (S + rho U) Theta
//! lambda = sqrt(p - 2 tr(W) + tr(W^2)),   W = Theta (S + rho U).
//! ```
//!
//! The step `1 / (1 + lambda)` keeps every iterate positive definite, so the
//! loop never factorizes or inverts anything.

use ndarray::Array2;
use thiserror::Error;

use crate::fpgm::{fpgm_solve, DualIterate, FpgmConfig, FpgmError, FpgmResult, Momentum};
use crate::linalg::{
    largest_eigenvalue, multiply, sandwich, smallest_eigenvalue_probe, sym_multiply, trace_of_square,
    LinalgError, Matrix, PrecisionIterate, SymmetricMatrix, DEFAULT_POWER_MAX_ITERS, DEFAULT_POWER_TOL,
};
use crate::scframework::{
    run_phases, EngineError, IterationRecord, Monitor, NewtonStep, NoMonitor, PhaseConfig, ProxRegularizer,
    SubproblemSolver, Termination, SIGMA_BAR,
};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("rho must be positive and finite, got {0}")]
    Rho(f64),
    #[error("covariance has a negative diagonal entry {value} at {index}")]
    NegativeDiagonal { index: usize, value: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Fpgm(#[from] FpgmError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid solver options: {0}")]
    Options(String),
}

/// Empirical covariance `S` and the l1 weight `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphProblem {
    sigma_hat: SymmetricMatrix,
    rho: f64,
}

impl GraphProblem {
    pub fn new(sigma_hat: SymmetricMatrix, rho: f64) -> Result<Self, GraphError> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(GraphError::Rho(rho));
        }
        if let Some((index, &value)) = sigma_hat.diagonal().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(GraphError::NegativeDiagonal { index, value });
        }
        Ok(Self { sigma_hat, rho })
    }

    pub fn sigma_hat(&self) -> &SymmetricMatrix {
        &self.sigma_hat
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dim(&self) -> usize {
        self.sigma_hat.dim()
    }

    fn check(&self, theta: &SymmetricMatrix) -> Result<(), LinalgError> {
        if theta.dim() != self.dim() {
            return Err(LinalgError::DimensionMismatch { left: theta.dim(), right: self.dim() });
        }
        Ok(())
    }

    /// `S + rho U`.
    fn shifted(&self, u: &SymmetricMatrix) -> Result<SymmetricMatrix, LinalgError> {
        self.sigma_hat.linear_combination(1.0, u, self.rho)
    }
}

/// `rho ||vec(Theta)||_1`, diagonal included.
#[derive(Debug, Clone, Copy)]
pub struct L1Penalty {
    pub rho: f64,
}

impl ProxRegularizer<SymmetricMatrix> for L1Penalty {
    fn value(&self, x: &SymmetricMatrix) -> f64 {
        self.rho * x.as_array().iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// `(Theta S Theta - 2 Theta) / rho`.
pub fn q_tilde(theta: &PrecisionIterate, prob: &GraphProblem) -> Result<SymmetricMatrix, LinalgError> {
    prob.check(&theta.theta)?;
    let tst = sandwich(&theta.theta, &prob.sigma_hat)?;
    tst.linear_combination(1.0 / prob.rho, &theta.theta, -2.0 / prob.rho)
}

/// The dual quadratic at a fixed `Theta`, with `Q` computed once.
#[derive(Debug, Clone)]
pub struct DualQuadratic<'a> {
    theta: &'a SymmetricMatrix,
    q: SymmetricMatrix,
}

impl<'a> DualQuadratic<'a> {
    pub fn new(theta: &'a PrecisionIterate, prob: &GraphProblem) -> Result<Self, LinalgError> {
        let q = q_tilde(theta, prob)?;
        Ok(Self { theta: &theta.theta, q })
    }

    pub fn q(&self) -> &SymmetricMatrix {
        &self.q
    }

    /// `Theta U Theta + Q`.
    pub fn gradient(&self, u: &SymmetricMatrix) -> Result<SymmetricMatrix, LinalgError> {
        sandwich(self.theta, u)?.linear_combination(1.0, &self.q, 1.0)
    }

    /// `tr((Theta U)^2) / 2 + tr(Q U)`.
    pub fn objective(&self, u: &SymmetricMatrix) -> Result<f64, LinalgError> {
        let tut = sandwich(self.theta, u)?;
        Ok(0.5 * tut.frobenius_dot(u)? + self.q.frobenius_dot(u)?)
    }
}

/// Gradient of the dual objective at `U` (which need not be feasible).
pub fn dual_gradient(u: &SymmetricMatrix, theta: &PrecisionIterate, prob: &GraphProblem) -> Result<SymmetricMatrix, LinalgError> {
    prob.check(u)?;
    DualQuadratic::new(theta, prob)?.gradient(u)
}

/// Power-iteration settings used for the Lipschitz constant `L = gamma_max(Theta)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PowerSettings {
    fn default() -> Self {
        Self { tol: DEFAULT_POWER_TOL, max_iters: DEFAULT_POWER_MAX_ITERS }
    }
}

pub fn solve_dual_subproblem(
    theta: &PrecisionIterate,
    prob: &GraphProblem,
    cfg: &FpgmConfig,
    warm: &DualIterate,
) -> Result<FpgmResult, GraphError> {
    solve_dual_subproblem_with(theta, prob, cfg, warm, PowerSettings::default())
}

pub fn solve_dual_subproblem_with(
    theta: &PrecisionIterate,
    prob: &GraphProblem,
    cfg: &FpgmConfig,
    warm: &DualIterate,
    power: PowerSettings,
) -> Result<FpgmResult, GraphError> {
    prob.check(&theta.theta)?;
    prob.check(warm.matrix())?;
    let dual = DualQuadratic::new(theta, prob)?;

    let mut lipschitz = match cfg.lipschitz {
        Some(l) => l,
        None => {
            let gamma = largest_eigenvalue(&theta.theta, power.tol, power.max_iters).value;
            gamma * gamma
        }
    };
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(FpgmError::Lipschitz(lipschitz).into());
    }

    // Power iteration approaches gamma_max from below; if the first projected
    // step fails to decrease the dual objective, double L once.
    if cfg.lipschitz.is_none() {
        let u0 = warm.matrix();
        let v1 = u0.linear_combination(1.0, &dual.gradient(u0)?, -1.0 / lipschitz)?.clipped_unit();
        if dual.objective(&v1)? > dual.objective(u0)? + 1e-12 {
            lipschitz *= 2.0;
        }
    }

    let mut cfg = cfg.clone();
    if let Momentum::StronglyConvex { mu: None } = cfg.momentum {
        let gamma_min = smallest_eigenvalue_probe(&theta.theta).value.max(0.0);
        let mu = (gamma_min * gamma_min).min(lipschitz);
        cfg.momentum = Momentum::StronglyConvex { mu: Some(mu) };
    }
    Ok(fpgm_solve(|u| dual.gradient(u), lipschitz, warm, &cfg)?)
}

/// `Delta = -((Theta S - I) Theta + rho Theta U Theta)`, symmetrized.
pub fn primal_direction(theta: &PrecisionIterate, u_star: &DualIterate, prob: &GraphProblem) -> Result<SymmetricMatrix, LinalgError> {
    prob.check(&theta.theta)?;
    prob.check(u_star.matrix())?;
    let shifted = prob.shifted(u_star.matrix())?;
    theta.theta.linear_combination(1.0, &sandwich(&theta.theta, &shifted)?, -1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decrement {
    pub value: f64,
    /// The radicand came out negative (roundoff near convergence) and was clamped to zero.
    pub clamped: bool,
}

/// `p - 2 tr(W) + tr(W^2)` evaluated as `tr((I - W)^2)`, which avoids the
/// cancellation of the expanded form when `W` is close to `I`.
fn decrement_from_w(w: &Matrix) -> Decrement {
    let residual = Matrix::from_array(Array2::eye(w.dim()) - w.as_array()).expect("finite product");
    let radicand = trace_of_square(&residual);
    if radicand < 0.0 {
        Decrement { value: 0.0, clamped: true }
    } else {
        Decrement { value: radicand.sqrt(), clamped: false }
    }
}

/// `lambda = sqrt(p - 2 tr(W) + tr(W^2))` with `W = Theta (S + rho U)`.
pub fn decrement(theta: &PrecisionIterate, u_star: &DualIterate, prob: &GraphProblem) -> Result<Decrement, LinalgError> {
    prob.check(&theta.theta)?;
    prob.check(u_star.matrix())?;
    let w = sym_multiply(&theta.theta, &prob.shifted(u_star.matrix())?)?;
    Ok(decrement_from_w(&w))
}

/// `diag(1 / (S_ii + rho))`.
pub fn default_theta0(prob: &GraphProblem) -> PrecisionIterate {
    let diag: Vec<f64> = prob.sigma_hat.diagonal().iter().map(|s| 1.0 / (s + prob.rho)).collect();
    PrecisionIterate::new(SymmetricMatrix::from_diagonal(&diag).expect("diagonal of a valid problem is finite"))
}

/// Hard-thresholds off-diagonal entries with `|value| < threshold` to zero.
pub fn sparsify(theta: &PrecisionIterate, threshold: f64) -> SymmetricMatrix {
    theta
        .theta
        .map_entries(|i, j, v| if i != j && v.abs() < threshold { 0.0 } else { v })
        .expect("thresholding keeps entries finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpngsOptions {
    /// Stop once `lambda <= outer_eps`.
    pub outer_eps: f64,
    pub i_max: usize,
    pub inner: FpgmConfig,
    /// Switch to full steps inside the quadratic region. Off by default.
    pub full_step_phase: bool,
    /// Ask the monitor for `F(Theta_i)` on every row.
    pub record_objective: bool,
    pub power: PowerSettings,
}

impl Default for DpngsOptions {
    fn default() -> Self {
        Self {
            outer_eps: 1e-6,
            i_max: 200,
            inner: FpgmConfig::exact(),
            full_step_phase: false,
            record_objective: false,
            power: PowerSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpngsTermination {
    Converged,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct DpngsOutcome {
    pub theta: PrecisionIterate,
    /// The last dual solution, `U*` at the returned iterate when converged.
    pub u_star: DualIterate,
    pub trace: Vec<IterationRecord>,
    pub termination: DpngsTermination,
}

/// Loop state carried between outer iterations.
#[derive(Debug, Clone)]
pub struct DpngsState {
    pub u_warm: DualIterate,
    pub iteration: usize,
    pub last_lambda: f64,
    pub last_alpha: f64,
    pub clamped_decrements: usize,
}

/// The dual subproblem solver plugged into the generic engine.
pub struct DualNewtonSubproblem<'a> {
    prob: &'a GraphProblem,
    inner: FpgmConfig,
    power: PowerSettings,
    pub state: DpngsState,
}

impl<'a> DualNewtonSubproblem<'a> {
    pub fn new(prob: &'a GraphProblem, inner: FpgmConfig, power: PowerSettings) -> Self {
        let state = DpngsState {
            u_warm: DualIterate::zeros(prob.dim()),
            iteration: 0,
            last_lambda: f64::NAN,
            last_alpha: 1.0,
            clamped_decrements: 0,
        };
        Self { prob, inner, power, state }
    }
}

impl SubproblemSolver<SymmetricMatrix> for DualNewtonSubproblem<'_> {
    type Error = GraphError;

    fn solve(&mut self, x: &SymmetricMatrix) -> Result<NewtonStep<SymmetricMatrix>, GraphError> {
        let theta = PrecisionIterate::new(x.clone());
        let res = solve_dual_subproblem_with(&theta, self.prob, &self.inner, &self.state.u_warm, self.power)?;

        // W = Theta (S + rho U) serves both the decrement and Delta = Theta - W Theta.
        let shifted = self.prob.shifted(res.u_star.matrix())?;
        let w = sym_multiply(x, &shifted)?;
        let dec = decrement_from_w(&w);
        let w_theta = SymmetricMatrix::from_matrix(multiply(&w, x.as_matrix())?)?;
        let direction = x.linear_combination(1.0, &w_theta, -1.0)?;

        if dec.clamped {
            self.state.clamped_decrements += 1;
        }
        self.state.iteration += 1;
        self.state.last_lambda = dec.value;
        self.state.last_alpha = 1.0 / (1.0 + dec.value);
        self.state.u_warm = res.u_star;
        Ok(NewtonStep { direction, decrement: dec.value, inner_iters: res.iterations })
    }
}

/// Runs the dual proximal Newton loop with default options otherwise.
pub fn dpngs_solve(
    prob: &GraphProblem,
    theta0: PrecisionIterate,
    outer_eps: f64,
    i_max: usize,
    inner: FpgmConfig,
) -> Result<DpngsOutcome, GraphError> {
    let opts = DpngsOptions { outer_eps, i_max, inner, ..DpngsOptions::default() };
    dpngs_solve_monitored(prob, theta0, &opts, &mut NoMonitor)
}

pub fn dpngs_solve_monitored<M>(
    prob: &GraphProblem,
    theta0: PrecisionIterate,
    opts: &DpngsOptions,
    monitor: &mut M,
) -> Result<DpngsOutcome, GraphError>
where
    M: Monitor<SymmetricMatrix> + ?Sized,
{
    prob.check(&theta0.theta)?;
    if !(opts.outer_eps > 0.0) {
        return Err(GraphError::Options(format!("outer_eps must be positive, got {}", opts.outer_eps)));
    }
    if opts.i_max == 0 {
        return Err(GraphError::Options("i_max must be at least 1".into()));
    }
    opts.inner.validate()?;

    let cfg = PhaseConfig {
        sigma: SIGMA_BAR,
        eps: opts.outer_eps,
        j_max: opts.i_max,
        k_max: opts.i_max,
        full_step_phase: opts.full_step_phase,
        record_objective: opts.record_objective,
    };
    let mut sub = DualNewtonSubproblem::new(prob, opts.inner.clone(), opts.power);
    let out = run_phases(&mut sub, theta0.theta, &cfg, monitor)?;
    let termination = match out.termination {
        Termination::Converged => DpngsTermination::Converged,
        Termination::Phase1Cap | Termination::Phase2Cap => DpngsTermination::IterationCap,
    };
    Ok(DpngsOutcome {
        theta: PrecisionIterate::new(out.solution),
        u_star: sub.state.u_warm,
        trace: out.trace,
        termination,
    })
}
