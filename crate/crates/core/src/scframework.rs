//! Two-phase proximal Newton engine for `min f(x) + g(x)` with `f`
//! self-concordant and `g` convex, plus the scalar helpers its analysis uses.
//!
//! Phase 1 takes damped steps `x + d / (1 + lambda)`; once the decrement
//! drops below `sigma` the engine switches to full steps `x + d`. No line
//! search and no objective evaluations are needed on the hot path.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::linalg::SymmetricMatrix;

/// `(5 - sqrt(17)) / 4`, the radius of the full-step quadratic convergence region.
pub const SIGMA_BAR: f64 = 0.219_223_593_595_584_8;

/// `sqrt(5) - 2`, the (larger) region for the damped scheme.
pub const SIGMA_BAR_DAMPED: f64 = 0.236_067_977_499_789_7;

/// `1 - 1/sqrt(2)`, where the contraction bounds stop being finite.
pub const CONTRACTION_LIMIT: f64 = 0.292_893_218_813_452_5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalarDomainError {
    #[error("{name} requires {requirement}, got {value}")]
    OutOfDomain { name: &'static str, requirement: &'static str, value: f64 },
}

fn out_of_domain(name: &'static str, requirement: &'static str, value: f64) -> ScalarDomainError {
    ScalarDomainError::OutOfDomain { name, requirement, value }
}

/// `omega(t) = t - ln(1 + t)`.
pub fn omega(t: f64) -> Result<f64, ScalarDomainError> {
    if !(t >= 0.0) {
        return Err(out_of_domain("omega", "t >= 0", t));
    }
    Ok(t - t.ln_1p())
}

/// `omega_*(t) = -t - ln(1 - t)` on `[0, 1)`.
pub fn omega_star(t: f64) -> Result<f64, ScalarDomainError> {
    if !(0.0..1.0).contains(&t) {
        return Err(out_of_domain("omega_star", "0 <= t < 1", t));
    }
    Ok(-t - (-t).ln_1p())
}

/// The analytic damped step `1 / (1 + lambda)`.
pub fn damped_step_size(lambda: f64) -> Result<f64, ScalarDomainError> {
    if !(lambda >= 0.0) {
        return Err(out_of_domain("damped_step_size", "lambda >= 0", lambda));
    }
    Ok(1.0 / (1.0 + lambda))
}

/// Full-step contraction bound `lambda^2 / (1 - 4 lambda + 2 lambda^2)`.
pub fn fpn_contraction_bound(lambda: f64) -> Result<f64, ScalarDomainError> {
    if !(0.0..CONTRACTION_LIMIT).contains(&lambda) {
        return Err(out_of_domain("fpn_contraction_bound", "0 <= lambda < 1 - 1/sqrt(2)", lambda));
    }
    Ok(lambda * lambda / (1.0 - 4.0 * lambda + 2.0 * lambda * lambda))
}

/// Damped-step contraction bound `2 lambda^2 / (1 - 2 lambda - lambda^2)`.
pub fn damped_contraction_bound(lambda: f64) -> Result<f64, ScalarDomainError> {
    if !(0.0..CONTRACTION_LIMIT).contains(&lambda) {
        return Err(out_of_domain("damped_contraction_bound", "0 <= lambda < 1 - 1/sqrt(2)", lambda));
    }
    Ok(2.0 * lambda * lambda / (1.0 - 2.0 * lambda - lambda * lambda))
}

/// Worst-case number of damped iterations, `floor((F0 - F*) / omega(sigma)) + 1`.
///
/// Diagnostic only; the engine never uses it as a stopping rule.
pub fn phase1_iteration_cap(f0: f64, f_star: f64, sigma: f64) -> Result<u64, ScalarDomainError> {
    if !(f0 >= f_star) {
        return Err(out_of_domain("phase1_iteration_cap", "f0 >= f_star", f0 - f_star));
    }
    if !(sigma > 0.0 && sigma <= SIGMA_BAR) {
        return Err(out_of_domain("phase1_iteration_cap", "0 < sigma <= (5 - sqrt(17)) / 4", sigma));
    }
    let per_step = omega(sigma)?;
    Ok(((f0 - f_star) / per_step).floor() as u64 + 1)
}

/// Points the engine can move along a direction: `x += alpha * d`.
pub trait Iterate: Clone {
    fn add_scaled(&mut self, alpha: f64, direction: &Self);
}

impl Iterate for Vec<f64> {
    fn add_scaled(&mut self, alpha: f64, direction: &Self) {
        assert_eq!(self.len(), direction.len(), "iterate and direction lengths differ");
        for (x, d) in self.iter_mut().zip(direction) {
            *x += alpha * d;
        }
    }
}

impl Iterate for SymmetricMatrix {
    fn add_scaled(&mut self, alpha: f64, direction: &Self) {
        SymmetricMatrix::add_scaled(self, alpha, direction).expect("iterate and direction dimensions differ");
    }
}

/// The smooth, self-concordant part `f`.
pub trait SmoothOracle<P> {
    /// `f(x)`, or `+inf` outside the domain.
    fn value(&self, x: &P) -> f64;
    fn gradient(&self, x: &P) -> P;
    fn hessian_apply(&self, x: &P, v: &P) -> P;
    fn in_domain(&self, x: &P) -> bool;
}

/// The nonsmooth convex part `g`. Only its value is needed, for diagnostics.
pub trait ProxRegularizer<P> {
    fn value(&self, x: &P) -> f64;
}

/// A proximal Newton direction together with its decrement `||d||_x`.
#[derive(Debug, Clone)]
pub struct NewtonStep<P> {
    pub direction: P,
    pub decrement: f64,
    pub inner_iters: usize,
}

/// Solves the proximal Newton subproblem at `x`.
pub trait SubproblemSolver<P> {
    type Error: std::error::Error + Send + Sync + 'static;

    fn solve(&mut self, x: &P) -> Result<NewtonStep<P>, Self::Error>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    /// Phase switch radius, in `(0, SIGMA_BAR]`.
    pub sigma: f64,
    /// Stopping tolerance on the decrement.
    pub eps: f64,
    pub j_max: usize,
    pub k_max: usize,
    /// When false the engine stays in the damped phase until `lambda <= eps`.
    pub full_step_phase: bool,
    /// Record `F(x)` in the trace. Off by default since it may need a factorization.
    pub record_objective: bool,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            sigma: SIGMA_BAR,
            eps: 1e-6,
            j_max: 200,
            k_max: 100,
            full_step_phase: true,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("sigma must lie in (0, {SIGMA_BAR}], got {0}")]
    Sigma(f64),
    #[error("eps must be positive, got {0}")]
    Eps(f64),
    #[error("iteration caps must be positive")]
    Caps,
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.sigma > 0.0 && self.sigma <= SIGMA_BAR) {
            return Err(ConfigError::Sigma(self.sigma));
        }
        if !(self.eps > 0.0) {
            return Err(ConfigError::Eps(self.eps));
        }
        if self.j_max == 0 || (self.full_step_phase && self.k_max == 0) {
            return Err(ConfigError::Caps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Damped,
    Full,
}

/// One row per decrement evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub phase: Phase,
    pub lambda: f64,
    /// The step applied at this row (or that would have been, on the final row).
    pub alpha: f64,
    /// `F(x_iter)` when objective recording is on.
    pub objective: Option<f64>,
    pub inner_iters: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    Phase1Cap,
    Phase2Cap,
}

#[derive(Debug, Clone)]
pub struct Outcome<P> {
    pub solution: P,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("subproblem solve failed at iteration {iter}: {source}")]
    Subproblem {
        iter: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("iterate left the domain of f after iteration {iter} (lambda = {lambda}, alpha = {alpha})")]
    LeftDomain { iter: usize, lambda: f64, alpha: f64 },
    #[error("subproblem returned invalid decrement {lambda} at iteration {iter}")]
    BadDecrement { iter: usize, lambda: f64 },
}

/// Hooks the engine calls around each iteration.
pub trait Monitor<P> {
    fn in_domain(&self, _x: &P) -> bool {
        true
    }

    fn objective(&self, _x: &P) -> Option<f64> {
        None
    }

    /// Called with each trace row and the iterate it was computed at.
    fn observe(&mut self, _record: &IterationRecord, _x: &P) {}
}

/// A monitor that checks nothing and records nothing.
pub struct NoMonitor;

impl<P> Monitor<P> for NoMonitor {}

struct CompositeMonitor<'a, F, G> {
    f: &'a F,
    g: &'a G,
}

impl<P, F: SmoothOracle<P>, G: ProxRegularizer<P>> Monitor<P> for CompositeMonitor<'_, F, G> {
    fn in_domain(&self, x: &P) -> bool {
        self.f.in_domain(x)
    }

    fn objective(&self, x: &P) -> Option<f64> {
        Some(self.f.value(x) + self.g.value(x))
    }
}

/// Runs the two-phase scheme on `f + g` with the given subproblem solver.
pub fn run_two_phase<P, F, G, S>(f: &F, g: &G, sub: &mut S, x0: P, cfg: &PhaseConfig) -> Result<Outcome<P>, EngineError>
where
    P: Iterate,
    F: SmoothOracle<P>,
    G: ProxRegularizer<P>,
    S: SubproblemSolver<P>,
{
    if !f.in_domain(&x0) {
        return Err(EngineError::LeftDomain { iter: 0, lambda: f64::NAN, alpha: f64::NAN });
    }
    let mut monitor = CompositeMonitor { f, g };
    run_phases(sub, x0, cfg, &mut monitor)
}

/// The engine proper, with domain checks and diagnostics supplied by `monitor`.
pub fn run_phases<P, S, M>(sub: &mut S, x0: P, cfg: &PhaseConfig, monitor: &mut M) -> Result<Outcome<P>, EngineError>
where
    P: Iterate,
    S: SubproblemSolver<P>,
    M: Monitor<P> + ?Sized,
{
    cfg.validate()?;
    let mut x = x0;
    let mut trace = Vec::new();
    let mut phase = Phase::Damped;
    let mut damped_steps = 0usize;
    let mut full_steps = 0usize;

    loop {
        let started = Instant::now();
        let iter = trace.len();
        let step = sub.solve(&x).map_err(|e| EngineError::Subproblem { iter, source: Box::new(e) })?;
        let lambda = step.decrement;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(EngineError::BadDecrement { iter, lambda });
        }

        match phase {
            Phase::Damped if cfg.full_step_phase && lambda <= cfg.sigma => phase = Phase::Full,
            // Only reachable with inexact subproblem solves.
            Phase::Full if lambda > cfg.sigma => phase = Phase::Damped,
            _ => {}
        }
        let alpha = match phase {
            Phase::Damped => 1.0 / (1.0 + lambda),
            Phase::Full => 1.0,
        };
        let objective = if cfg.record_objective { monitor.objective(&x) } else { None };
        let converged = lambda <= cfg.eps;

        let mut record = IterationRecord {
            iter,
            phase,
            lambda,
            alpha,
            objective,
            inner_iters: step.inner_iters,
            elapsed: Duration::ZERO,
        };
        if converged {
            record.elapsed = started.elapsed();
            monitor.observe(&record, &x);
            trace.push(record);
            return Ok(Outcome { solution: x, trace, termination: Termination::Converged });
        }

        let snapshot = x.clone();
        x.add_scaled(alpha, &step.direction);
        record.elapsed = started.elapsed();
        monitor.observe(&record, &snapshot);
        trace.push(record);

        if !monitor.in_domain(&x) {
            return Err(EngineError::LeftDomain { iter, lambda, alpha });
        }
        match phase {
            Phase::Damped => {
                damped_steps += 1;
                if damped_steps >= cfg.j_max {
                    return Ok(Outcome { solution: x, trace, termination: Termination::Phase1Cap });
                }
            }
            Phase::Full => {
                full_steps += 1;
                if full_steps >= cfg.k_max {
                    return Ok(Outcome { solution: x, trace, termination: Termination::Phase2Cap });
                }
            }
        }
    }
}

/// Separable test instance: `f(x) = sum(-ln x_i) + c^T x`, `g(x) = rho ||x||_1`.
///
/// Its Hessian is diagonal, so the subproblem has a closed form (a weighted
/// soft-threshold), which makes it a convenient exact reference for the engine.
pub mod separable {
    use std::convert::Infallible;

    use super::{NewtonStep, ProxRegularizer, SmoothOracle, SubproblemSolver};

    #[derive(Debug, Clone)]
    pub struct LogBarrierLinear {
        pub c: Vec<f64>,
    }

    impl SmoothOracle<Vec<f64>> for LogBarrierLinear {
        fn value(&self, x: &Vec<f64>) -> f64 {
            if !self.in_domain(x) {
                return f64::INFINITY;
            }
            x.iter().zip(&self.c).map(|(xi, ci)| -xi.ln() + ci * xi).sum()
        }

        fn gradient(&self, x: &Vec<f64>) -> Vec<f64> {
            x.iter().zip(&self.c).map(|(xi, ci)| -1.0 / xi + ci).collect()
        }

        fn hessian_apply(&self, x: &Vec<f64>, v: &Vec<f64>) -> Vec<f64> {
            x.iter().zip(v).map(|(xi, vi)| vi / (xi * xi)).collect()
        }

        fn in_domain(&self, x: &Vec<f64>) -> bool {
            x.len() == self.c.len() && x.iter().all(|&v| v > 0.0 && v.is_finite())
        }
    }

    #[derive(Debug, Clone, Copy)]
    pub struct L1Norm {
        pub rho: f64,
    }

    impl ProxRegularizer<Vec<f64>> for L1Norm {
        fn value(&self, x: &Vec<f64>) -> f64 {
            self.rho * x.iter().map(|v| v.abs()).sum::<f64>()
        }
    }

    /// Exact prox-Newton step for [`LogBarrierLinear`] + [`L1Norm`].
    #[derive(Debug, Clone)]
    pub struct DiagonalProxNewton {
        pub f: LogBarrierLinear,
        pub rho: f64,
    }

    impl SubproblemSolver<Vec<f64>> for DiagonalProxNewton {
        type Error = Infallible;

        fn solve(&mut self, x: &Vec<f64>) -> Result<NewtonStep<Vec<f64>>, Infallible> {
            let grad = self.f.gradient(x);
            let mut direction = Vec::with_capacity(x.len());
            let mut local_sq = 0.0;
            for ((&xi, &gi), _) in x.iter().zip(&grad).zip(&self.f.c) {
                let h = 1.0 / (xi * xi);
                let z = xi - gi / h;
                let thr = self.rho / h;
                let y = z.signum() * (z.abs() - thr).max(0.0);
                let d = y - xi;
                local_sq += h * d * d;
                direction.push(d);
            }
            Ok(NewtonStep { direction, decrement: local_sq.sqrt(), inner_iters: 1 })
        }
    }
}
