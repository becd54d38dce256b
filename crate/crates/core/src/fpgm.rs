//! Accelerated projected gradient on the unit box `||vec(U)||_inf <= 1`.
//!
//! Solves `min phi(U)` over the box given only the gradient map of `phi` and
//! a Lipschitz constant for it:
//!
//! ```text
//! V_{k+1} = clip_1(U_k - grad(U_k) / L)
//! t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2,  beta_k = (t_k - 1) / t_{k+1}
//! U_{k+1} = V_{k+1} + beta_k (V_{k+1} - V_k)
//! ```
//!
//! stopping once `||V_{k+1} - V_k||_F <= eps * max(||V_k||_F, 1)`.

use thiserror::Error;

use crate::linalg::{LinalgError, SymmetricMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FpgmError {
    #[error("inner tolerance must be positive, got {0}")]
    InnerEps(f64),
    #[error("inner iteration cap must be at least 1")]
    KMax,
    #[error("Lipschitz constant must be positive and finite, got {0}")]
    Lipschitz(f64),
    #[error("momentum requires t >= 1, got {0}")]
    MomentumT(f64),
    #[error("strongly convex momentum needs 0 < mu <= L, got mu = {mu}, L = {lipschitz}")]
    StrongConvexity { lipschitz: f64, mu: f64 },
    #[error("dual iterate has an entry of magnitude {0} outside the unit box")]
    Infeasible(f64),
    #[error("non-finite gradient at inner iteration {iteration}")]
    NonFiniteGradient { iteration: usize, snapshot: Box<SymmetricMatrix> },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The box-constrained dual variable. Every entry lies in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualIterate(SymmetricMatrix);

impl DualIterate {
    pub fn new(u: SymmetricMatrix) -> Result<Self, FpgmError> {
        let m = u.max_abs();
        if m > 1.0 {
            return Err(FpgmError::Infeasible(m));
        }
        Ok(Self(u))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(SymmetricMatrix::zeros(dim))
    }

    /// Projects an arbitrary symmetric matrix onto the box.
    pub fn projected(u: &SymmetricMatrix) -> Self {
        Self(u.clipped_unit())
    }

    pub fn matrix(&self) -> &SymmetricMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> SymmetricMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Momentum {
    /// `t`-sequence momentum starting from `t_0 = 1`.
    Fista,
    /// Constant `(sqrt(L) - sqrt(mu)) / (sqrt(L) + sqrt(mu))`.
    /// `mu = None` lets the caller fill in a strong convexity estimate.
    StronglyConvex { mu: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpgmConfig {
    pub inner_eps: f64,
    pub k_max: usize,
    pub momentum: Momentum,
    /// Use this Lipschitz constant instead of estimating one.
    pub lipschitz: Option<f64>,
}

impl FpgmConfig {
    /// Tight inner solves: `eps = 1e-6`, up to 1000 iterations.
    pub fn exact() -> Self {
        Self { inner_eps: 1e-6, k_max: 1000, momentum: Momentum::Fista, lipschitz: None }
    }

    /// The cheap inexact presets: `k = 5` uses `eps = 1e-4`, `k = 10` uses `1e-5`.
    /// Other `k` use `1e-5`.
    pub fn inexact(k_max: usize) -> Self {
        let inner_eps = if k_max <= 5 { 1e-4 } else { 1e-5 };
        Self { inner_eps, k_max, momentum: Momentum::Fista, lipschitz: None }
    }

    pub fn validate(&self) -> Result<(), FpgmError> {
        if !(self.inner_eps > 0.0) {
            return Err(FpgmError::InnerEps(self.inner_eps));
        }
        if self.k_max == 0 {
            return Err(FpgmError::KMax);
        }
        if let Some(l) = self.lipschitz {
            check_lipschitz(l)?;
        }
        Ok(())
    }
}

impl Default for FpgmConfig {
    fn default() -> Self {
        Self::exact()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpgmResult {
    /// The last projected point `V`, always feasible.
    pub u_star: DualIterate,
    /// Gradient evaluations performed, at most `k_max`.
    pub iterations: usize,
    pub converged: bool,
    /// `||V_{k+1} - V_k||_F` at the last step.
    pub final_step_change: f64,
}

/// What the observer sees after each projected step.
#[derive(Debug)]
pub struct StepObservation<'a> {
    pub k: usize,
    pub v_next: &'a SymmetricMatrix,
    pub step_change: f64,
    /// `eps * max(||V_k||_F, 1)`; the solve stops when `step_change <= threshold`.
    pub threshold: f64,
}

fn check_lipschitz(l: f64) -> Result<(), FpgmError> {
    if l > 0.0 && l.is_finite() {
        Ok(())
    } else {
        Err(FpgmError::Lipschitz(l))
    }
}

pub fn momentum_fista(t: f64) -> Result<(f64, f64), FpgmError> {
    if !(t >= 1.0) {
        return Err(FpgmError::MomentumT(t));
    }
    let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
    Ok((t_next, (t - 1.0) / t_next))
}

pub fn momentum_strongly_convex(lipschitz: f64, mu: f64) -> Result<f64, FpgmError> {
    if !(mu > 0.0 && mu <= lipschitz && lipschitz.is_finite()) {
        return Err(FpgmError::StrongConvexity { lipschitz, mu });
    }
    let (sl, sm) = (lipschitz.sqrt(), mu.sqrt());
    Ok((sl - sm) / (sl + sm))
}

pub fn fpgm_solve<G>(grad_map: G, lipschitz: f64, u0: &DualIterate, cfg: &FpgmConfig) -> Result<FpgmResult, FpgmError>
where
    G: FnMut(&SymmetricMatrix) -> Result<SymmetricMatrix, LinalgError>,
{
    fpgm_solve_observed(grad_map, lipschitz, u0, cfg, |_| {})
}

/// [`fpgm_solve`] with a callback after every projected step.
pub fn fpgm_solve_observed<G, O>(
    mut grad_map: G,
    lipschitz: f64,
    u0: &DualIterate,
    cfg: &FpgmConfig,
    mut observer: O,
) -> Result<FpgmResult, FpgmError>
where
    G: FnMut(&SymmetricMatrix) -> Result<SymmetricMatrix, LinalgError>,
    O: FnMut(&StepObservation<'_>),
{
    cfg.validate()?;
    check_lipschitz(lipschitz)?;
    let constant_beta = match cfg.momentum {
        Momentum::Fista => None,
        Momentum::StronglyConvex { mu: Some(mu) } => Some(momentum_strongly_convex(lipschitz, mu)?),
        Momentum::StronglyConvex { mu: None } => {
            return Err(FpgmError::StrongConvexity { lipschitz, mu: f64::NAN });
        }
    };

    let step = 1.0 / lipschitz;
    let mut v_prev = u0.matrix().clone();
    let mut u = v_prev.clone();
    let mut t = 1.0;
    let mut last_change = 0.0;

    for k in 0..cfg.k_max {
        let grad = grad_map(&u)?;
        if grad.first_non_finite().is_some() {
            return Err(FpgmError::NonFiniteGradient { iteration: k, snapshot: Box::new(u) });
        }
        let v_next = u.linear_combination(1.0, &grad, -step)?.clipped_unit();
        let diff = v_next.linear_combination(1.0, &v_prev, -1.0)?;
        let change = diff.frobenius_norm();
        let threshold = cfg.inner_eps * v_prev.frobenius_norm().max(1.0);
        observer(&StepObservation { k, v_next: &v_next, step_change: change, threshold });
        last_change = change;
        if change <= threshold {
            return Ok(FpgmResult { u_star: DualIterate(v_next), iterations: k + 1, converged: true, final_step_change: change });
        }

        let beta = match constant_beta {
            Some(b) => b,
            None => {
                let (t_next, b) = momentum_fista(t)?;
                t = t_next;
                b
            }
        };
        u = v_next.linear_combination(1.0 + beta, &v_prev, -beta)?;
        v_prev = v_next;
    }

    Ok(FpgmResult { u_star: DualIterate(v_prev), iterations: cfg.k_max, converged: false, final_step_change: last_change })
}
