//! Objective values for the precision-matrix problem.
//!
//! Evaluating `F(Theta)` needs `log det(Theta)`, which this crate gets from a
//! Cholesky factorization. The solver itself never calls into here; these are
//! opt-in monitors for traces and tests.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use dpngs::graph::{GraphProblem, L1Penalty};
use dpngs::linalg::{PrecisionIterate, SymmetricMatrix};
use dpngs::scframework::{IterationRecord, Monitor, ProxRegularizer};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: theta is {theta}x{theta}, covariance is {sigma}x{sigma}")]
    Dimension { theta: usize, sigma: usize },
}

pub fn to_dmatrix(m: &SymmetricMatrix) -> DMatrix<f64> {
    let p = m.dim();
    DMatrix::from_fn(p, p, |i, j| m.get(i, j))
}

/// `log det(Theta)`, or an error if the Cholesky factorization fails.
pub fn log_det(theta: &SymmetricMatrix) -> Result<f64, DiagnosticsError> {
    let chol = to_dmatrix(theta).cholesky().ok_or(DiagnosticsError::NotPositiveDefinite)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn is_positive_definite(theta: &SymmetricMatrix) -> bool {
    to_dmatrix(theta).cholesky().is_some()
}

/// `F(Theta) = -log det(Theta) + tr(S Theta) + rho ||vec(Theta)||_1`.
pub fn objective_value(theta: &PrecisionIterate, prob: &GraphProblem) -> Result<f64, DiagnosticsError> {
    if theta.dim() != prob.dim() {
        return Err(DiagnosticsError::Dimension { theta: theta.dim(), sigma: prob.dim() });
    }
    let ld = log_det(&theta.theta)?;
    let linear = prob.sigma_hat().frobenius_dot(&theta.theta).expect("dimensions checked above");
    Ok(-ld + linear + L1Penalty { rho: prob.rho() }.value(&theta.theta))
}

/// Supplies `F(Theta)` to the trace and rejects iterates that fail to factorize.
pub struct ObjectiveMonitor<'a> {
    prob: &'a GraphProblem,
}

impl<'a> ObjectiveMonitor<'a> {
    pub fn new(prob: &'a GraphProblem) -> Self {
        Self { prob }
    }
}

impl Monitor<SymmetricMatrix> for ObjectiveMonitor<'_> {
    fn in_domain(&self, x: &SymmetricMatrix) -> bool {
        is_positive_definite(x)
    }

    fn objective(&self, x: &SymmetricMatrix) -> Option<f64> {
        objective_value(&PrecisionIterate::new(x.clone()), self.prob).ok()
    }
}

/// Like [`ObjectiveMonitor`], and also keeps a copy of every iterate.
pub struct IterateRecorder<'a> {
    inner: ObjectiveMonitor<'a>,
    pub iterates: Vec<SymmetricMatrix>,
    pub records: Vec<IterationRecord>,
}

impl<'a> IterateRecorder<'a> {
    pub fn new(prob: &'a GraphProblem) -> Self {
        Self { inner: ObjectiveMonitor::new(prob), iterates: Vec::new(), records: Vec::new() }
    }
}

impl Monitor<SymmetricMatrix> for IterateRecorder<'_> {
    fn in_domain(&self, x: &SymmetricMatrix) -> bool {
        self.inner.in_domain(x)
    }

    fn objective(&self, x: &SymmetricMatrix) -> Option<f64> {
        self.inner.objective(x)
    }

    fn observe(&mut self, record: &IterationRecord, x: &SymmetricMatrix) {
        self.iterates.push(x.clone());
        self.records.push(record.clone());
    }
}
