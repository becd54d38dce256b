//! Slow, simple reference implementations for testing.
//!
//! Everything here is free to invert and factorize. None of it is reachable
//! from the production solver, which is the point: the production results are
//! checked against routines built on a different footing.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use dpngs::graph::GraphProblem;
use dpngs::linalg::{PrecisionIterate, SymmetricMatrix};
use dpngs::scframework::SmoothOracle;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension {dim} exceeds the oracle cap {cap}")]
    TooLarge { dim: usize, cap: usize },
    #[error("reference solver did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
}

pub const KRONECKER_CAP: usize = 16;
pub const REFERENCE_CAP: usize = 32;

pub fn to_dmatrix(m: &SymmetricMatrix) -> DMatrix<f64> {
    let p = m.dim();
    DMatrix::from_fn(p, p, |i, j| m.get(i, j))
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> SymmetricMatrix {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect();
    SymmetricMatrix::from_rows(&rows).expect("oracle matrices are square and finite")
}

fn dense_inverse(theta: &SymmetricMatrix) -> Result<DMatrix<f64>, OracleError> {
    let chol = to_dmatrix(theta).cholesky().ok_or(OracleError::NotPositiveDefinite)?;
    Ok(chol.inverse())
}

pub fn inverse(theta: &SymmetricMatrix) -> Result<SymmetricMatrix, OracleError> {
    Ok(from_dmatrix(&dense_inverse(theta)?))
}

/// Eigenvalues in ascending order.
pub fn eigenvalues(m: &SymmetricMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = to_dmatrix(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `log det` as a sum of logs of eigenvalues.
pub fn log_det_eigen(theta: &SymmetricMatrix) -> Result<f64, OracleError> {
    let eig = eigenvalues(theta);
    if eig[0] <= 0.0 {
        return Err(OracleError::NotPositiveDefinite);
    }
    Ok(eig.iter().map(|v| v.ln()).sum())
}

fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

fn smooth_value(theta: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Option<f64> {
    let chol = theta.clone().cholesky()?;
    let ld = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some(-ld + dot(sigma, theta))
}

/// `F(Theta)` with the log-det from eigenvalues.
pub fn objective_reference(theta: &SymmetricMatrix, prob: &GraphProblem) -> Result<f64, OracleError> {
    let t = to_dmatrix(theta);
    let l1: f64 = t.iter().map(|v| v.abs()).sum();
    Ok(-log_det_eigen(theta)? + dot(&to_dmatrix(prob.sigma_hat()), &t) + prob.rho() * l1)
}

/// `S - Theta^{-1}`.
pub fn gradient_reference(theta: &PrecisionIterate, prob: &GraphProblem) -> Result<SymmetricMatrix, OracleError> {
    check_cap(theta.dim(), REFERENCE_CAP)?;
    let inv = dense_inverse(&theta.theta)?;
    Ok(from_dmatrix(&(to_dmatrix(prob.sigma_hat()) - inv)))
}

fn check_cap(dim: usize, cap: usize) -> Result<(), OracleError> {
    if dim > cap {
        Err(OracleError::TooLarge { dim, cap })
    } else {
        Ok(())
    }
}

/// The explicit `p^2 x p^2` Hessian `Theta^{-1} (x) Theta^{-1}`.
pub fn kronecker_hessian(theta: &PrecisionIterate) -> Result<DMatrix<f64>, OracleError> {
    check_cap(theta.dim(), KRONECKER_CAP)?;
    let inv = dense_inverse(&theta.theta)?;
    Ok(inv.kronecker(&inv))
}

/// Column-stacked `vec(V)`.
pub fn vec(v: &SymmetricMatrix) -> nalgebra::DVector<f64> {
    let p = v.dim();
    nalgebra::DVector::from_fn(p * p, |k, _| v.get(k % p, k / p))
}

pub fn unvec(x: &nalgebra::DVector<f64>, p: usize) -> SymmetricMatrix {
    from_dmatrix(&DMatrix::from_fn(p, p, |i, j| x[j * p + i]))
}

/// `mat(H vec(V))` through the explicit Kronecker product, i.e. `Theta^{-1} V Theta^{-1}`.
pub fn kronecker_hessian_apply(theta: &PrecisionIterate, v: &SymmetricMatrix) -> Result<SymmetricMatrix, OracleError> {
    let h = kronecker_hessian(theta)?;
    Ok(unvec(&(h * vec(v)), theta.dim()))
}

/// `sqrt(vec(D)^T (Theta^{-1} (x) Theta^{-1}) vec(D))`.
pub fn local_norm(theta: &PrecisionIterate, d: &SymmetricMatrix) -> Result<f64, OracleError> {
    let h = kronecker_hessian(theta)?;
    let x = vec(d);
    Ok(x.dot(&(h * &x)).max(0.0).sqrt())
}

/// `sqrt(vec(G)^T (Theta (x) Theta) vec(G))`, the dual local norm.
pub fn dual_local_norm(theta: &PrecisionIterate, g: &SymmetricMatrix) -> Result<f64, OracleError> {
    check_cap(theta.dim(), KRONECKER_CAP)?;
    let t = to_dmatrix(&theta.theta);
    let h = t.kronecker(&t);
    let x = vec(g);
    Ok(x.dot(&(h * &x)).max(0.0).sqrt())
}

/// Smooth part `-log det(Theta) + tr(S Theta)` with dense inverses, for the generic engine.
pub struct LogDetLikelihood<'a> {
    pub prob: &'a GraphProblem,
}

impl SmoothOracle<SymmetricMatrix> for LogDetLikelihood<'_> {
    fn value(&self, x: &SymmetricMatrix) -> f64 {
        smooth_value(&to_dmatrix(x), &to_dmatrix(self.prob.sigma_hat())).unwrap_or(f64::INFINITY)
    }

    fn gradient(&self, x: &SymmetricMatrix) -> SymmetricMatrix {
        gradient_reference(&PrecisionIterate::new(x.clone()), self.prob).expect("gradient requested outside the domain")
    }

    fn hessian_apply(&self, x: &SymmetricMatrix, v: &SymmetricMatrix) -> SymmetricMatrix {
        let inv = dense_inverse(x).expect("Hessian requested outside the domain");
        from_dmatrix(&(&inv * to_dmatrix(v) * &inv))
    }

    fn in_domain(&self, x: &SymmetricMatrix) -> bool {
        to_dmatrix(x).cholesky().is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub theta: PrecisionIterate,
    pub objective: f64,
    pub iterations: usize,
    /// Frobenius norm of the final prox-gradient mapping.
    pub residual: f64,
}

fn soft_threshold(x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    x.map(|v| v.signum() * (v.abs() - tau).max(0.0))
}

pub const REFERENCE_MAX_ITERS: usize = 2_000_000;

/// Primal proximal gradient on `F` from `diag(1 / (S_ii + rho))`.
pub fn primal_pg_reference(prob: &GraphProblem, tol: f64) -> Result<ReferenceSolution, OracleError> {
    let start = dpngs::default_theta0(prob);
    primal_pg_reference_from(prob, tol, &start.theta)
}

/// Primal proximal gradient with Barzilai-Borwein steps and backtracking that
/// keeps every iterate positive definite. Stops once the prox-gradient mapping
/// `||(Theta - Theta+) / t||_F` is at most `tol`.
pub fn primal_pg_reference_from(
    prob: &GraphProblem,
    tol: f64,
    start: &SymmetricMatrix,
) -> Result<ReferenceSolution, OracleError> {
    if !(tol > 0.0) {
        return Err(OracleError::Tolerance(tol));
    }
    check_cap(prob.dim(), REFERENCE_CAP)?;
    let sigma = to_dmatrix(prob.sigma_hat());
    let rho = prob.rho();
    let mut theta = to_dmatrix(start);
    let mut f = smooth_value(&theta, &sigma).ok_or(OracleError::NotPositiveDefinite)?;
    let mut grad = &sigma - theta.clone().cholesky().ok_or(OracleError::NotPositiveDefinite)?.inverse();
    let mut step = 1.0;
    let mut residual = f64::INFINITY;

    for iter in 0..REFERENCE_MAX_ITERS {
        let (next, f_next) = loop {
            let cand = soft_threshold(&(&theta - step * &grad), step * rho);
            let cand = (&cand + cand.transpose()) * 0.5;
            let d = &cand - &theta;
            if let Some(fc) = smooth_value(&cand, &sigma) {
                if fc <= f + dot(&grad, &d) + dot(&d, &d) / (2.0 * step) + 1e-14 * f.abs().max(1.0) {
                    break (cand, fc);
                }
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(OracleError::NoConvergence { iterations: iter, residual });
            }
        };
        let s = &next - &theta;
        residual = s.norm() / step;
        let grad_next = &sigma - next.clone().cholesky().ok_or(OracleError::NotPositiveDefinite)?.inverse();
        if residual <= tol {
            let theta = from_dmatrix(&next);
            let objective = objective_reference(&theta, prob)?;
            return Ok(ReferenceSolution { theta: PrecisionIterate::new(theta), objective, iterations: iter + 1, residual });
        }
        let y = &grad_next - &grad;
        let sy = dot(&s, &y);
        step = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-12, 1e12) } else { step * 2.0 };
        theta = next;
        f = f_next;
        grad = grad_next;
    }
    Err(OracleError::NoConvergence { iterations: REFERENCE_MAX_ITERS, residual })
}

/// Unaccelerated projected gradient on the dual box problem at `Theta`,
/// with the exact Lipschitz constant and `Q` formed densely.
pub fn projected_gradient_dual(
    theta: &PrecisionIterate,
    prob: &GraphProblem,
    tol: f64,
    max_iters: usize,
) -> Result<(SymmetricMatrix, usize), OracleError> {
    let t = to_dmatrix(&theta.theta);
    let s = to_dmatrix(prob.sigma_hat());
    let rho = prob.rho();
    let q = (&t * &s * &t - 2.0 * &t) / rho;
    let gamma = eigenvalues(&theta.theta).last().copied().unwrap_or(0.0);
    let lipschitz = gamma * gamma;
    let mut u = DMatrix::zeros(t.nrows(), t.ncols());
    for k in 0..max_iters {
        let g = &t * &u * &t + &q;
        let next = (&u - g / lipschitz).map(|v| v.clamp(-1.0, 1.0));
        let change = (&next - &u).norm();
        u = next;
        if change <= tol {
            return Ok((from_dmatrix(&u), k + 1));
        }
    }
    Err(OracleError::NoConvergence { iterations: max_iters, residual: f64::NAN })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub objective_gap: f64,
    pub frobenius_gap: f64,
    /// Fraction of entries on which the zero patterns agree after thresholding both.
    pub support_agreement: f64,
    pub reference_iters: usize,
}

pub fn compare(
    candidate: &PrecisionIterate,
    reference: &ReferenceSolution,
    prob: &GraphProblem,
    threshold: f64,
) -> Result<OracleReport, OracleError> {
    let f = objective_reference(&candidate.theta, prob)?;
    let p = prob.dim();
    let mut agree = 0usize;
    let mut gap = 0.0;
    for i in 0..p {
        for j in 0..p {
            let a = candidate.theta.get(i, j);
            let b = reference.theta.theta.get(i, j);
            gap += (a - b) * (a - b);
            if (a.abs() >= threshold || i == j) == (b.abs() >= threshold || i == j) {
                agree += 1;
            }
        }
    }
    Ok(OracleReport {
        objective_gap: (f - reference.objective).abs(),
        frobenius_gap: gap.sqrt(),
        support_agreement: agree as f64 / (p * p) as f64,
        reference_iters: reference.iterations,
    })
}

/// A sparse ground-truth precision matrix: unit diagonal plus a few symmetric
/// off-diagonal couplings, made diagonally dominant.
pub fn sparse_precision(seed: u64, p: usize, density: f64) -> SymmetricMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coin = Uniform::new(0.0, 1.0).expect("valid range");
    let weight = Uniform::new(0.2, 0.5).expect("valid range");
    let mut m = DMatrix::<f64>::identity(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            if coin.sample(&mut rng) < density {
                let sign = if coin.sample(&mut rng) < 0.5 { -1.0 } else { 1.0 };
                let w = sign * weight.sample(&mut rng);
                m[(i, j)] = w;
                m[(j, i)] = w;
            }
        }
    }
    for i in 0..p {
        let off: f64 = (0..p).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        m[(i, i)] = off.max(1.0) + 0.2;
    }
    from_dmatrix(&m)
}

/// `m` Gaussian samples drawn with precision `theta_true`, one per row.
pub fn gaussian_samples(seed: u64, theta_true: &SymmetricMatrix, m: usize) -> Vec<Vec<f64>> {
    let p = theta_true.dim();
    let cov = dense_inverse(theta_true).expect("ground truth is positive definite");
    let l = cov.cholesky().expect("covariance is positive definite").l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    (0..m)
        .map(|_| {
            let z = nalgebra::DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            (&l * z).iter().copied().collect()
        })
        .collect()
}

/// Maximum-likelihood covariance of the rows (normalized by `1/m`).
pub fn two_pass_covariance(samples: &[Vec<f64>]) -> SymmetricMatrix {
    let m = samples.len();
    let p = samples[0].len();
    let mut mean = vec![0.0; p];
    for x in samples {
        for (a, v) in mean.iter_mut().zip(x) {
            *a += v / m as f64;
        }
    }
    let s = DMatrix::from_fn(p, p, |i, j| {
        samples.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / m as f64
    });
    from_dmatrix(&s)
}

/// A random instance: empirical covariance of `m` samples from a sparse model.
pub fn random_instance(seed: u64, p: usize, m: usize, rho: f64) -> GraphProblem {
    let truth = sparse_precision(seed, p, 0.3);
    let samples = gaussian_samples(seed, &truth, m);
    GraphProblem::new(two_pass_covariance(&samples), rho).expect("valid instance")
}
