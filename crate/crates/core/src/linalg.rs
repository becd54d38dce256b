//! Dense square matrices and the few kernels the solver is built from:
//! products, traces, the unit-box clip and power iteration.
//!
//! Nothing in this module factorizes or inverts a matrix. Every kernel is a
//! product, a reduction or an elementwise map.

use std::ops::Deref;

use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix must have at least one row")]
    Empty,
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// A dense square `p x p` matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Array2<f64>,
}

impl Matrix {
    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows != cols {
            return Err(LinalgError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(LinalgError::Empty);
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(LinalgError::Empty);
        }
        let mut data = Array2::zeros((n, n));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(LinalgError::NotSquare { rows: n, cols: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                data[[i, j]] = v;
            }
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "matrix dimension must be positive");
        Self { data: Array2::zeros((dim, dim)) }
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim > 0, "matrix dimension must be positive");
        Self { data: Array2::eye(dim) }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[[row, col]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix { data: self.data.t().to_owned() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entry, `||vec(A)||_inf`.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .indexed_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(idx, _)| idx)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

/// A dense symmetric matrix with finite entries.
///
/// Construction symmetrizes its input as `(A + A^T) / 2`, so the stored value
/// is exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    inner: Matrix,
}

impl SymmetricMatrix {
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if let Some((row, col)) = m.first_non_finite() {
            return Err(LinalgError::NonFinite { row, col });
        }
        let mut data = m.into_array();
        symmetrize_in_place(&mut data);
        Ok(Self { inner: Matrix { data } })
    }

    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        Self::from_matrix(Matrix::from_array(data)?)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(Matrix::from_rows(rows)?)
    }

    pub fn zeros(dim: usize) -> Self {
        Self { inner: Matrix::zeros(dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { inner: Matrix::identity(dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.is_empty() {
            return Err(LinalgError::Empty);
        }
        if let Some(i) = diag.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { row: i, col: i });
        }
        let data = Array2::from_diag(&Array1::from(diag.to_vec()));
        Ok(Self { inner: Matrix { data } })
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.inner.data.diag().to_vec()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { inner: Matrix { data: &self.inner.data * factor } }
    }

    /// `self += alpha * other`. Keeps exact symmetry since both operands are symmetric.
    pub fn add_scaled(&mut self, alpha: f64, other: &SymmetricMatrix) -> Result<()> {
        check_dims(self.dim(), other.dim())?;
        self.inner.data.scaled_add(alpha, &other.inner.data);
        Ok(())
    }

    /// `alpha * self + beta * other` as a new matrix.
    pub fn linear_combination(&self, alpha: f64, other: &SymmetricMatrix, beta: f64) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        let mut data = &self.inner.data * alpha;
        data.scaled_add(beta, &other.inner.data);
        Ok(Self { inner: Matrix { data } })
    }

    /// Trace inner product `tr(A B) = sum_ij A_ij B_ij` for symmetric operands.
    pub fn frobenius_dot(&self, other: &SymmetricMatrix) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(Zip::from(&self.inner.data)
            .and(&other.inner.data)
            .fold(0.0, |acc, a, b| acc + a * b))
    }

    /// Elementwise projection onto the box `||vec(U)||_inf <= 1`.
    pub fn clipped_unit(&self) -> Self {
        Self { inner: clip_unit(&self.inner) }
    }

    pub fn map_entries(&self, f: impl Fn(usize, usize, f64) -> f64) -> Result<Self> {
        let n = self.dim();
        let data = Array2::from_shape_fn((n, n), |(i, j)| f(i, j, self.inner.data[[i, j]]));
        Self::from_array(data)
    }
}

impl Deref for SymmetricMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.inner
    }
}

impl AsRef<Matrix> for SymmetricMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.inner
    }
}

/// A solver iterate `Theta_i`, maintained positive definite by the step rule.
///
/// Positive definiteness is not re-verified on construction; the solver never
/// factorizes. Tests check it with [`smallest_eigenvalue_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionIterate {
    pub theta: SymmetricMatrix,
}

impl PrecisionIterate {
    pub fn new(theta: SymmetricMatrix) -> Self {
        Self { theta }
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }
}

fn symmetrize_in_place(data: &mut Array2<f64>) {
    let n = data.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (data[[i, j]] + data[[j, i]]);
            data[[i, j]] = avg;
            data[[j, i]] = avg;
        }
    }
}

#[inline]
fn check_dims(left: usize, right: usize) -> Result<()> {
    if left != right {
        Err(LinalgError::DimensionMismatch { left, right })
    } else {
        Ok(())
    }
}

/// General dense product `A B`.
pub fn multiply(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_dims(a.dim(), b.dim())?;
    Ok(Matrix { data: a.data.dot(&b.data) })
}

/// Product of two symmetric matrices; the result is generally not symmetric.
pub fn sym_multiply(a: &SymmetricMatrix, b: &SymmetricMatrix) -> Result<Matrix> {
    multiply(a.as_matrix(), b.as_matrix())
}

/// `Theta U Theta`, symmetrized to remove roundoff asymmetry.
///
/// This is the one product the whole solve path is dominated by.
pub fn sandwich(theta: &SymmetricMatrix, u: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    check_dims(theta.dim(), u.dim())?;
    let left = theta.data.dot(&u.data);
    let mut data = left.dot(&theta.data);
    symmetrize_in_place(&mut data);
    if let Some((row, col)) = data.indexed_iter().find(|(_, v)| !v.is_finite()).map(|(ix, _)| ix) {
        return Err(LinalgError::NonFinite { row, col });
    }
    Ok(SymmetricMatrix { inner: Matrix { data } })
}

pub fn trace(a: &Matrix) -> f64 {
    a.data.diag().sum()
}

/// `tr(W^2) = sum_ij W_ij W_ji`, in `O(p^2)` without forming `W^2`.
pub fn trace_of_square(w: &Matrix) -> f64 {
    let n = w.dim();
    let mut acc = 0.0;
    for i in 0..n {
        acc += w.data[[i, i]] * w.data[[i, i]];
        for j in (i + 1)..n {
            acc += 2.0 * w.data[[i, j]] * w.data[[j, i]];
        }
    }
    acc
}

/// Elementwise `sign(x) * min(|x|, 1)`.
pub fn clip_unit(x: &Matrix) -> Matrix {
    Matrix { data: x.data.mapv(|v| v.clamp(-1.0, 1.0)) }
}

/// Result of a power-iteration eigenvalue estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenEstimate {
    pub value: f64,
    /// Relative residual `||A v - value v|| / |value|` at the returned vector.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when `A v = 0` from every starting vector (e.g. the zero matrix).
    pub degenerate: bool,
}

pub const DEFAULT_POWER_TOL: f64 = 1e-6;
pub const DEFAULT_POWER_MAX_ITERS: usize = 100;

const RESTART_SEED: u64 = 0x5eed_d00d;

/// Dominant eigenvalue of a symmetric matrix by power iteration.
///
/// Starts from the normalized all-ones vector. If that run does not reach
/// `tol` (or `A` annihilates the start) one restart from a fixed
/// pseudo-random vector is made and the better estimate kept.
pub fn largest_eigenvalue(a: &SymmetricMatrix, tol: f64, max_iters: usize) -> EigenEstimate {
    let n = a.dim();
    let first = power_iterate(a.as_array(), Array1::from_elem(n, 1.0), tol, max_iters);
    if first.converged && !first.degenerate {
        return first;
    }
    let second = power_iterate(a.as_array(), restart_vector(n), tol, max_iters);
    pick_better(first, second)
}

fn pick_better(a: EigenEstimate, b: EigenEstimate) -> EigenEstimate {
    match (a.degenerate, b.degenerate) {
        (true, true) => EigenEstimate { iterations: a.iterations + b.iterations, ..a },
        (true, false) => b,
        (false, true) => a,
        (false, false) => {
            if a.converged != b.converged {
                if a.converged { a } else { b }
            } else if b.value.abs() > a.value.abs() {
                b
            } else {
                a
            }
        }
    }
}

fn restart_vector(n: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0))
}

fn power_iterate(a: &Array2<f64>, start: Array1<f64>, tol: f64, max_iters: usize) -> EigenEstimate {
    let mut v = start;
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut estimate = EigenEstimate {
        value: 0.0,
        residual: f64::INFINITY,
        iterations: 0,
        converged: false,
        degenerate: false,
    };
    for it in 1..=max_iters.max(1) {
        let w = a.dot(&v);
        let w_norm = w.dot(&w).sqrt();
        if w_norm == 0.0 {
            return EigenEstimate { value: 0.0, residual: 0.0, iterations: it, converged: true, degenerate: true };
        }
        let rq = v.dot(&w);
        let r = &w - &(&v * rq);
        let residual = if rq == 0.0 { f64::INFINITY } else { r.dot(&r).sqrt() / rq.abs() };
        estimate = EigenEstimate { value: rq, residual, iterations: it, converged: residual <= tol, degenerate: false };
        if estimate.converged {
            break;
        }
        v = w / w_norm;
    }
    estimate
}

/// Smallest eigenvalue of a symmetric matrix, via power iteration on the
/// shifted matrix `s I - A` with `s` the Gershgorin bound on the spectrum.
///
/// Both starting vectors are always run and the larger shifted eigenvalue kept,
/// so an all-ones start that happens to be orthogonal to the bottom
/// eigenvector is not trusted.
pub fn smallest_eigenvalue_probe(a: &SymmetricMatrix) -> EigenEstimate {
    smallest_eigenvalue_probe_with(a, 1e-10, 50_000)
}

pub fn smallest_eigenvalue_probe_with(a: &SymmetricMatrix, tol: f64, max_iters: usize) -> EigenEstimate {
    let n = a.dim();
    let shift = a
        .as_array()
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    if shift == 0.0 {
        return EigenEstimate { value: 0.0, residual: 0.0, iterations: 0, converged: true, degenerate: true };
    }
    let shifted = Array2::eye(n) * shift - a.as_array();
    let first = power_iterate(&shifted, Array1::from_elem(n, 1.0), tol, max_iters);
    let second = power_iterate(&shifted, restart_vector(n), tol, max_iters);
    let best = match (first.degenerate, second.degenerate) {
        (true, true) => first,
        (true, false) => second,
        (false, true) => first,
        (false, false) => {
            if second.value > first.value { second } else { first }
        }
    };
    // The shifted residual is relative to the shifted eigenvalue; report it on
    // the original scale.
    let value = shift - if best.degenerate { 0.0 } else { best.value };
    let residual = if value == 0.0 { best.residual } else { best.residual * best.value.abs() / value.abs() };
    EigenEstimate { value, residual, iterations: first.iterations + second.iterations, converged: best.converged, degenerate: false }
}
