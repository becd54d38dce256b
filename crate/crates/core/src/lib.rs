//! Sparse inverse covariance estimation by a dual proximal Newton method that
//! never factorizes or inverts a matrix.
//!
//! * [`linalg`]: dense matrices, products, traces, power iteration.
//! * [`scframework`]: the generic damped/full-step proximal Newton engine for
//!   self-concordant plus convex objectives.
//! * [`fpgm`]: accelerated projected gradient on the unit box.
//! * [`graph`]: the precision-matrix problem and the solver built from the above.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod fpgm;
pub mod graph;
pub mod linalg;
pub mod scframework;

pub use fpgm::{DualIterate, FpgmConfig, FpgmError, FpgmResult, Momentum};
pub use graph::{
    default_theta0, dpngs_solve, dpngs_solve_monitored, sparsify, DpngsOptions, DpngsOutcome, DpngsTermination,
    GraphError, GraphProblem,
};
pub use linalg::{LinalgError, Matrix, PrecisionIterate, SymmetricMatrix};
pub use scframework::{IterationRecord, Monitor, Phase, PhaseConfig};
