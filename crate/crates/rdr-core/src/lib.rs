//! Numerics for two-stage distribution regression.
//!
//! The regression inputs are probability distributions observed only through
//! finite atom samples. Each sample is averaged into a kernel mean embedding,
//! a second-level kernel turns embeddings into a Gram matrix, and a
//! regularized least-squares or robust windowed-loss solver produces a
//! representer-form model over the training bags.
//!
//! Module map:
//!
//! * [`kernel`]: base kernels on atoms, empirical distributions, mean
//!   embedding inner products, and first- and second-level Gram assembly.
//! * [`loss`]: windowing loss families (least squares, Welsch, Cauchy, Fair)
//!   with certified window constants.
//! * [`solver`]: ridge and iteratively reweighted solvers in representer
//!   coordinates, plus prediction and norm/stationarity checks.
//! * [`diagnostics`]: spectral summaries, effective dimension, decay-rate
//!   fits, and the computable gap bound.
//! * [`synth`]: synthetic two-stage task generators and the parameter
//!   schedules used by rate studies.

pub mod diagnostics;
mod error;
pub mod kernel;
pub mod loss;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};

/// Numerical tolerances shared across the crate.
///
/// These are deliberate policy constants, not tuning knobs: they encode where
/// floating-point round-off is forgiven and where it is treated as a failure.
pub mod tol {
    /// Relative eigenvalue floor for Gram matrices. Eigenvalues in
    /// `[-PSD_REL_TOL * max_eig, 0)` are treated as round-off and clamped to
    /// zero; anything below that rejects the matrix.
    pub const PSD_REL_TOL: f64 = 1e-10;

    /// Squared embedding distances are assembled from inner products and may
    /// round slightly negative. Values in `[-DISTANCE_NEG_TOL, 0)` are
    /// clamped to zero; anything lower is an error.
    pub const DISTANCE_NEG_TOL: f64 = 1e-12;

    /// Additive slack used when comparing a fitted model's reproducing-kernel
    /// norm against its a-priori bound.
    pub const RKHS_BOUND_SLACK: f64 = 1e-9;
}
