//! Global minimization of two classes of non-convex quartic problems via an
//! equivalent convex conic dual.
//!
//! The two problem classes are
//!
//! * **qp** — unconstrained: minimize `q0(x) + q1(x)^2`,
//! * **qq** — constrained: minimize `q1(x)^2` subject to `q2(x) <= 0`,
//!
//! where every `q_i(x) = x'A_i x + 2 b_i'x + c_i` is a real quadratic form.
//! Both objectives are quartic and non-convex, yet each problem has a concave
//! dual over a linear-matrix-inequality cone with no duality gap. The crate
//! evaluates those duals ([`problems`]), drives a primal-dual potential-reduction
//! interior-point iteration on the joint optimality system ([`pr_solver`]),
//! certifies the result through conjugate (Fenchel) identities and independent
//! oracles ([`verify`]), generates reproducible benchmark families ([`instgen`]),
//! and exports the duals as linear SDPs in SDPA sparse format ([`export`]).
//!
//! The `qdual` binary wraps everything for batch use: generation, solving,
//! verification, benchmarking, SDP export, and a one-dimensional Gaussian demo
//! with a closed-form reference solution.

pub mod conjugate;
pub mod export;
pub mod instgen;
pub mod pr_solver;
pub mod problems;
pub mod symlin;
pub mod verify;

pub use problems::{InstanceFile, ProblemInstance, QpInstance, QqInstance, QuadraticForm};
pub use symlin::SymMatrix;

/// Unified error type for every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs whose dimensions do not agree (vector lengths, matrix sizes).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A mathematical precondition is violated (argument outside a function's
    /// domain, matrix outside the required cone, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// The symmetric eigenvalue iteration failed to converge.
    #[error("eigendecomposition did not converge (input Frobenius norm {frobenius_norm:.6e})")]
    EigenFailure { frobenius_norm: f64 },
    /// A matrix that must be positive definite is not.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    /// A linear system that must be solvable is numerically singular.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Malformed text input (instance files, SDPA files, multiplier files).
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    /// Structurally well-formed input that violates a semantic invariant.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Random instance generation could not satisfy its postcondition.
    #[error("instance generation failed (seed {seed}): {message}")]
    Generation { seed: u64, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Formats a float with 17 significant digits, enough for bit-exact re-parsing.
///
/// All text formats in this crate (instance files, SDPA files, CSV reports)
/// write reals through this function so that write-then-read round-trips
/// reproduce the original `f64` exactly.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
