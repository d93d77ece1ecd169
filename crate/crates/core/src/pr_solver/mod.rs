//! Potential-reduction primal-dual interior-point solver.
//!
//! Both problem classes are solved by the same scheme: the optimality system
//! is written as a square nonlinear map `H(z) = 0` over the interior of a cone
//! (SPD matrix blocks, plus positive scalars for the constrained problem),
//! a Newton direction for `H` — bent toward the interior by a centering term —
//! is computed through a dimension reduction to one `n x n` linear solve and a
//! Lyapunov back-substitution, and progress is measured by the potential
//! `rho*log(||H||^2) - log det((WU+UW)/2)` (minus `log(lambda*w)` for the
//! constrained problem), decreased by a non-monotone Armijo line search behind
//! a fraction-to-boundary step cap.
//!
//! [`qp`] solves `min q0(x) + q1(x)^2`; [`qq`] solves
//! `min q1(x)^2 s.t. q2(x) <= 0`.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::{Error, Result};

mod qp;
mod qq;

pub use qp::{
    default_init_qp, gamma_qp, h_qp, jacobian_product_qp, newton_direction_qp,
    potential_directional_derivative_qp, potential_qp, potential_split_derivative_qp, solve_qp,
    QpDirection, QpState,
};
pub use qq::{
    default_init_qq, gamma_qq, h_qq, jacobian_product_qq, newton_direction_qq,
    potential_directional_derivative_qq, potential_qq, potential_split_derivative_qq, solve_qq,
    QqDirection, QqState,
};

/// Tunable solver parameters. `rho` and `memory` default per problem class
/// (`None` selects `2(n+1)` / window 5 for qp and `2(n+3)` / window 10 for qq).
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Stopping tolerance on the stationarity residual norm `||Gamma||`.
    pub epsilon: f64,
    /// Armijo slope factor.
    pub eta: f64,
    /// Potential weight on `log(||H||^2)`; must exceed `n + 1`.
    pub rho: Option<f64>,
    /// Non-monotone line-search window length.
    pub memory: Option<usize>,
    /// Centering parameter in `[0, 1)`.
    pub beta: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary factor in `(0, 1)`.
    pub tau_boundary: f64,
    /// Line search gives up below this step size.
    pub alpha_min: f64,
    /// Let the `x` block and the dual block take different step lengths.
    pub split_steps: bool,
    /// Record a per-iteration [`TraceRow`] in the report.
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 1e-4,
            eta: 1e-6,
            rho: None,
            memory: None,
            beta: 0.2,
            max_iter: 500,
            tau_boundary: 0.95,
            alpha_min: 1e-12,
            split_steps: true,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    /// The default potential weight for the unconstrained problem.
    pub fn default_rho_qp(n: usize) -> f64 {
        2.0 * (n as f64 + 1.0)
    }

    /// The default potential weight for the constrained problem.
    pub fn default_rho_qq(n: usize) -> f64 {
        2.0 * (n as f64 + 3.0)
    }

    /// Checks the parameter invariants and resolves the per-problem defaults;
    /// returns the effective `(rho, memory)`.
    pub(crate) fn resolve(&self, n: usize, constrained: bool) -> Result<(f64, usize)> {
        let rho = self.rho.unwrap_or(if constrained {
            Self::default_rho_qq(n)
        } else {
            Self::default_rho_qp(n)
        });
        let memory = self.memory.unwrap_or(if constrained { 10 } else { 5 });
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Invalid(format!("eta must lie in (0,1), got {}", self.eta)));
        }
        if !(rho > n as f64 + 1.0) {
            return Err(Error::Invalid(format!("rho must exceed n+1 = {}, got {rho}", n + 1)));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(Error::Invalid(format!("beta must lie in [0,1), got {}", self.beta)));
        }
        if !(self.tau_boundary > 0.0 && self.tau_boundary < 1.0) {
            return Err(Error::Invalid(format!(
                "tau_boundary must lie in (0,1), got {}",
                self.tau_boundary
            )));
        }
        if !(self.alpha_min > 0.0) {
            return Err(Error::Invalid(format!(
                "alpha_min must be positive, got {}",
                self.alpha_min
            )));
        }
        if memory == 0 {
            return Err(Error::Invalid("memory window must be at least 1".into()));
        }
        Ok((rho, memory))
    }
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// `||Gamma|| <= epsilon` at the returned state.
    Converged,
    MaxIter,
    /// The Armijo backtracking fell below `alpha_min`.
    LineSearchStall,
    /// The reduced Newton system could not be solved.
    SingularSystem,
}

impl SolveStatus {
    pub fn is_converged(self) -> bool {
        matches!(self, SolveStatus::Converged)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max-iterations",
            SolveStatus::LineSearchStall => "line-search-stall",
            SolveStatus::SingularSystem => "singular-system",
        })
    }
}

/// One accepted iteration, as emitted in the optional trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    /// Centering parameter actually used (0 when the descent fallback fired).
    pub beta: f64,
    pub norm_h: f64,
    pub norm_gamma: f64,
    pub potential: f64,
    pub gap: f64,
}

/// Outcome of a solve. All residual fields are evaluated at the returned
/// state, so they remain meaningful on non-converged exits.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    /// `||Gamma||` — on [`SolveStatus::Converged`] this is at most `epsilon`.
    pub final_gamma_norm: f64,
    /// `q1(x)^2 - sigma^2/4`.
    pub gap: f64,
    /// Fenchel–Young residual `(q1(x) - sigma/2)^2`.
    pub fenchel_residual: f64,
    /// `||pencil - W||_F`, the dual-slack matrix residual.
    pub dual_slack_residual: f64,
    /// Frobenius norm of `(WU+UW)/2`, combined with `lambda*w` for qq.
    pub complementarity_norm: f64,
    pub wall_time_seconds: f64,
    pub trace: Option<Vec<TraceRow>>,
}

/// Rolling window of recent potential values for the non-monotone test.
pub(crate) struct PotentialWindow {
    values: VecDeque<f64>,
    cap: usize,
}

impl PotentialWindow {
    pub(crate) fn new(cap: usize) -> Self {
        PotentialWindow { values: VecDeque::with_capacity(cap), cap }
    }

    pub(crate) fn push(&mut self, value: f64) {
        if self.values.len() == self.cap {
            self.values.pop_front();
        }
        self.values.push_back(value);
    }

    pub(crate) fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The symmetrized half product `S = (WU + UW) / 2`.
pub(crate) fn sym_half_product(w: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (w * u + u * w)
}

/// Appends the entries of `m` in storage (column-major) order.
pub(crate) fn push_matrix(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    out.extend(m.iter().copied());
}

/// Largest usable step in `(0, start]` along a ray of cone iterates.
///
/// `admissible(t)` must define a step set that is an interval containing 0
/// (true for positive-definiteness of `W + t*dW` and positivity of scalars).
/// Returns `start` when the full step is admissible; otherwise locates the
/// boundary by halving plus a short bisection refinement and backs off by the
/// fraction-to-boundary factor `tau`. Returns 0 when no step above
/// `floor` is admissible.
pub(crate) fn boundary_step_cap(
    start: f64,
    tau: f64,
    floor: f64,
    admissible: impl Fn(f64) -> bool,
) -> f64 {
    if start <= 0.0 {
        return 0.0;
    }
    if admissible(start) {
        return start;
    }
    let mut t = 0.5 * start;
    while t > floor && !admissible(t) {
        t *= 0.5;
    }
    if t <= floor {
        return 0.0;
    }
    // The boundary lies in (t, 2t); refine before backing off by tau.
    let (mut lo, mut hi) = (t, 2.0 * t);
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        if admissible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    tau * lo
}

/// Log-determinant of an SPD matrix via its Cholesky factor, or the
/// domain error the line search treats as a rejection.
pub(crate) fn spd_log_det(s: &DMatrix<f64>) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(s.clone()).ok_or(Error::NotPositiveDefinite(
        "symmetrized complementarity product must be positive definite",
    ))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}
