//! Solver plug-in for the unconstrained problem `min q0(x) + q1(x)^2`.
//!
//! The optimality system treats `sigma` as the dual variable of the squared
//! term, `W` as the slack of the dual matrix pencil `A0 + sigma*A1`, and `U`
//! as its complementary multiplier:
//!
//! ```text
//! H(x, sigma, U, W) = [ 2(A0+sigma*A1)x + 2(b0+sigma*b1) ]   stationarity in x
//!                     [ sigma/2 - q1(x)                   ]   stationarity in sigma
//!                     [ vec(A0 + sigma*A1 - W)            ]   dual slack
//!                     [ vec((WU + UW)/2)                  ]   complementarity
//! ```
//!
//! A root with `U, W` in the PSD cone is a primal-dual optimal pair; the
//! solver chases one through the cone interior.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{
    boundary_step_cap, push_matrix, spd_log_det, sym_half_product, PotentialWindow, SolveReport,
    SolveStatus, SolverConfig, TraceRow,
};
use crate::conjugate::{fenchel_residual, ScalarConvexFunction};
use crate::problems::QpInstance;
use crate::symlin::{self, chol_pd_check_dense, SymMatrix};
use crate::{Error, Result};

/// Iterate of the unconstrained solve: `U`, `W` must be SPD at accepted
/// iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct QpState {
    pub x: DVector<f64>,
    pub sigma: f64,
    pub u: SymMatrix,
    pub w: SymMatrix,
}

impl QpState {
    fn check_dims(&self, n: usize) -> Result<()> {
        if self.x.len() != n || self.u.n() != n || self.w.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "state dimensions (x: {}, U: {}, W: {}) do not match instance dimension {n}",
                self.x.len(),
                self.u.n(),
                self.w.n()
            )));
        }
        Ok(())
    }

    /// Checks cone-interior membership, as required of a caller-provided
    /// initial state.
    pub fn validate(&self, inst: &QpInstance) -> Result<()> {
        self.check_dims(inst.n())?;
        if !symlin::chol_pd_check(&self.u) || !symlin::chol_pd_check(&self.w) {
            return Err(Error::Invalid(
                "initial state must have positive definite U and W".into(),
            ));
        }
        Ok(())
    }
}

/// Newton direction; the matrix blocks are symmetric like the state blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct QpDirection {
    pub dx: DVector<f64>,
    pub dsigma: f64,
    pub du: SymMatrix,
    pub dw: SymMatrix,
}

impl QpDirection {
    fn check_dims(&self, n: usize) -> Result<()> {
        if self.dx.len() != n || self.du.n() != n || self.dw.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "direction dimensions (dx: {}, dU: {}, dW: {}) do not match instance dimension {n}",
                self.dx.len(),
                self.du.n(),
                self.dw.n()
            )));
        }
        Ok(())
    }

    fn zeros(n: usize) -> Self {
        QpDirection {
            dx: DVector::zeros(n),
            dsigma: 0.0,
            du: SymMatrix::zeros(n),
            dw: SymMatrix::zeros(n),
        }
    }
}

/// The stationarity block: `[2(A0+sigma*A1)x + 2(b0+sigma*b1); sigma/2 - q1(x)]`.
pub fn gamma_qp(inst: &QpInstance, x: &DVector<f64>, sigma: f64) -> Result<DVector<f64>> {
    let n = inst.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "point dimension {} does not match instance dimension {n}",
            x.len()
        )));
    }
    let pencil = inst.pencil(sigma);
    let mut out = DVector::zeros(n + 1);
    out.rows_mut(0, n)
        .copy_from(&(2.0 * (pencil.mat_vec(x) + &inst.q0.b + sigma * &inst.q1.b)));
    out[n] = 0.5 * sigma - inst.q1.eval(x);
    Ok(out)
}

/// Dense scratch shared by the residual, Jacobian, and potential evaluations.
struct Eval {
    pencil: DMatrix<f64>,
    /// `A1 x + b1`.
    g1: DVector<f64>,
    gamma: DVector<f64>,
    w: DMatrix<f64>,
    u: DMatrix<f64>,
    /// `(WU + UW)/2`.
    s: DMatrix<f64>,
    h: DVector<f64>,
    norm_h_sq: f64,
}

fn evaluate(inst: &QpInstance, state: &QpState) -> Result<Eval> {
    let n = inst.n();
    state.check_dims(n)?;
    let pencil = inst.pencil(state.sigma).to_dense();
    let g1 = inst.q1.a.mat_vec(&state.x) + &inst.q1.b;
    let w = state.w.to_dense();
    let u = state.u.to_dense();
    let s = sym_half_product(&w, &u);
    let gamma = gamma_qp(inst, &state.x, state.sigma)?;
    let mut entries = Vec::with_capacity(n + 1 + 2 * n * n);
    entries.extend(gamma.iter().copied());
    push_matrix(&mut entries, &(&pencil - &w));
    push_matrix(&mut entries, &s);
    let h = DVector::from_vec(entries);
    let norm_h_sq = h.norm_squared();
    Ok(Eval { pencil, g1, gamma, w, u, s, h, norm_h_sq })
}

/// The full residual `[Gamma; vec(A0+sigma*A1-W); vec((WU+UW)/2)]`,
/// matrix blocks in storage (column-major) order.
pub fn h_qp(inst: &QpInstance, state: &QpState) -> Result<DVector<f64>> {
    Ok(evaluate(inst, state)?.h)
}

/// Applies the analytic Jacobian of the residual to a direction.
pub fn jacobian_product_qp(
    inst: &QpInstance,
    state: &QpState,
    dir: &QpDirection,
) -> Result<DVector<f64>> {
    let n = inst.n();
    state.check_dims(n)?;
    dir.check_dims(n)?;
    let pencil = inst.pencil(state.sigma).to_dense();
    let g1 = inst.q1.a.mat_vec(&state.x) + &inst.q1.b;
    let a1 = inst.q1.a.to_dense();
    let (w, u) = (state.w.to_dense(), state.u.to_dense());
    let (dw, du) = (dir.dw.to_dense(), dir.du.to_dense());
    let mut out = Vec::with_capacity(n + 1 + 2 * n * n);
    out.extend((2.0 * (&pencil * &dir.dx) + 2.0 * dir.dsigma * &g1).iter().copied());
    // The sigma row differentiates sigma/2 - q1(x).
    out.push(-2.0 * g1.dot(&dir.dx) + 0.5 * dir.dsigma);
    push_matrix(&mut out, &(dir.dsigma * &a1 - &dw));
    let ds = 0.5 * (&w * &du + &du * &w + &dw * &u + &u * &dw);
    push_matrix(&mut out, &ds);
    Ok(DVector::from_vec(out))
}

/// Centering coefficient `(beta/n) * trace(S)`: the average complementarity
/// eigenvalue, scaled by the centering weight. The Newton right-hand side
/// pulls the complementarity block toward this multiple of the identity,
/// which points into the cone interior (an all-entries target would point at
/// a rank-one boundary matrix and stall the line search against the
/// log-determinant barrier).
fn centering_coefficient(beta: f64, n: usize, s: &DMatrix<f64>) -> f64 {
    beta / n as f64 * s.trace()
}

/// Solves the interior-bent Newton system `J*Delta = -H + centering` through
/// the reduction to one `n x n` solve.
///
/// Steps: eliminate `dsigma = 2 r_sigma + 4 g1' dx` from the sigma row; solve
/// `[2(A0+sigma*A1) + 8 g1 g1'] dx = r_x - 4 r_sigma g1`; back-substitute
/// `dW = A1 dsigma - R_W`; then the Lyapunov equation
/// `W dU + dU W = 2 R_U - (dW U + U dW)` yields `dU`. The centering term
/// lands only on the complementarity block.
pub fn newton_direction_qp(
    inst: &QpInstance,
    state: &QpState,
    beta: f64,
) -> Result<QpDirection> {
    let n = inst.n();
    let eval = evaluate(inst, state)?;
    let r_x = -eval.gamma.rows(0, n).into_owned();
    let r_sigma = -eval.gamma[n];
    let r_w = &eval.w - &eval.pencil;
    let c = centering_coefficient(beta, n, &eval.s);
    let r_u = DMatrix::identity(n, n) * c - &eval.s;
    let m_red = 2.0 * &eval.pencil + 8.0 * (&eval.g1 * eval.g1.transpose());
    let rhs = r_x - 4.0 * r_sigma * &eval.g1;
    let dx = m_red
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("reduced Newton system is singular".into()))?;
    let dsigma = 2.0 * r_sigma + 4.0 * eval.g1.dot(&dx);
    let dw = dsigma * inst.q1.a.to_dense() - r_w;
    let lyap_rhs = 2.0 * r_u - (&dw * &eval.u + &eval.u * &dw);
    let du = symlin::lyapunov_solve_dense(&eval.w, &lyap_rhs)?;
    Ok(QpDirection {
        dx,
        dsigma,
        du: SymMatrix::from_dense(&du),
        dw: SymMatrix::from_dense(&dw),
    })
}

/// The merit potential `rho * log(||H||^2) - log det((WU+UW)/2)`.
///
/// A state whose symmetrized product is not positive definite is outside the
/// potential's domain; the line search treats that error as a rejection.
pub fn potential_qp(inst: &QpInstance, state: &QpState, rho: f64) -> Result<f64> {
    let eval = evaluate(inst, state)?;
    Ok(rho * eval.norm_h_sq.ln() - spd_log_det(&eval.s)?)
}

/// Directional derivative of the potential, split into the `x` contribution
/// and the `(sigma, U, W)` contribution; the parts sum to the full derivative
/// `(2 rho/||H||^2) H'(J Delta) - tr(S^{-1} dS)`.
pub fn potential_split_derivative_qp(
    inst: &QpInstance,
    state: &QpState,
    dir: &QpDirection,
    rho: f64,
) -> Result<(f64, f64)> {
    let n = inst.n();
    dir.check_dims(n)?;
    let eval = evaluate(inst, state)?;
    let chol = Cholesky::new(eval.s.clone()).ok_or(Error::NotPositiveDefinite(
        "symmetrized complementarity product must be positive definite",
    ))?;
    let primal = QpDirection { dx: dir.dx.clone(), ..QpDirection::zeros(n) };
    let dual = QpDirection {
        dsigma: dir.dsigma,
        du: dir.du.clone(),
        dw: dir.dw.clone(),
        ..QpDirection::zeros(n)
    };
    let scale = 2.0 * rho / eval.norm_h_sq;
    let g_primal = scale * eval.h.dot(&jacobian_product_qp(inst, state, &primal)?);
    let (du_d, dw_d) = (dir.du.to_dense(), dir.dw.to_dense());
    let ds = 0.5 * (&eval.w * &du_d + &du_d * &eval.w + &dw_d * &eval.u + &eval.u * &dw_d);
    let g_dual = scale * eval.h.dot(&jacobian_product_qp(inst, state, &dual)?)
        - chol.solve(&ds).trace();
    Ok((g_primal, g_dual))
}

/// Full directional derivative of the potential along `dir`.
pub fn potential_directional_derivative_qp(
    inst: &QpInstance,
    state: &QpState,
    dir: &QpDirection,
    rho: f64,
) -> Result<f64> {
    let (g_primal, g_dual) = potential_split_derivative_qp(inst, state, dir, rho)?;
    Ok(g_primal + g_dual)
}

/// Deterministic cone-interior start: `x = 0`; `sigma` is the recorded
/// coercivity witness plus margin (searched until the pencil clears minimum
/// eigenvalue 0.1, best effort otherwise); `W` is the pencil shifted into the
/// interior; `U = I`.
pub fn default_init_qp(inst: &QpInstance) -> Result<QpState> {
    let n = inst.n();
    let mut candidates = Vec::new();
    if let Some(alpha) = inst.witness_alpha {
        let mut margin = 1.0;
        for _ in 0..=12 {
            candidates.push(alpha + margin);
            margin *= 2.0;
        }
    }
    candidates.push(0.0);
    let mut magnitude = 1.0;
    for _ in 0..=40 {
        candidates.push(magnitude);
        candidates.push(-magnitude);
        magnitude *= 2.0;
    }
    let mut best: Option<(f64, f64)> = None; // (min eigenvalue, sigma)
    let mut chosen = None;
    for &sigma in &candidates {
        let min_eig = symlin::min_eigenvalue(&inst.pencil(sigma))?;
        if min_eig >= 0.1 {
            chosen = Some((sigma, min_eig));
            break;
        }
        if best.is_none_or(|(lam, _)| min_eig > lam) {
            best = Some((min_eig, sigma));
        }
    }
    let (sigma, min_eig) = chosen.unwrap_or_else(|| {
        let (lam, sig) = best.expect("candidate list is never empty");
        (sig, lam)
    });
    // Keeps the spec shift 0.1 whenever the pencil already clears 0.1, and
    // enough extra to reach the interior when only a best-effort sigma exists.
    let shift = (0.2 - min_eig).max(0.1);
    Ok(QpState {
        x: DVector::zeros(n),
        sigma,
        u: SymMatrix::identity(n),
        w: inst.pencil(sigma).shift_diagonal(shift),
    })
}

fn build_report(
    inst: &QpInstance,
    state: &QpState,
    status: SolveStatus,
    iterations: usize,
    wall_time_seconds: f64,
    trace: Option<Vec<TraceRow>>,
) -> Result<SolveReport> {
    let q1_value = inst.q1.eval(&state.x);
    let gap = q1_value * q1_value - 0.25 * state.sigma * state.sigma;
    let fenchel = fenchel_residual(ScalarConvexFunction::Square, q1_value, state.sigma)?;
    let final_gamma_norm = gamma_qp(inst, &state.x, state.sigma)?.norm();
    let dual_slack_residual =
        (inst.pencil(state.sigma).to_dense() - state.w.to_dense()).norm();
    let s = sym_half_product(&state.w.to_dense(), &state.u.to_dense());
    Ok(SolveReport {
        status,
        iterations,
        final_gamma_norm,
        gap,
        fenchel_residual: fenchel,
        dual_slack_residual,
        complementarity_norm: s.norm(),
        wall_time_seconds,
        trace,
    })
}

/// Runs the potential-reduction iteration from `init` (or the default start).
///
/// Stops when `||Gamma|| <= epsilon` (`Converged`); otherwise reports
/// `MaxIter`, `LineSearchStall`, or `SingularSystem` with diagnostics
/// evaluated at the last accepted state. Accepted iterates always keep `U`
/// and `W` positive definite.
pub fn solve_qp(
    inst: &QpInstance,
    config: &SolverConfig,
    init: Option<QpState>,
) -> Result<(QpState, SolveReport)> {
    let n = inst.n();
    let (rho, memory) = config.resolve(n, false)?;
    let clock = Instant::now();
    let mut state = match init {
        Some(given) => {
            given.validate(inst)?;
            given
        }
        None => default_init_qp(inst)?,
    };
    let mut window = PotentialWindow::new(memory);
    let mut trace = config.record_trace.then(Vec::new);
    let status;
    let iterations;
    let mut iter = 0;
    loop {
        let gamma_norm = gamma_qp(inst, &state.x, state.sigma)?.norm();
        if gamma_norm <= config.epsilon {
            status = SolveStatus::Converged;
            iterations = iter;
            break;
        }
        if iter >= config.max_iter {
            status = SolveStatus::MaxIter;
            iterations = iter;
            break;
        }
        let p = potential_qp(inst, &state, rho)?;
        window.push(p);
        let p_max = window.max();

        let mut beta_used = config.beta;
        let mut dir = match newton_direction_qp(inst, &state, beta_used) {
            Ok(d) => d,
            Err(Error::Numerical(_)) | Err(Error::NotPositiveDefinite(_)) => {
                status = SolveStatus::SingularSystem;
                iterations = iter;
                break;
            }
            Err(other) => return Err(other),
        };
        let (mut g_primal, mut g_dual) =
            potential_split_derivative_qp(inst, &state, &dir, rho)?;
        // The literal centering target can bend away from descent; the pure
        // Newton direction (beta = 0) always descends, so fall back to it.
        if beta_used > 0.0 && g_primal + g_dual >= -1e-14 * (1.0 + p.abs()) {
            beta_used = 0.0;
            dir = match newton_direction_qp(inst, &state, 0.0) {
                Ok(d) => d,
                Err(Error::Numerical(_)) | Err(Error::NotPositiveDefinite(_)) => {
                    status = SolveStatus::SingularSystem;
                    iterations = iter;
                    break;
                }
                Err(other) => return Err(other),
            };
            (g_primal, g_dual) = potential_split_derivative_qp(inst, &state, &dir, rho)?;
        }

        let (w0, u0) = (state.w.clone(), state.u.clone());
        let (dw, du) = (dir.dw.clone(), dir.du.clone());
        let cap = boundary_step_cap(1.0, config.tau_boundary, config.alpha_min, |t| {
            chol_pd_check_dense(&w0.add_scaled(t, &dw).to_dense())
                && chol_pd_check_dense(&u0.add_scaled(t, &du).to_dense())
        });
        let mut alpha_dual = cap;
        let mut alpha_primal = if config.split_steps && g_primal < 0.0 { 1.0 } else { cap };

        let mut accepted = None;
        while alpha_primal.max(alpha_dual) >= config.alpha_min {
            let trial = QpState {
                x: &state.x + alpha_primal * &dir.dx,
                sigma: state.sigma + alpha_dual * dir.dsigma,
                u: state.u.add_scaled(alpha_dual, &dir.du),
                w: state.w.add_scaled(alpha_dual, &dir.dw),
            };
            let slope = alpha_primal * g_primal + alpha_dual * g_dual;
            match potential_qp(inst, &trial, rho) {
                Ok(p_trial) if p_trial <= p_max + config.eta * slope => {
                    accepted = Some((trial, p_trial));
                    break;
                }
                Ok(_) | Err(Error::NotPositiveDefinite(_)) => {}
                Err(other) => return Err(other),
            }
            alpha_primal *= 0.5;
            alpha_dual *= 0.5;
        }
        let Some((next, p_accepted)) = accepted else {
            status = SolveStatus::LineSearchStall;
            iterations = iter;
            break;
        };
        state = next;
        iter += 1;
        if let Some(rows) = trace.as_mut() {
            let q1_value = inst.q1.eval(&state.x);
            rows.push(TraceRow {
                iter,
                alpha_primal,
                alpha_dual,
                beta: beta_used,
                norm_h: h_qp(inst, &state)?.norm(),
                norm_gamma: gamma_qp(inst, &state.x, state.sigma)?.norm(),
                potential: p_accepted,
                gap: q1_value * q1_value - 0.25 * state.sigma * state.sigma,
            });
        }
    }
    let report = build_report(
        inst,
        &state,
        status,
        iterations,
        clock.elapsed().as_secs_f64(),
        trace,
    )?;
    Ok((state, report))
}
