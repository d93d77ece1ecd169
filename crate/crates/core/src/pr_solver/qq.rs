//! Solver plug-in for the constrained problem `min q1(x)^2 s.t. q2(x) <= 0`.
//!
//! Beyond the unconstrained case this carries a multiplier `lambda > 0` for
//! the constraint and a scalar slack `w > 0`, with their own complementarity
//! product `lambda * w`:
//!
//! ```text
//! H(x, lambda, sigma, w, U, W) = [ 2(sigma*A1+lambda*A2)x + 2(sigma*b1+lambda*b2) ]
//!                                [ sigma/2 - q1(x)                               ]
//!                                [ q2(x) + w                                     ]
//!                                [ vec(sigma*A1 + lambda*A2 - W)                 ]
//!                                [ lambda * w                                    ]
//!                                [ vec((WU + UW)/2)                              ]
//! ```
//!
//! The potential gains a `-log(lambda*w)` barrier and the Newton reduction
//! eliminates the two scalars alongside `sigma` before the same `n x n` solve
//! and Lyapunov back-substitution as the unconstrained case.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{
    boundary_step_cap, push_matrix, spd_log_det, sym_half_product, PotentialWindow, SolveReport,
    SolveStatus, SolverConfig, TraceRow,
};
use crate::conjugate::{fenchel_residual, ScalarConvexFunction};
use crate::problems::QqInstance;
use crate::symlin::{self, chol_pd_check_dense, SymMatrix};
use crate::{Error, Result};

/// Iterate of the constrained solve: `lambda`, `slack` must be positive and
/// `U`, `W` SPD at accepted iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct QqState {
    pub x: DVector<f64>,
    pub lambda: f64,
    pub sigma: f64,
    /// Scalar slack of the constraint (the matrix slack is `w`).
    pub slack: f64,
    pub u: SymMatrix,
    pub w: SymMatrix,
}

impl QqState {
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
    pub fn validate(&self, inst: &QqInstance) -> Result<()> {
        self.check_dims(inst.n())?;
        if self.lambda <= 0.0 || self.slack <= 0.0 {
            return Err(Error::Invalid(
                "initial state must have positive lambda and slack".into(),
            ));
        }
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
pub struct QqDirection {
    pub dx: DVector<f64>,
    pub dlambda: f64,
    pub dsigma: f64,
    pub dslack: f64,
    pub du: SymMatrix,
    pub dw: SymMatrix,
}

impl QqDirection {
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
        QqDirection {
            dx: DVector::zeros(n),
            dlambda: 0.0,
            dsigma: 0.0,
            dslack: 0.0,
            du: SymMatrix::zeros(n),
            dw: SymMatrix::zeros(n),
        }
    }
}

/// The stationarity block:
/// `[2(sigma*A1+lambda*A2)x + 2(sigma*b1+lambda*b2); sigma/2 - q1(x)]`.
pub fn gamma_qq(
    inst: &QqInstance,
    x: &DVector<f64>,
    lambda: f64,
    sigma: f64,
) -> Result<DVector<f64>> {
    let n = inst.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "point dimension {} does not match instance dimension {n}",
            x.len()
        )));
    }
    let pencil = inst.pencil(lambda, sigma);
    let mut out = DVector::zeros(n + 1);
    out.rows_mut(0, n).copy_from(
        &(2.0 * (pencil.mat_vec(x) + sigma * &inst.q1.b + lambda * &inst.q2.b)),
    );
    out[n] = 0.5 * sigma - inst.q1.eval(x);
    Ok(out)
}

/// Dense scratch shared by the residual, Jacobian, and potential evaluations.
struct Eval {
    pencil: DMatrix<f64>,
    /// `A1 x + b1`.
    g1: DVector<f64>,
    /// `A2 x + b2`.
    g2: DVector<f64>,
    gamma: DVector<f64>,
    constraint: f64,
    scalar_comp: f64,
    w: DMatrix<f64>,
    u: DMatrix<f64>,
    /// `(WU + UW)/2`.
    s: DMatrix<f64>,
    h: DVector<f64>,
    norm_h_sq: f64,
}

fn evaluate(inst: &QqInstance, state: &QqState) -> Result<Eval> {
    let n = inst.n();
    state.check_dims(n)?;
    let pencil = inst.pencil(state.lambda, state.sigma).to_dense();
    let g1 = inst.q1.a.mat_vec(&state.x) + &inst.q1.b;
    let g2 = inst.q2.a.mat_vec(&state.x) + &inst.q2.b;
    let w = state.w.to_dense();
    let u = state.u.to_dense();
    let s = sym_half_product(&w, &u);
    let gamma = gamma_qq(inst, &state.x, state.lambda, state.sigma)?;
    let constraint = inst.q2.eval(&state.x) + state.slack;
    let scalar_comp = state.lambda * state.slack;
    let mut entries = Vec::with_capacity(n + 3 + 2 * n * n);
    entries.extend(gamma.iter().copied());
    entries.push(constraint);
    push_matrix(&mut entries, &(&pencil - &w));
    entries.push(scalar_comp);
    push_matrix(&mut entries, &s);
    let h = DVector::from_vec(entries);
    let norm_h_sq = h.norm_squared();
    Ok(Eval { pencil, g1, g2, gamma, constraint, scalar_comp, w, u, s, h, norm_h_sq })
}

/// The full residual `[Gamma; q2(x)+w; vec(pencil-W); lambda*w; vec((WU+UW)/2)]`,
/// matrix blocks in storage (column-major) order.
pub fn h_qq(inst: &QqInstance, state: &QqState) -> Result<DVector<f64>> {
    Ok(evaluate(inst, state)?.h)
}

/// Applies the analytic Jacobian of the residual to a direction.
pub fn jacobian_product_qq(
    inst: &QqInstance,
    state: &QqState,
    dir: &QqDirection,
) -> Result<DVector<f64>> {
    let n = inst.n();
    state.check_dims(n)?;
    dir.check_dims(n)?;
    let pencil = inst.pencil(state.lambda, state.sigma).to_dense();
    let g1 = inst.q1.a.mat_vec(&state.x) + &inst.q1.b;
    let g2 = inst.q2.a.mat_vec(&state.x) + &inst.q2.b;
    let a1 = inst.q1.a.to_dense();
    let a2 = inst.q2.a.to_dense();
    let (w, u) = (state.w.to_dense(), state.u.to_dense());
    let (dw, du) = (dir.dw.to_dense(), dir.du.to_dense());
    let mut out = Vec::with_capacity(n + 3 + 2 * n * n);
    out.extend(
        (2.0 * (&pencil * &dir.dx) + 2.0 * dir.dsigma * &g1 + 2.0 * dir.dlambda * &g2)
            .iter()
            .copied(),
    );
    // The sigma row differentiates sigma/2 - q1(x).
    out.push(-2.0 * g1.dot(&dir.dx) + 0.5 * dir.dsigma);
    out.push(2.0 * g2.dot(&dir.dx) + dir.dslack);
    push_matrix(&mut out, &(dir.dsigma * &a1 + dir.dlambda * &a2 - &dw));
    out.push(state.slack * dir.dlambda + state.lambda * dir.dslack);
    let ds = 0.5 * (&w * &du + &du * &w + &dw * &u + &u * &dw);
    push_matrix(&mut out, &ds);
    Ok(DVector::from_vec(out))
}

/// Centering coefficient `(beta/(n+1)) * (lambda*w + trace(S))`: the average
/// complementarity eigenvalue over the product cone (one scalar pair plus an
/// order-`n` matrix pair). It feeds the scalar complementarity row and the
/// diagonal of the matrix complementarity block, pulling both toward the cone
/// interior.
fn centering_coefficient(beta: f64, n: usize, scalar_comp: f64, s: &DMatrix<f64>) -> f64 {
    beta / (n + 1) as f64 * (scalar_comp + s.trace())
}

/// Solves the interior-bent Newton system through the reduction to one
/// `n x n` solve.
///
/// Elimination order: `dsigma = 2 r_sigma + 4 g1' dx` (sigma row),
/// `dslack = r_c - 2 g2' dx` (constraint row),
/// `dlambda = [r_comp - lambda r_c + 2 lambda g2' dx] / w` (scalar
/// complementarity row); the remaining `x` system is
/// `[2(sigma*A1+lambda*A2) + 8 g1 g1' + (4 lambda/w) g2 g2'] dx =
/// r_x - 4 r_sigma g1 - (2/w)(r_comp - lambda r_c) g2`. Back-substitution
/// gives `dW = A1 dsigma + A2 dlambda - R_W` and the Lyapunov equation
/// `W dU + dU W = 2 R_U - (dW U + U dW)` gives `dU`.
pub fn newton_direction_qq(
    inst: &QqInstance,
    state: &QqState,
    beta: f64,
) -> Result<QqDirection> {
    let n = inst.n();
    let eval = evaluate(inst, state)?;
    let r_x = -eval.gamma.rows(0, n).into_owned();
    let r_sigma = -eval.gamma[n];
    let r_c = -eval.constraint;
    let r_w = &eval.w - &eval.pencil;
    let c = centering_coefficient(beta, n, eval.scalar_comp, &eval.s);
    let r_comp = -eval.scalar_comp + c;
    let r_u = DMatrix::identity(n, n) * c - &eval.s;
    let m_red = 2.0 * &eval.pencil
        + 8.0 * (&eval.g1 * eval.g1.transpose())
        + (4.0 * state.lambda / state.slack) * (&eval.g2 * eval.g2.transpose());
    let rhs = r_x - 4.0 * r_sigma * &eval.g1
        - (2.0 / state.slack) * (r_comp - state.lambda * r_c) * &eval.g2;
    let dx = m_red
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("reduced Newton system is singular".into()))?;
    let dsigma = 2.0 * r_sigma + 4.0 * eval.g1.dot(&dx);
    let dslack = r_c - 2.0 * eval.g2.dot(&dx);
    let dlambda = (r_comp - state.lambda * dslack) / state.slack;
    let dw = dsigma * inst.q1.a.to_dense() + dlambda * inst.q2.a.to_dense() - r_w;
    let lyap_rhs = 2.0 * r_u - (&dw * &eval.u + &eval.u * &dw);
    let du = symlin::lyapunov_solve_dense(&eval.w, &lyap_rhs)?;
    Ok(QqDirection {
        dx,
        dlambda,
        dsigma,
        dslack,
        du: SymMatrix::from_dense(&du),
        dw: SymMatrix::from_dense(&dw),
    })
}

/// The merit potential
/// `rho * log(||H||^2) - log det((WU+UW)/2) - log(lambda*w)`.
pub fn potential_qq(inst: &QqInstance, state: &QqState, rho: f64) -> Result<f64> {
    if state.lambda <= 0.0 || state.slack <= 0.0 {
        return Err(Error::NotPositiveDefinite(
            "scalar complementarity pair must stay positive",
        ));
    }
    let eval = evaluate(inst, state)?;
    Ok(rho * eval.norm_h_sq.ln()
        - spd_log_det(&eval.s)?
        - (state.lambda * state.slack).ln())
}

/// Directional derivative of the potential, split into the `x` contribution
/// and the `(lambda, sigma, w, U, W)` contribution.
pub fn potential_split_derivative_qq(
    inst: &QqInstance,
    state: &QqState,
    dir: &QqDirection,
    rho: f64,
) -> Result<(f64, f64)> {
    let n = inst.n();
    dir.check_dims(n)?;
    let eval = evaluate(inst, state)?;
    let chol = Cholesky::new(eval.s.clone()).ok_or(Error::NotPositiveDefinite(
        "symmetrized complementarity product must be positive definite",
    ))?;
    let primal = QqDirection { dx: dir.dx.clone(), ..QqDirection::zeros(n) };
    let dual = QqDirection {
        dlambda: dir.dlambda,
        dsigma: dir.dsigma,
        dslack: dir.dslack,
        du: dir.du.clone(),
        dw: dir.dw.clone(),
        ..QqDirection::zeros(n)
    };
    let scale = 2.0 * rho / eval.norm_h_sq;
    let g_primal = scale * eval.h.dot(&jacobian_product_qq(inst, state, &primal)?);
    let (du_d, dw_d) = (dir.du.to_dense(), dir.dw.to_dense());
    let ds = 0.5 * (&eval.w * &du_d + &du_d * &eval.w + &dw_d * &eval.u + &eval.u * &dw_d);
    let g_dual = scale * eval.h.dot(&jacobian_product_qq(inst, state, &dual)?)
        - chol.solve(&ds).trace()
        - dir.dlambda / state.lambda
        - dir.dslack / state.slack;
    Ok((g_primal, g_dual))
}

/// Full directional derivative of the potential along `dir`.
pub fn potential_directional_derivative_qq(
    inst: &QqInstance,
    state: &QqState,
    dir: &QqDirection,
    rho: f64,
) -> Result<f64> {
    let (g_primal, g_dual) = potential_split_derivative_qq(inst, state, dir, rho)?;
    Ok(g_primal + g_dual)
}

/// Deterministic cone-interior start: `x = 0`; a small grid of multipliers
/// crossed with doubling `sigma` until the pencil clears minimum eigenvalue
/// 0.1 (best-effort otherwise); slack covering `q2(0)`; `W` the shifted
/// pencil; `U = I`.
pub fn default_init_qq(inst: &QqInstance) -> Result<QqState> {
    let n = inst.n();
    let mut best: Option<(f64, f64, f64)> = None; // (min eigenvalue, lambda, sigma)
    let mut chosen = None;
    'search: for lambda in [1.0, 0.5, 0.1, 0.01] {
        let mut sigma = 1.0;
        for _ in 0..=40 {
            let min_eig = symlin::min_eigenvalue(&inst.pencil(lambda, sigma))?;
            if min_eig >= 0.1 {
                chosen = Some((lambda, sigma, min_eig));
                break 'search;
            }
            if best.is_none_or(|(lam, _, _)| min_eig > lam) {
                best = Some((min_eig, lambda, sigma));
            }
            sigma *= 2.0;
        }
    }
    let (lambda, sigma, min_eig) = chosen.unwrap_or_else(|| {
        let (lam, l, s) = best.expect("candidate list is never empty");
        (l, s, lam)
    });
    let shift = (0.2 - min_eig).max(0.1);
    let q2_at_zero = inst.q2.c;
    Ok(QqState {
        x: DVector::zeros(n),
        lambda,
        sigma,
        slack: (-q2_at_zero).max(1.0),
        u: SymMatrix::identity(n),
        w: inst.pencil(lambda, sigma).shift_diagonal(shift),
    })
}

/// Pulls an infeasible terminal point back to the feasible set by bisecting
/// the segment toward the recorded strictly feasible point, returning the
/// feasible end of the final bracket (closest to the solver's point).
fn polish_feasibility(inst: &QqInstance, x: &DVector<f64>) -> Option<DVector<f64>> {
    if inst.q2.eval(x) <= 0.0 {
        return None;
    }
    let slater = inst.slater_point.as_ref()?;
    if inst.q2.eval(slater) >= 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if inst.q2.eval(&x.lerp(slater, mid)) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(x.lerp(slater, hi))
}

fn build_report(
    inst: &QqInstance,
    state: &QqState,
    status: SolveStatus,
    iterations: usize,
    wall_time_seconds: f64,
    trace: Option<Vec<TraceRow>>,
) -> Result<SolveReport> {
    let q1_value = inst.q1.eval(&state.x);
    let gap = q1_value * q1_value - 0.25 * state.sigma * state.sigma;
    let fenchel = fenchel_residual(ScalarConvexFunction::Square, q1_value, state.sigma)?;
    let final_gamma_norm = gamma_qq(inst, &state.x, state.lambda, state.sigma)?.norm();
    let dual_slack_residual =
        (inst.pencil(state.lambda, state.sigma).to_dense() - state.w.to_dense()).norm();
    let s = sym_half_product(&state.w.to_dense(), &state.u.to_dense());
    let scalar_comp = state.lambda * state.slack;
    Ok(SolveReport {
        status,
        iterations,
        final_gamma_norm,
        gap,
        fenchel_residual: fenchel,
        dual_slack_residual,
        complementarity_norm: (scalar_comp * scalar_comp + s.norm_squared()).sqrt(),
        wall_time_seconds,
        trace,
    })
}

/// Runs the potential-reduction iteration from `init` (or the default start).
///
/// Stops when `||Gamma|| <= epsilon` (`Converged`); otherwise reports
/// `MaxIter`, `LineSearchStall`, or `SingularSystem`. If the terminal point
/// violates the constraint and the instance records a strictly feasible
/// point, the returned `x` is pulled back onto the feasible set and every
/// report quantity is re-evaluated there.
pub fn solve_qq(
    inst: &QqInstance,
    config: &SolverConfig,
    init: Option<QqState>,
) -> Result<(QqState, SolveReport)> {
    let n = inst.n();
    let (rho, memory) = config.resolve(n, true)?;
    let clock = Instant::now();
    let mut state = match init {
        Some(given) => {
            given.validate(inst)?;
            given
        }
        None => default_init_qq(inst)?,
    };
    let mut window = PotentialWindow::new(memory);
    let mut trace = config.record_trace.then(Vec::new);
    let mut status;
    let iterations;
    let mut iter = 0;
    loop {
        let gamma_norm = gamma_qq(inst, &state.x, state.lambda, state.sigma)?.norm();
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
        let p = potential_qq(inst, &state, rho)?;
        window.push(p);
        let p_max = window.max();

        let mut beta_used = config.beta;
        let mut dir = match newton_direction_qq(inst, &state, beta_used) {
            Ok(d) => d,
            Err(Error::Numerical(_)) | Err(Error::NotPositiveDefinite(_)) => {
                status = SolveStatus::SingularSystem;
                iterations = iter;
                break;
            }
            Err(other) => return Err(other),
        };
        let (mut g_primal, mut g_dual) =
            potential_split_derivative_qq(inst, &state, &dir, rho)?;
        if beta_used > 0.0 && g_primal + g_dual >= -1e-14 * (1.0 + p.abs()) {
            beta_used = 0.0;
            dir = match newton_direction_qq(inst, &state, 0.0) {
                Ok(d) => d,
                Err(Error::Numerical(_)) | Err(Error::NotPositiveDefinite(_)) => {
                    status = SolveStatus::SingularSystem;
                    iterations = iter;
                    break;
                }
                Err(other) => return Err(other),
            };
            (g_primal, g_dual) = potential_split_derivative_qq(inst, &state, &dir, rho)?;
        }

        // Scalar positivity bounds the admissible dual step before the cone
        // bisection takes over.
        let mut start = 1.0f64;
        if dir.dlambda < 0.0 {
            start = start.min(config.tau_boundary * (-state.lambda / dir.dlambda));
        }
        if dir.dslack < 0.0 {
            start = start.min(config.tau_boundary * (-state.slack / dir.dslack));
        }
        let (w0, u0) = (state.w.clone(), state.u.clone());
        let (dw, du) = (dir.dw.clone(), dir.du.clone());
        let (lambda0, slack0) = (state.lambda, state.slack);
        let (dlambda, dslack) = (dir.dlambda, dir.dslack);
        let cap = boundary_step_cap(start, config.tau_boundary, config.alpha_min, |t| {
            lambda0 + t * dlambda > 0.0
                && slack0 + t * dslack > 0.0
                && chol_pd_check_dense(&w0.add_scaled(t, &dw).to_dense())
                && chol_pd_check_dense(&u0.add_scaled(t, &du).to_dense())
        });
        let mut alpha_dual = cap;
        let mut alpha_primal = if config.split_steps && g_primal < 0.0 { 1.0 } else { cap };

        let mut accepted = None;
        while alpha_primal.max(alpha_dual) >= config.alpha_min {
            let trial = QqState {
                x: &state.x + alpha_primal * &dir.dx,
                lambda: state.lambda + alpha_dual * dir.dlambda,
                sigma: state.sigma + alpha_dual * dir.dsigma,
                slack: state.slack + alpha_dual * dir.dslack,
                u: state.u.add_scaled(alpha_dual, &dir.du),
                w: state.w.add_scaled(alpha_dual, &dir.dw),
            };
            let slope = alpha_primal * g_primal + alpha_dual * g_dual;
            match potential_qq(inst, &trial, rho) {
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
        debug_assert!(next.lambda > 0.0 && next.slack > 0.0);
        state = next;
        iter += 1;
        if let Some(rows) = trace.as_mut() {
            let q1_value = inst.q1.eval(&state.x);
            rows.push(TraceRow {
                iter,
                alpha_primal,
                alpha_dual,
                beta: beta_used,
                norm_h: h_qq(inst, &state)?.norm(),
                norm_gamma: gamma_qq(inst, &state.x, state.lambda, state.sigma)?.norm(),
                potential: p_accepted,
                gap: q1_value * q1_value - 0.25 * state.sigma * state.sigma,
            });
        }
    }
    if let Some(feasible_x) = polish_feasibility(inst, &state.x) {
        state.x = feasible_x;
        // The pull-back can perturb stationarity; a Converged verdict must
        // stay backed by the residual at the point actually returned.
        if status == SolveStatus::Converged {
            let polished_norm =
                gamma_qq(inst, &state.x, state.lambda, state.sigma)?.norm();
            if polished_norm > config.epsilon {
                status = SolveStatus::MaxIter;
            }
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
