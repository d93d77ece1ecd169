//! Scalar convex functions, their convex conjugates, and Fenchel–Young
//! residuals, plus the closed-form dual of the regularized Gaussian model
//! problem `min_x beta*x^2 + exp(-x^2)`.
//!
//! Two function kinds are provided — `Square` (`V(y) = y^2`) and `NegExp`
//! (`V(y) = exp(-y)`) — behind one enum interface; a new kind is registered by
//! adding a variant and filling in the three match arms.

use crate::{Error, Result};

/// A proper convex lower-semicontinuous function of one real variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarConvexFunction {
    /// `V(y) = y^2`, conjugate `V*(s) = s^2 / 4` on all of `R`.
    Square,
    /// `V(y) = exp(-y)`, conjugate `V*(s) = -s*(ln(-s) - 1)` on `s <= 0`
    /// (continuously extended by `V*(0) = 0`).
    NegExp,
}

impl ScalarConvexFunction {
    /// Evaluates `V(y)`.
    pub fn eval(self, y: f64) -> f64 {
        match self {
            ScalarConvexFunction::Square => y * y,
            ScalarConvexFunction::NegExp => (-y).exp(),
        }
    }

    /// True iff `sigma` lies in the domain of the conjugate `V*`.
    pub fn conjugate_domain_contains(self, sigma: f64) -> bool {
        match self {
            ScalarConvexFunction::Square => sigma.is_finite(),
            ScalarConvexFunction::NegExp => sigma.is_finite() && sigma <= 0.0,
        }
    }

    /// Human-readable description of the conjugate domain, used in errors.
    pub fn conjugate_domain_description(self) -> &'static str {
        match self {
            ScalarConvexFunction::Square => "all finite reals",
            ScalarConvexFunction::NegExp => "sigma <= 0",
        }
    }
}

/// Evaluates the convex conjugate `V*(sigma) = sup_y [sigma*y - V(y)]`.
///
/// Closed forms: `Square -> sigma^2/4`; `NegExp -> -sigma*(ln(-sigma) - 1)`
/// for `sigma < 0`, extended continuously by `0` at `sigma = 0`.
pub fn conj_eval(v: ScalarConvexFunction, sigma: f64) -> Result<f64> {
    if !v.conjugate_domain_contains(sigma) {
        return Err(Error::Domain(format!(
            "conjugate of {v:?} requires {}, got sigma = {sigma}",
            v.conjugate_domain_description()
        )));
    }
    Ok(match v {
        ScalarConvexFunction::Square => 0.25 * sigma * sigma,
        ScalarConvexFunction::NegExp => {
            if sigma == 0.0 {
                0.0
            } else {
                -sigma * ((-sigma).ln() - 1.0)
            }
        }
    })
}

/// A primal value `y`, a dual variable `sigma`, and their Fenchel–Young
/// residual `V(y) + V*(sigma) - y*sigma`, which is nonnegative and vanishes
/// exactly at conjugate subgradient pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FenchelTriple {
    pub y: f64,
    pub sigma: f64,
    pub residual: f64,
}

impl FenchelTriple {
    pub fn new(v: ScalarConvexFunction, y: f64, sigma: f64) -> Result<Self> {
        Ok(FenchelTriple {
            y,
            sigma,
            residual: fenchel_residual(v, y, sigma)?,
        })
    }
}

/// The Fenchel–Young residual `V(y) + V*(sigma) - y*sigma`.
pub fn fenchel_residual(v: ScalarConvexFunction, y: f64, sigma: f64) -> Result<f64> {
    Ok(v.eval(y) + conj_eval(v, sigma)? - y * sigma)
}

/// The regularized Gaussian primal objective `beta*x^2 + exp(-x^2)`.
pub fn gaussian_primal(beta: f64, x: f64) -> f64 {
    beta * x * x + (-x * x).exp()
}

/// The Gaussian dual objective `g(sigma) = -V*(sigma)` for `V = NegExp`,
/// maximized over the dual-feasible interval `[-beta, 0]`.
pub fn gaussian_dual_objective(sigma: f64) -> Result<f64> {
    Ok(-conj_eval(ScalarConvexFunction::NegExp, sigma)?)
}

/// Closed-form solution of the Gaussian dual `max { g(sigma) : -beta <= sigma <= 0 }`
/// together with the primal minimizer set of `beta*x^2 + exp(-x^2)`.
///
/// Returns `(sigma_star, g_star, x_star)` with `x_star` sorted ascending:
/// `beta >= 1` gives `(-1, 1, {0})`; `0 < beta < 1` gives
/// `(-beta, beta*(1 - ln beta), {±sqrt(-ln beta)})`. In both cases `g_star`
/// equals the primal minimum (zero duality gap).
pub fn gaussian_dual_solve(beta: f64) -> Result<(f64, f64, Vec<f64>)> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!(
            "gaussian_dual_solve requires beta > 0, got {beta}"
        )));
    }
    if beta >= 1.0 {
        Ok((-1.0, 1.0, vec![0.0]))
    } else {
        let root = (-beta.ln()).sqrt();
        Ok((-beta, beta * (1.0 - beta.ln()), vec![-root, root]))
    }
}

/// Golden-section maximization of the Gaussian dual over `[-beta, 0]`,
/// independent of the closed form. Returns `(sigma, g(sigma))`.
pub fn gaussian_dual_numeric_max(beta: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!(
            "gaussian_dual_numeric_max requires beta > 0, got {beta}"
        )));
    }
    // The whole interval lies in the conjugate domain, so unwrapping is safe.
    let g = |sigma: f64| gaussian_dual_objective(sigma).expect("sigma <= 0 on [-beta, 0]");
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let (mut a, mut b) = (-beta, 0.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
        if b - a <= 1e-13 * (1.0 + beta) {
            break;
        }
    }
    let sigma = 0.5 * (a + b);
    Ok((sigma, g(sigma)))
}
