//! Closed-form optimal controls for power utility, with and without the
//! uniform VaR bound, and the Lagrangian machinery behind the constrained case.
//!
//! The constrained optimum is always proportional to the market price of risk:
//! `y* = (g*/||theta||_T) theta`, where the radial coordinate `g*` solves
//! `g^2/2 + z~ g = a*` with `a* = min(a0, a_max)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{
    check_curve_control, control_to_portfolio, inner_product_theta, Control, MarketModel,
    RiskCurve,
};
use crate::risk::RiskSpec;

/// Below this `||theta||_T` the market is treated as having no risk premium.
pub const ZERO_THETA_TOL: f64 = 1e-14;

/// Power utility `U(z) = z^gamma`, `0 < gamma <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    gamma: f64,
}

impl UtilitySpec {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::domain("gamma", gamma, "(0, 1]"));
        }
        Ok(UtilitySpec { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_linear(&self) -> bool {
        self.gamma == 1.0
    }

    pub fn utility(&self, wealth: f64) -> f64 {
        if self.is_linear() {
            wealth
        } else {
            wealth.powf(self.gamma)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// The unconstrained (Merton) optimum, either because no bound was imposed
    /// or because it already satisfies the bound (`a0 <= a_max`).
    UnconstrainedInterior,
    /// The bound is active: `a* = a_max`.
    ConstraintBinding,
    /// `||theta||_T = 0`: the bond-only strategy is optimal.
    ZeroTheta,
    /// `gamma = 1` without a bound and `||theta||_T > 0`: the supremum is infinite.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Solution {
    pub regime: Regime,
    /// Radial coordinate `||y*||_T`.
    pub g_star: Option<f64>,
    pub a_star: Option<f64>,
    pub a_zero: Option<f64>,
    pub a_max: Option<f64>,
    /// Optimal value `E (X*_T)^gamma`; infinite (serialized as null) when unbounded.
    pub j_star: f64,
    pub theta_norm: f64,
    pub gamma: f64,
    pub endowment: f64,
    /// Optimal control per interval; absent when unbounded.
    pub control: Option<Vec<Vec<f64>>>,
    /// Portfolio weights `pi* = (sigma')^{-1} y*` per interval; filled by [`Solution::with_portfolio`].
    pub portfolio: Option<Vec<Vec<f64>>>,
    pub breakpoints: Vec<f64>,
    #[serde(skip)]
    optimal: Option<Control>,
}

impl Solution {
    pub fn optimal_control(&self) -> Option<&Control> {
        self.optimal.as_ref()
    }

    /// Adds the portfolio weights for the given market.
    pub fn with_portfolio(mut self, model: &MarketModel) -> Result<Self> {
        if let Some(y) = &self.optimal {
            self.portfolio = Some(control_to_portfolio(model, y)?);
        }
        Ok(self)
    }

    fn build(
        regime: Regime,
        curve: &RiskCurve,
        util: &UtilitySpec,
        x: f64,
        j_star: f64,
        optimal: Option<Control>,
    ) -> Self {
        Solution {
            regime,
            g_star: None,
            a_star: None,
            a_zero: None,
            a_max: None,
            j_star,
            theta_norm: curve.theta_norm(),
            gamma: util.gamma(),
            endowment: x,
            control: optimal.as_ref().map(|c| c.values().to_vec()),
            portfolio: None,
            breakpoints: curve.grid().breakpoints().to_vec(),
            optimal,
        }
    }
}

fn check_endowment(x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain("x", x, "(0, inf)"));
    }
    Ok(())
}

/// `g(a) = sqrt(2a + z~^2) - z~`, the positive root of `g^2/2 + z~ g = a`.
pub fn g_of_a(a: f64, spec: &RiskSpec) -> Result<f64> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::domain("a", a, "[0, inf)"));
    }
    let zt = spec.z_tilde;
    let radicand = 2.0 * a + zt * zt;
    if radicand < 0.0 {
        return Err(Error::domain("2a + z~^2", radicand, "[0, inf)"));
    }
    // rationalized form avoids cancellation when z~ is large relative to a
    if zt > 0.0 {
        Ok(2.0 * a / (radicand.sqrt() + zt))
    } else {
        Ok(radicand.sqrt() - zt)
    }
}

/// [`g_of_a`] restricted to the admissible budgets `[0, a_max]`.
pub fn g_of_a_strict(a: f64, spec: &RiskSpec) -> Result<f64> {
    if a > spec.a_max {
        return Err(Error::domain("a", a, format!("[0, {}]", spec.a_max)));
    }
    g_of_a(a, spec)
}

/// `a0 = ||theta||^2 / (2(1-gamma)^2) + z~ ||theta|| / (1-gamma)`: the budget
/// consumed by the unconstrained optimum.
pub fn a_zero(curve: &RiskCurve, spec: &RiskSpec, util: &UtilitySpec) -> Result<f64> {
    if util.is_linear() {
        return Err(Error::domain("gamma", 1.0, "(0, 1) for a0"));
    }
    let th = curve.theta_norm();
    let k = 1.0 - util.gamma();
    Ok(th * th / (2.0 * k * k) + spec.z_tilde * th / k)
}

/// `F_T(y) = (theta, y)_T - (1-gamma)/2 ||y||_T^2`; `E (X^y_T)^gamma = x^gamma e^{gamma(R_T + F_T(y))}`
/// for deterministic `y`.
pub fn objective(curve: &RiskCurve, y: &Control, util: &UtilitySpec) -> Result<f64> {
    check_curve_control(curve, y)?;
    let t = curve.horizon();
    Ok(inner_product_theta(curve, y, t)? - 0.5 * (1.0 - util.gamma()) * y.norm_sq())
}

/// `G(g) = g ||theta||_T - (1-gamma) g^2 / 2`: the objective along the ray through theta.
pub fn radial_objective(g: f64, theta_norm: f64, util: &UtilitySpec) -> f64 {
    g * theta_norm - 0.5 * (1.0 - util.gamma()) * g * g
}

/// Merton solution of the problem without a VaR bound.
pub fn solve_unconstrained(x: f64, curve: &RiskCurve, util: &UtilitySpec) -> Result<Solution> {
    check_endowment(x)?;
    let gamma = util.gamma();
    let r_t = curve.rate_integral(curve.horizon())?;
    let th = curve.theta_norm();
    if th < ZERO_THETA_TOL {
        let zero = Control::zeros(curve.grid().clone(), curve.dim());
        let mut s = Solution::build(
            Regime::ZeroTheta,
            curve,
            util,
            x,
            util.utility(x) * (gamma * r_t).exp(),
            Some(zero),
        );
        s.g_star = Some(0.0);
        return Ok(s);
    }
    if util.is_linear() {
        return Ok(Solution::build(Regime::Unbounded, curve, util, x, f64::INFINITY, None));
    }
    let k = 1.0 - gamma;
    let y = Control::proportional(curve, 1.0 / k);
    let j = util.utility(x) * (gamma * r_t + gamma * curve.theta_norm_sq() / (2.0 * k)).exp();
    let mut s = Solution::build(Regime::UnconstrainedInterior, curve, util, x, j, Some(y));
    s.g_star = Some(th / k);
    Ok(s)
}

/// Optimal control under `sup_t VaR*_t / zeta_t(x) <= 1`.
pub fn solve_constrained(
    x: f64,
    curve: &RiskCurve,
    spec: &RiskSpec,
    util: &UtilitySpec,
) -> Result<Solution> {
    check_endowment(x)?;
    spec.check_hypothesis()?;
    let gamma = util.gamma();
    let r_t = curve.rate_integral(curve.horizon())?;
    let th = curve.theta_norm();

    if th < ZERO_THETA_TOL {
        let zero = Control::zeros(curve.grid().clone(), curve.dim());
        let mut s = Solution::build(
            Regime::ZeroTheta,
            curve,
            util,
            x,
            util.utility(x) * (gamma * r_t).exp(),
            Some(zero),
        );
        s.g_star = Some(0.0);
        s.a_star = Some(0.0);
        s.a_zero = (!util.is_linear()).then_some(0.0);
        s.a_max = Some(spec.a_max);
        return Ok(s);
    }

    let (regime, a0, a_star) = if util.is_linear() {
        (Regime::ConstraintBinding, None, spec.a_max)
    } else {
        let a0 = a_zero(curve, spec, util)?;
        if a0 <= spec.a_max {
            (Regime::UnconstrainedInterior, Some(a0), a0)
        } else {
            (Regime::ConstraintBinding, Some(a0), spec.a_max)
        }
    };

    let (g, y) = if regime == Regime::UnconstrainedInterior {
        // g(a0) = ||theta||/(1-gamma) identically; use the exact Merton control.
        let k = 1.0 - gamma;
        (th / k, Control::proportional(curve, 1.0 / k))
    } else {
        let g = g_of_a(a_star, spec)?;
        (g, Control::proportional(curve, g / th))
    };
    let j = if regime == Regime::UnconstrainedInterior {
        util.utility(x) * (gamma * r_t + gamma * curve.theta_norm_sq() / (2.0 * (1.0 - gamma))).exp()
    } else {
        util.utility(x) * (gamma * r_t + gamma * radial_objective(g, th, util)).exp()
    };

    let mut s = Solution::build(regime, curve, util, x, j, Some(y));
    s.g_star = Some(g);
    s.a_star = Some(a_star);
    s.a_zero = a0;
    s.a_max = Some(spec.a_max);
    Ok(s)
}

/// Upper end of the multiplier range on which `psi(lambda) > 0`:
/// `||theta|| / (beta - ||theta||)_+` (infinite when `beta <= ||theta||`).
pub fn lambda_upper(theta_norm: f64, beta: f64) -> f64 {
    let gap = beta - theta_norm;
    if gap > 0.0 {
        theta_norm / gap
    } else {
        f64::INFINITY
    }
}

/// Radial coordinate of the stationary point of `H_lambda`:
/// `psi(lambda) = (||theta|| + lambda(||theta|| - beta)) / (1 - gamma + lambda)`.
pub fn lagrange_psi(lambda: f64, curve: &RiskCurve, util: &UtilitySpec, beta: f64) -> Result<f64> {
    let th = curve.theta_norm();
    let lo = util.gamma() - 1.0;
    let hi = lambda_upper(th, beta);
    if !(lambda > lo && lambda < hi) {
        return Err(Error::domain("lambda", lambda, format!("({lo}, {hi})")));
    }
    Ok((th + lambda * (th - beta)) / (1.0 - util.gamma() + lambda))
}

/// The multiplier for which the stationary point saturates `K_T = a`.
pub fn lambda_of_a(a: f64, curve: &RiskCurve, util: &UtilitySpec, beta: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::domain("a", a, "(0, inf)"));
    }
    let th = curve.theta_norm();
    let gap = beta - th;
    let k = 1.0 - util.gamma();
    let lambda = (th + k * gap) / (2.0 * a + gap * gap).sqrt() - k;
    let hi = lambda_upper(th, beta);
    if !(lambda > -k && lambda < hi) {
        return Err(Error::domain("lambda(a)", lambda, format!("({}, {hi})", -k)));
    }
    Ok(lambda)
}

/// The stationary control `y^lambda = (psi(lambda)/||theta||) theta`.
pub fn stationary_control(
    lambda: f64,
    curve: &RiskCurve,
    util: &UtilitySpec,
    beta: f64,
) -> Result<Control> {
    let psi = lagrange_psi(lambda, curve, util, beta)?;
    let th = curve.theta_norm();
    if th < ZERO_THETA_TOL {
        return Err(Error::domain("||theta||_T", th, "(0, inf)"));
    }
    Ok(Control::proportional(curve, psi / th))
}

/// `H_lambda(y) = -(lambda + 1 - gamma)/2 ||y||^2 + (1 + lambda)(theta, y) - lambda beta ||y||`,
/// i.e. `F_T(y) - lambda K_T(y)` with the quantile fixed at `-beta`.
pub fn lagrangian(
    y: &Control,
    lambda: f64,
    curve: &RiskCurve,
    util: &UtilitySpec,
    beta: f64,
) -> Result<f64> {
    check_curve_control(curve, y)?;
    let nsq = y.norm_sq();
    let ip = inner_product_theta(curve, y, curve.horizon())?;
    Ok(-0.5 * (lambda + 1.0 - util.gamma()) * nsq + (1.0 + lambda) * ip - lambda * beta * nsq.sqrt())
}
