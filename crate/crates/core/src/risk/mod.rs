//! Value-at-Risk for deterministic controls and the uniform-in-time constraint.
//!
//! For a deterministic control the normalized stochastic integral
//! `int y' dW / ||y||_t` is standard normal, so the quantile of the wealth is
//! available in closed form and the VaR bound coincides with the VaR itself.

mod normal;

pub use normal::{normal_cdf, normal_pdf, normal_quantile, normal_sf};
pub(crate) use normal::quantile_unchecked;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{check_curve_control, inner_product_theta, Control, RiskCurve};

/// Ratios `VaR*_t / zeta_t(x)` up to `1 + ADMISSIBLE_TOL` count as admissible.
pub const ADMISSIBLE_TOL: f64 = 1e-12;

/// Confidence level, loss fraction and the derived constraint quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RiskSpec {
    pub alpha: f64,
    pub zeta: f64,
    /// alpha-quantile of the standard normal (negative).
    pub z_alpha: f64,
    /// `|z_alpha| - ||theta||_T`.
    pub z_tilde: f64,
    /// `-ln(1 - zeta)`.
    pub a_max: f64,
    pub theta_norm: f64,
}

impl RiskSpec {
    pub fn new(alpha: f64, zeta: f64, curve: &RiskCurve) -> Result<Self> {
        Self::with_theta_norm(alpha, zeta, curve.theta_norm())
    }

    pub fn with_theta_norm(alpha: f64, zeta: f64, theta_norm: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::domain("alpha", alpha, "(0, 1/2)"));
        }
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::domain("zeta", zeta, "(0, 1)"));
        }
        if !(theta_norm >= 0.0 && theta_norm.is_finite()) {
            return Err(Error::domain("||theta||_T", theta_norm, "[0, inf)"));
        }
        let z_alpha = normal_quantile(alpha)?;
        Ok(RiskSpec {
            alpha,
            zeta,
            z_alpha,
            z_tilde: z_alpha.abs() - theta_norm,
            a_max: -(-zeta).ln_1p(),
            theta_norm,
        })
    }

    pub fn z_abs(&self) -> f64 {
        self.z_alpha.abs()
    }

    /// `|z_alpha| >= 2 ||theta||_T`, the hypothesis of the closed-form solution.
    pub fn hypothesis_holds(&self) -> bool {
        self.z_abs() >= 2.0 * self.theta_norm
    }

    pub fn check_hypothesis(&self) -> Result<()> {
        if self.hypothesis_holds() {
            Ok(())
        } else {
            Err(Error::HypothesisViolated {
                z_abs: self.z_abs(),
                theta_norm: self.theta_norm,
            })
        }
    }
}

fn check_endowment(x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain("x", x, "(0, inf)"));
    }
    Ok(())
}

/// Log of `Q_t / x`: `R_t + (y,theta)_t - ||y||_t^2 / 2 + z_alpha ||y||_t`.
fn log_quantile_ratio(curve: &RiskCurve, y: &Control, spec: &RiskSpec, t: f64) -> Result<f64> {
    check_curve_control(curve, y)?;
    let r = curve.rate_integral(t)?;
    let ip = inner_product_theta(curve, y, t)?;
    let nsq = y.norm_sq_at(t)?;
    Ok(r + ip - 0.5 * nsq + spec.z_alpha * nsq.sqrt())
}

/// The alpha-quantile `Q_t` of the wealth `X^y_t`.
pub fn quantile_process(
    x: f64,
    curve: &RiskCurve,
    y: &Control,
    spec: &RiskSpec,
    t: f64,
) -> Result<f64> {
    check_endowment(x)?;
    Ok(x * log_quantile_ratio(curve, y, spec, t)?.exp())
}

/// `VaR*_t = x e^{R_t} - Q*_t`. For deterministic controls `tau*_t = z_alpha`
/// and `Q*_t = Q_t`.
pub fn var_star(x: f64, curve: &RiskCurve, y: &Control, spec: &RiskSpec, t: f64) -> Result<f64> {
    let bond = x * curve.rate_integral(t)?.exp();
    Ok(bond - quantile_process(x, curve, y, spec, t)?)
}

/// `zeta_t(x) = zeta x e^{R_t}`.
pub fn level_risk(x: f64, curve: &RiskCurve, zeta: f64, t: f64) -> Result<f64> {
    check_endowment(x)?;
    Ok(zeta * x * curve.rate_integral(t)?.exp())
}

/// `K_t(y) = ||y||_t^2 / 2 + |z_alpha| ||y||_t - (theta, y)_t`.
///
/// `VaR*_t <= zeta_t(x)` holds exactly when `K_t(y) <= a_max`.
pub fn k_functional(curve: &RiskCurve, y: &Control, spec: &RiskSpec, t: f64) -> Result<f64> {
    check_curve_control(curve, y)?;
    let nsq = y.norm_sq_at(t)?;
    Ok(0.5 * nsq + spec.z_abs() * nsq.sqrt() - inner_product_theta(curve, y, t)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstraintReport {
    pub times: Vec<f64>,
    pub k_values: Vec<f64>,
    /// `VaR*_t / zeta_t(x)` at each probe.
    pub ratio: Vec<f64>,
    pub admissible: bool,
    pub worst_time: f64,
    pub max_ratio: f64,
    /// `K_t(y) <= a_max` at every probe (the log-form of the same constraint).
    pub k_admissible: bool,
}

/// Probe times: all breakpoints plus `probes` uniformly spaced points.
pub fn probe_times(curve: &RiskCurve, probes: usize) -> Vec<f64> {
    let h = curve.horizon();
    let mut times: Vec<f64> = (0..probes)
        .map(|i| h * i as f64 / (probes - 1) as f64)
        .chain(curve.grid().breakpoints().iter().copied())
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    *times.last_mut().unwrap() = h;
    times
}

/// Evaluates the uniform VaR constraint on a probe grid.
pub fn check_admissible(
    x: f64,
    curve: &RiskCurve,
    y: &Control,
    spec: &RiskSpec,
    probes: usize,
) -> Result<ConstraintReport> {
    if probes < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 probes, got {probes}")));
    }
    check_endowment(x)?;
    check_curve_control(curve, y)?;
    let times = probe_times(curve, probes);
    let mut k_values = Vec::with_capacity(times.len());
    let mut ratio = Vec::with_capacity(times.len());
    for &t in &times {
        k_values.push(k_functional(curve, y, spec, t)?);
        ratio.push(var_star(x, curve, y, spec, t)? / level_risk(x, curve, spec.zeta, t)?);
    }
    // The ratio saturates at 1/zeta for very risky controls, so ties are
    // broken by the (unsaturated) K value, then by the earliest time.
    let mut worst = 0;
    for i in 1..times.len() {
        let better = ratio[i] > ratio[worst]
            || (ratio[i] == ratio[worst] && k_values[i] > k_values[worst]);
        if better {
            worst = i;
        }
    }
    let max_ratio = ratio[worst];
    let k_admissible = k_values.iter().all(|&k| k <= spec.a_max + ADMISSIBLE_TOL);
    Ok(ConstraintReport {
        worst_time: times[worst],
        admissible: max_ratio <= 1.0 + ADMISSIBLE_TOL,
        max_ratio,
        k_admissible,
        times,
        k_values,
        ratio,
    })
}
