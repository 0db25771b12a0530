//! Optimal investment in a Black-Scholes market with deterministic,
//! piecewise-constant coefficients, under a Value-at-Risk bound that must hold
//! uniformly over the whole investment horizon.
//!
//! - [`market`]: coefficients, market price of risk `theta`, exact step integrals.
//! - [`risk`]: normal quantiles, the wealth quantile `Q_t`, `VaR*`, the `K` functional
//!   and probe-grid admissibility checks.
//! - [`optimizer`]: closed-form solutions with and without the bound, plus the
//!   Lagrangian internals used to verify them.
//! - [`simulate`]: exact lognormal and Euler-Maruyama Monte Carlo.
//! - [`oracle`]: brute-force and finite-difference cross-checks.

pub mod error;
pub mod market;
pub mod optimizer;
pub mod oracle;
pub mod risk;
pub mod simulate;

pub use error::{Error, Result};
pub use market::{build_risk_curve, Control, MarketModel, RiskCurve, TimeGrid};
pub use optimizer::{solve_constrained, solve_unconstrained, Regime, Solution, UtilitySpec};
pub use risk::{check_admissible, ConstraintReport, RiskSpec};
pub use simulate::{SimConfig, SimulationReport};
