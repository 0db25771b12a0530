//! Deterministic-coefficient market on a piecewise-constant time grid.
//!
//! Every coefficient is a right-continuous step function: the value stored for
//! interval `k` holds on `[t_k, t_{k+1})`. All time integrals are therefore
//! finite sums and are computed exactly, without quadrature.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Volatility blocks with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Breakpoints closer than this (relative to the horizon) are merged.
const MERGE_TOL: f64 = 1e-12;

/// Ordered breakpoints `0 = t_0 < t_1 < ... < t_K = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    breakpoints: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        TimeGrid::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.breakpoints
    }
}

impl TimeGrid {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidInput(
                "time grid needs at least two breakpoints".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "time grid must start at 0, got {}",
                breakpoints[0]
            )));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite breakpoint".into()));
        }
        if let Some(w) = breakpoints.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "breakpoints must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(TimeGrid { breakpoints })
    }

    /// `[0, horizon]` split into `intervals` equal pieces.
    pub fn uniform(horizon: f64, intervals: usize) -> Result<Self> {
        if horizon.is_nan() || horizon <= 0.0 || intervals == 0 {
            return Err(Error::InvalidInput(format!(
                "uniform grid needs horizon > 0 and at least one interval (got {horizon}, {intervals})"
            )));
        }
        let mut bp: Vec<f64> = (0..=intervals)
            .map(|i| horizon * i as f64 / intervals as f64)
            .collect();
        bp[intervals] = horizon;
        TimeGrid::new(bp)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn intervals(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.breakpoints[k + 1] - self.breakpoints[k]
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t.is_nan() || t < 0.0 || t > self.horizon() {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(())
    }

    /// Interval containing `t`; the horizon itself belongs to the last interval.
    pub fn locate(&self, t: f64) -> usize {
        let k = self.breakpoints.partition_point(|&b| b <= t);
        k.saturating_sub(1).min(self.intervals() - 1)
    }

    /// Exact integral over `[0, t]` of the step function whose value on
    /// interval `k` is `density(k)`.
    pub fn integrate_to(&self, t: f64, density: impl Fn(usize) -> f64) -> Result<f64> {
        self.check_time(t)?;
        let mut acc = 0.0;
        for k in 0..self.intervals() {
            let (a, b) = (self.breakpoints[k], self.breakpoints[k + 1]);
            if b <= t {
                acc += density(k) * (b - a);
            } else {
                if t > a {
                    acc += density(k) * (t - a);
                }
                break;
            }
        }
        Ok(acc)
    }

    /// Union of two grids over the same horizon.
    pub fn merge(&self, other: &TimeGrid) -> Result<TimeGrid> {
        let h = self.horizon();
        if (other.horizon() - h).abs() > MERGE_TOL * h {
            return Err(Error::InvalidInput(format!(
                "cannot merge grids with horizons {} and {}",
                h,
                other.horizon()
            )));
        }
        self.with_times(other.breakpoints())
    }

    /// This grid refined by the extra times (each must lie in `[0, T]`).
    pub fn with_times(&self, times: &[f64]) -> Result<TimeGrid> {
        for &t in times {
            self.check_time(t)?;
        }
        let h = self.horizon();
        let mut all: Vec<f64> = self.breakpoints.iter().chain(times).copied().collect();
        all.sort_by(f64::total_cmp);
        let mut merged: Vec<f64> = Vec::with_capacity(all.len());
        for t in all {
            match merged.last() {
                Some(&last) if t - last <= MERGE_TOL * h => {}
                _ => merged.push(t),
            }
        }
        // keep the original horizon exactly
        let n = merged.len();
        if h - merged[n - 1] <= MERGE_TOL * h {
            merged[n - 1] = h;
        }
        if merged.len() == 1 {
            merged.push(h);
        }
        TimeGrid::new(merged)
    }

    /// For each interval of `fine`, the interval of `self` that contains it.
    /// `fine` must refine `self`.
    fn source_intervals(&self, fine: &TimeGrid) -> Result<Vec<usize>> {
        if (fine.horizon() - self.horizon()).abs() > MERGE_TOL * self.horizon() {
            return Err(Error::GridMismatch);
        }
        let map = (0..fine.intervals())
            .map(|j| {
                let mid = 0.5 * (fine.breakpoints[j] + fine.breakpoints[j + 1]);
                self.locate(mid)
            })
            .collect::<Vec<_>>();
        // every breakpoint of self must appear in fine
        for &b in &self.breakpoints {
            let hit = fine
                .breakpoints
                .iter()
                .any(|&f| (f - b).abs() <= MERGE_TOL * self.horizon());
            if !hit {
                return Err(Error::GridMismatch);
            }
        }
        Ok(map)
    }
}

/// Merge two grids so that gridded objects on either can be compared.
pub fn refine_to_common_grid(a: &TimeGrid, b: &TimeGrid) -> Result<TimeGrid> {
    a.merge(b)
}

/// On-disk market description. `sigma` is row-major, one d x d block per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub breakpoints: Vec<f64>,
    pub r: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<Vec<f64>>>,
}

/// Black-Scholes market with piecewise-constant rate, drifts and volatilities.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    grid: TimeGrid,
    rates: Vec<f64>,
    drifts: Vec<DVector<f64>>,
    volatilities: Vec<DMatrix<f64>>,
}

impl MarketModel {
    pub fn new(
        grid: TimeGrid,
        rates: Vec<f64>,
        drifts: Vec<Vec<f64>>,
        volatilities: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let k = grid.intervals();
        if rates.len() != k || drifts.len() != k || volatilities.len() != k {
            return Err(Error::InvalidInput(format!(
                "expected {k} per-interval entries, got r: {}, mu: {}, sigma: {}",
                rates.len(),
                drifts.len(),
                volatilities.len()
            )));
        }
        let d = drifts[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("market needs at least one asset".into()));
        }
        let mut drift_vecs = Vec::with_capacity(k);
        let mut vol_mats = Vec::with_capacity(k);
        for (i, (mu, sigma)) in drifts.iter().zip(&volatilities).enumerate() {
            if mu.len() != d {
                return Err(Error::InvalidInput(format!(
                    "interval {i}: drift has dimension {}, expected {d}",
                    mu.len()
                )));
            }
            if sigma.len() != d || sigma.iter().any(|row| row.len() != d) {
                return Err(Error::InvalidInput(format!(
                    "interval {i}: volatility must be {d}x{d}"
                )));
            }
            let finite = rates[i].is_finite()
                && mu.iter().all(|v| v.is_finite())
                && sigma.iter().flatten().all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidInput(format!(
                    "interval {i}: non-finite coefficient"
                )));
            }
            let m = DMatrix::from_fn(d, d, |r, c| sigma[r][c]);
            let condition = condition_number(&m);
            if condition.is_nan() || condition > MAX_CONDITION {
                return Err(Error::SingularVolatility {
                    interval: i,
                    condition,
                });
            }
            drift_vecs.push(DVector::from_column_slice(mu));
            vol_mats.push(m);
        }
        Ok(MarketModel {
            grid,
            rates,
            drifts: drift_vecs,
            volatilities: vol_mats,
        })
    }

    /// Single-interval market on `[0, horizon]`.
    pub fn constant(horizon: f64, r: f64, mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Self> {
        MarketModel::new(TimeGrid::uniform(horizon, 1)?, vec![r], vec![mu], vec![sigma])
    }

    pub fn from_spec(spec: MarketSpec) -> Result<Self> {
        let grid = TimeGrid::new(spec.breakpoints)?;
        if (grid.horizon() - spec.horizon).abs() > MERGE_TOL * spec.horizon.abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "T = {} but last breakpoint is {}",
                spec.horizon,
                grid.horizon()
            )));
        }
        MarketModel::new(grid, spec.r, spec.mu, spec.sigma)
    }

    pub fn to_spec(&self) -> MarketSpec {
        let d = self.dim();
        MarketSpec {
            horizon: self.grid.horizon(),
            breakpoints: self.grid.breakpoints().to_vec(),
            r: self.rates.clone(),
            mu: self.drifts.iter().map(|v| v.iter().copied().collect()).collect(),
            sigma: self
                .volatilities
                .iter()
                .map(|m| (0..d).map(|r| (0..d).map(|c| m[(r, c)]).collect()).collect())
                .collect(),
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: MarketSpec = serde_json::from_str(&text)?;
        MarketModel::from_spec(spec)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.drifts[0].len()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn volatility(&self, k: usize) -> &DMatrix<f64> {
        &self.volatilities[k]
    }

    pub fn drift(&self, k: usize) -> &DVector<f64> {
        &self.drifts[k]
    }

    /// The same market expressed on a finer grid.
    pub fn resample(&self, fine: &TimeGrid) -> Result<MarketModel> {
        let src = self.grid.source_intervals(fine)?;
        Ok(MarketModel {
            grid: fine.clone(),
            rates: src.iter().map(|&k| self.rates[k]).collect(),
            drifts: src.iter().map(|&k| self.drifts[k].clone()).collect(),
            volatilities: src.iter().map(|&k| self.volatilities[k].clone()).collect(),
        })
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Derived deterministic curves: market price of risk and cumulative integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    grid: TimeGrid,
    rates: Vec<f64>,
    theta: Vec<Vec<f64>>,
    cum_r: Vec<f64>,
    cum_theta_sq: Vec<f64>,
}

impl RiskCurve {
    /// Builds the curve directly from per-interval rates and market prices of risk.
    pub fn from_theta(grid: TimeGrid, rates: Vec<f64>, theta: Vec<Vec<f64>>) -> Result<Self> {
        let k = grid.intervals();
        if rates.len() != k || theta.len() != k {
            return Err(Error::InvalidInput(format!(
                "expected {k} per-interval entries, got r: {}, theta: {}",
                rates.len(),
                theta.len()
            )));
        }
        let d = theta[0].len();
        if d == 0 || theta.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidInput("inconsistent theta dimension".into()));
        }
        if rates.iter().chain(theta.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite risk curve entry".into()));
        }
        let mut cum_r = Vec::with_capacity(k + 1);
        let mut cum_theta_sq = Vec::with_capacity(k + 1);
        let (mut acc_r, mut acc_th) = (0.0, 0.0);
        cum_r.push(0.0);
        cum_theta_sq.push(0.0);
        for j in 0..k {
            let dt = grid.dt(j);
            acc_r += rates[j] * dt;
            acc_th += sq_norm(&theta[j]) * dt;
            cum_r.push(acc_r);
            cum_theta_sq.push(acc_th);
        }
        Ok(RiskCurve {
            grid,
            rates,
            theta,
            cum_r,
            cum_theta_sq,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.theta[0].len()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn theta(&self) -> &[Vec<f64>] {
        &self.theta
    }

    /// `R_t` at each breakpoint.
    pub fn cum_r(&self) -> &[f64] {
        &self.cum_r
    }

    /// `||theta||_t^2` at each breakpoint.
    pub fn cum_theta_sq(&self) -> &[f64] {
        &self.cum_theta_sq
    }

    /// `R_t = int_0^t r_u du`.
    pub fn rate_integral(&self, t: f64) -> Result<f64> {
        self.cumulative(&self.cum_r, t, |k| self.rates[k])
    }

    /// `||theta||_t^2`.
    pub fn theta_norm_sq_at(&self, t: f64) -> Result<f64> {
        self.cumulative(&self.cum_theta_sq, t, |k| sq_norm(&self.theta[k]))
    }

    pub fn theta_norm_sq(&self) -> f64 {
        *self.cum_theta_sq.last().unwrap()
    }

    /// `||theta||_T`.
    pub fn theta_norm(&self) -> f64 {
        self.theta_norm_sq().sqrt()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    fn cumulative(&self, cum: &[f64], t: f64, density: impl Fn(usize) -> f64) -> Result<f64> {
        self.grid.check_time(t)?;
        let k = self.grid.locate(t);
        let start = self.grid.breakpoints()[k];
        if t == start {
            return Ok(cum[k]);
        }
        Ok(cum[k] + density(k) * (t - start))
    }

    pub fn refine(&self, fine: &TimeGrid) -> Result<RiskCurve> {
        let src = self.grid.source_intervals(fine)?;
        RiskCurve::from_theta(
            fine.clone(),
            src.iter().map(|&k| self.rates[k]).collect(),
            src.iter().map(|&k| self.theta[k].clone()).collect(),
        )
    }
}

/// Computes `theta = sigma^{-1} (mu - r 1)` per interval together with
/// `R_t` and `||theta||_t^2` at every breakpoint.
pub fn build_risk_curve(model: &MarketModel) -> Result<RiskCurve> {
    let d = model.dim();
    let mut theta = Vec::with_capacity(model.grid.intervals());
    for (k, sigma) in model.volatilities.iter().enumerate() {
        let excess = &model.drifts[k] - DVector::from_element(d, model.rates[k]);
        let solved = sigma.clone().lu().solve(&excess).ok_or(Error::SingularVolatility {
            interval: k,
            condition: f64::INFINITY,
        })?;
        theta.push(solved.iter().copied().collect());
    }
    RiskCurve::from_theta(model.grid.clone(), model.rates.clone(), theta)
}

/// Deterministic control: a step function `y_t in R^d` on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    grid: TimeGrid,
    values: Vec<Vec<f64>>,
}

/// On-disk control description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub breakpoints: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Control {
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grid.intervals() {
            return Err(Error::InvalidInput(format!(
                "control has {} values for {} intervals",
                values.len(),
                grid.intervals()
            )));
        }
        let d = values[0].len();
        if d == 0 || values.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidInput("inconsistent control dimension".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite control value".into()));
        }
        Ok(Control { grid, values })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        let values = vec![vec![0.0; dim]; grid.intervals()];
        Control { grid, values }
    }

    /// `y_t = scale * theta_t`.
    pub fn proportional(curve: &RiskCurve, scale: f64) -> Self {
        Control {
            grid: curve.grid.clone(),
            values: curve
                .theta
                .iter()
                .map(|th| th.iter().map(|v| scale * v).collect())
                .collect(),
        }
    }

    pub fn from_spec(spec: ControlSpec) -> Result<Self> {
        Control::new(TimeGrid::new(spec.breakpoints)?, spec.values)
    }

    pub fn to_spec(&self) -> ControlSpec {
        ControlSpec {
            breakpoints: self.grid.breakpoints().to_vec(),
            values: self.values.clone(),
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Control::from_spec(serde_json::from_str(&text)?)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Control {
        Control {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| c * x).collect())
                .collect(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Control) -> Result<Control> {
        self.check_compatible(other)?;
        Ok(Control {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + c * y).collect())
                .collect(),
        })
    }

    /// `int_0^t y_u' z_u du`.
    pub fn inner(&self, other: &Control, t: f64) -> Result<f64> {
        self.check_compatible(other)?;
        self.grid.integrate_to(t, |k| dot(&self.values[k], &other.values[k]))
    }

    /// `||y||_t^2`.
    pub fn norm_sq_at(&self, t: f64) -> Result<f64> {
        self.grid.integrate_to(t, |k| sq_norm(&self.values[k]))
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq_at(self.grid.horizon()).unwrap()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn refine(&self, fine: &TimeGrid) -> Result<Control> {
        let src = self.grid.source_intervals(fine)?;
        Ok(Control {
            grid: fine.clone(),
            values: src.iter().map(|&k| self.values[k].clone()).collect(),
        })
    }

    fn check_compatible(&self, other: &Control) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.dim() != other.dim() {
            return Err(Error::InvalidInput(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_curve_control(curve: &RiskCurve, y: &Control) -> Result<()> {
    if curve.grid != y.grid {
        return Err(Error::GridMismatch);
    }
    if curve.dim() != y.dim() {
        return Err(Error::InvalidInput(format!(
            "control dimension {} does not match market dimension {}",
            y.dim(),
            curve.dim()
        )));
    }
    Ok(())
}

/// Portfolio weights `pi = (sigma')^{-1} y` per interval.
pub fn control_to_portfolio(model: &MarketModel, y: &Control) -> Result<Vec<Vec<f64>>> {
    if model.grid != y.grid {
        return Err(Error::GridMismatch);
    }
    if model.dim() != y.dim() {
        return Err(Error::InvalidInput(format!(
            "control dimension {} does not match market dimension {}",
            y.dim(),
            model.dim()
        )));
    }
    model
        .volatilities
        .iter()
        .zip(&y.values)
        .enumerate()
        .map(|(k, (sigma, yk))| {
            sigma
                .transpose()
                .lu()
                .solve(&DVector::from_column_slice(yk))
                .map(|pi| pi.iter().copied().collect())
                .ok_or(Error::SingularVolatility {
                    interval: k,
                    condition: f64::INFINITY,
                })
        })
        .collect()
}

/// `(y, theta)_t = int_0^t y_u' theta_u du`.
pub fn inner_product_theta(curve: &RiskCurve, y: &Control, t: f64) -> Result<f64> {
    check_curve_control(curve, y)?;
    curve
        .grid
        .integrate_to(t, |k| dot(&y.values[k], &curve.theta[k]))
}

/// `||y||_t^2 = int_0^t |y_u|^2 du`.
pub fn norm_sq(y: &Control, t: f64) -> Result<f64> {
    y.norm_sq_at(t)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}
