//! Independent checks of the closed-form solution: brute-force search along
//! the ray through theta, the norm-defect inequality, and finite-difference
//! validation of the Lagrangian's directional derivative.

use std::io::Write;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{check_curve_control, inner_product_theta, Control, RiskCurve, TimeGrid};
use crate::optimizer::{g_of_a, lagrangian, objective, stationary_control, UtilitySpec, ZERO_THETA_TOL};
use crate::risk::{k_functional, RiskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridSearchResult {
    pub c_grid: Vec<f64>,
    pub f_values: Vec<f64>,
    pub k_values: Vec<f64>,
    pub best_c: f64,
    pub best_f: f64,
    pub spacing: f64,
}

impl GridSearchResult {
    pub fn admissible(&self, i: usize, a_max: f64) -> bool {
        self.k_values[i] <= a_max
    }

    /// CSV with columns `c,F,K,admissible`.
    pub fn write_csv<W: Write>(&self, a_max: f64, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["c", "F", "K", "admissible"])?;
        for i in 0..self.c_grid.len() {
            w.write_record([
                self.c_grid[i].to_string(),
                self.f_values[i].to_string(),
                self.k_values[i].to_string(),
                self.admissible(i, a_max).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Maximizes `F_T(y_c)` over `y_c = (c/||theta||_T) theta`, `c` on a uniform
/// grid over `[0, 1.5 g(a_max)]`, subject to `K_T(y_c) <= a_max`.
///
/// `F_T` and `K_T` are evaluated through the general functionals on each
/// candidate control, not through the radial closed forms.
pub fn grid_search_proportional(
    curve: &RiskCurve,
    spec: &RiskSpec,
    util: &UtilitySpec,
    grid_size: usize,
) -> Result<GridSearchResult> {
    if grid_size < 100 {
        return Err(Error::InvalidInput(format!("grid size {grid_size} below 100")));
    }
    let th = curve.theta_norm();
    if th < ZERO_THETA_TOL {
        return Err(Error::domain("||theta||_T", th, "(0, inf)"));
    }
    let c_hi = 1.5 * g_of_a(spec.a_max, spec)?;
    let spacing = c_hi / (grid_size - 1) as f64;
    let t = curve.horizon();
    let unit = Control::proportional(curve, 1.0 / th);
    let mut c_grid = Vec::with_capacity(grid_size);
    let mut f_values = Vec::with_capacity(grid_size);
    let mut k_values = Vec::with_capacity(grid_size);
    let (mut best_c, mut best_f) = (f64::NAN, f64::NEG_INFINITY);
    for i in 0..grid_size {
        let c = i as f64 * spacing;
        let y = unit.scaled(c);
        let f = objective(curve, &y, util)?;
        let k = k_functional(curve, &y, spec, t)?;
        // strict '>' keeps the smallest c on ties
        if k <= spec.a_max && f > best_f {
            best_c = c;
            best_f = f;
        }
        c_grid.push(c);
        f_values.push(f);
        k_values.push(k);
    }
    Ok(GridSearchResult {
        c_grid,
        f_values,
        k_values,
        best_c,
        best_f,
        spacing,
    })
}

/// `delta(y, h) = ||y + h||_T - ||y||_T - (h, y/||y||_T)_T`; nonnegative by
/// convexity of the norm.
pub fn delta_defect(y: &Control, h: &Control) -> Result<f64> {
    let ny = y.norm();
    if ny == 0.0 {
        return Err(Error::InvalidInput("delta_defect needs a nonzero y".into()));
    }
    let t = y.grid().horizon();
    let sum = y.axpy(1.0, h)?;
    Ok(sum.norm() - ny - h.inner(y, t)? / ny)
}

/// Analytic directional derivative `D_lambda(y, h)` of the Lagrangian.
pub fn gateaux_derivative(
    y: &Control,
    h: &Control,
    lambda: f64,
    beta: f64,
    curve: &RiskCurve,
    util: &UtilitySpec,
) -> Result<f64> {
    check_curve_control(curve, y)?;
    check_curve_control(curve, h)?;
    let t = curve.horizon();
    let h_theta = inner_product_theta(curve, h, t)?;
    let ny = y.norm();
    if ny == 0.0 {
        return Ok((1.0 + lambda) * h_theta - lambda * beta * h.norm());
    }
    let h_y = h.inner(y, t)?;
    Ok((1.0 + lambda) * h_theta - (1.0 - util.gamma() + lambda) * h_y - lambda * beta * h_y / ny)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GateauxRow {
    pub delta: f64,
    pub finite_difference: f64,
    /// `|finite_difference - analytic|`.
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GateauxReport {
    pub analytic: f64,
    pub rows: Vec<GateauxRow>,
}

impl GateauxReport {
    /// `defect / delta` per row; roughly constant when the error is first order.
    pub fn defect_ratios(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.defect / r.delta).collect()
    }
}

/// Compares `D_lambda(y, h)` with one-sided differences
/// `(H_lambda(y + delta h) - H_lambda(y)) / delta`.
#[allow(clippy::too_many_arguments)]
pub fn gateaux_check(
    y: &Control,
    h: &Control,
    lambda: f64,
    beta: f64,
    curve: &RiskCurve,
    util: &UtilitySpec,
    deltas: &[f64],
) -> Result<GateauxReport> {
    let analytic = gateaux_derivative(y, h, lambda, beta, curve, util)?;
    let base = lagrangian(y, lambda, curve, util, beta)?;
    let rows = deltas
        .iter()
        .map(|&d| {
            let moved = lagrangian(&y.axpy(d, h)?, lambda, curve, util, beta)?;
            let fd = (moved - base) / d;
            Ok(GateauxRow {
                delta: d,
                finite_difference: fd,
                defect: (fd - analytic).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GateauxReport { analytic, rows })
}

/// Tolerance for `delta >= 0` and for the ray identity in [`delta_battery`].
pub const DELTA_TOL: f64 = 1e-12;
/// Tolerance for `D_lambda(y^lambda, h) = 0` in [`stationarity_battery`].
pub const STATIONARITY_TOL: f64 = 1e-10;
/// Step sizes for the finite-difference check.
pub const FD_DELTAS: [f64; 3] = [1e-2, 1e-3, 1e-4];

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * u
}

/// Step control on `grid` with entries uniform in `[-scale, scale]`.
fn random_control(rng: &mut ChaCha8Rng, grid: &TimeGrid, dim: usize, scale: f64) -> Control {
    let values = (0..grid.intervals())
        .map(|_| (0..dim).map(|_| uniform(rng, -scale, scale)).collect())
        .collect();
    Control::new(grid.clone(), values).expect("finite values on a valid grid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeltaBattery {
    pub pairs: usize,
    pub min_delta: f64,
    /// Largest deviation from `(|1 + a| - 1 - a) ||y||` over the ray cases `h = a y`.
    pub max_ray_error: f64,
    pub pass: bool,
}

/// `delta(y, h)` on `pairs` random step-control pairs with entries in `[-1, 1]`,
/// plus the ray cases `h = a y`.
pub fn delta_battery(grid: &TimeGrid, dim: usize, pairs: usize, seed: u64) -> Result<DeltaBattery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_delta = f64::INFINITY;
    for _ in 0..pairs {
        let y = random_control(&mut rng, grid, dim, 1.0);
        let h = random_control(&mut rng, grid, dim, 1.0);
        min_delta = min_delta.min(delta_defect(&y, &h)?);
    }
    let y = random_control(&mut rng, grid, dim, 1.0);
    let mut max_ray_error = 0.0f64;
    for a in [-3.0, -1.0, -0.5, 0.0, 0.5, 2.0] {
        let want = ((1.0f64 + a).abs() - 1.0 - a) * y.norm();
        max_ray_error = max_ray_error.max((delta_defect(&y, &y.scaled(a))? - want).abs());
    }
    Ok(DeltaBattery {
        pairs,
        min_delta,
        max_ray_error,
        pass: min_delta >= -DELTA_TOL && max_ray_error <= DELTA_TOL * (1.0 + y.norm()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StationarityBattery {
    pub lambda: f64,
    pub beta: f64,
    pub max_abs_derivative: f64,
    /// Smallest `H(y^lambda) - H(y^lambda + h)` over the random perturbations.
    pub min_lagrangian_gap: f64,
    /// Finite-difference check at `y^lambda + h` for one random `h`.
    pub finite_difference: GateauxReport,
    pub pass: bool,
}

/// Checks that `y^lambda` is a stationary point and a maximizer of `H_lambda`:
/// `D_lambda(y^lambda, h) = 0` for `derivative_samples` random `h`, and
/// `H_lambda(y^lambda) >= H_lambda(y^lambda + h)` for `perturbations` random `h`.
/// Perturbations live on `grid` merged with the curve grid.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_battery(
    curve: &RiskCurve,
    util: &UtilitySpec,
    lambda: f64,
    beta: f64,
    grid: &TimeGrid,
    derivative_samples: usize,
    perturbations: usize,
    seed: u64,
) -> Result<StationarityBattery> {
    let fine = grid.merge(curve.grid())?;
    let y = stationary_control(lambda, curve, util, beta)?.refine(&fine)?;
    let curve = curve.refine(&fine)?;
    let d = curve.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = lagrangian(&y, lambda, &curve, util, beta)?;
    let mut max_abs_derivative = 0.0f64;
    let mut min_lagrangian_gap = f64::INFINITY;
    for i in 0..derivative_samples.max(perturbations) {
        let h = random_control(&mut rng, &fine, d, 1.0);
        if i < derivative_samples {
            let dv = gateaux_derivative(&y, &h, lambda, beta, &curve, util)?;
            max_abs_derivative = max_abs_derivative.max(dv.abs());
        }
        if i < perturbations {
            let moved = lagrangian(&y.axpy(1.0, &h)?, lambda, &curve, util, beta)?;
            min_lagrangian_gap = min_lagrangian_gap.min(base - moved);
        }
    }
    let h = random_control(&mut rng, &fine, d, 1.0);
    let off = y.axpy(1.0, &random_control(&mut rng, &fine, d, 1.0))?;
    let finite_difference = gateaux_check(&off, &h, lambda, beta, &curve, util, &FD_DELTAS)?;
    let defects: Vec<f64> = finite_difference.rows.iter().map(|r| r.defect).collect();
    let shrinking = defects.windows(2).all(|w| w[1] < w[0]) || defects.iter().all(|&e| e <= STATIONARITY_TOL);
    Ok(StationarityBattery {
        lambda,
        beta,
        max_abs_derivative,
        min_lagrangian_gap,
        finite_difference,
        pass: max_abs_derivative <= STATIONARITY_TOL && min_lagrangian_gap >= 0.0 && shrinking,
    })
}
