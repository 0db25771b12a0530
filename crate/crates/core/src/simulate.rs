//! Monte Carlo sampling of the wealth process for deterministic controls.
//!
//! Randomness comes from ChaCha8 with one stream per path: path `i` uses
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `i` (stream `i / 2` with a sign
//! flip on odd paths when antithetic sampling is on). Standard normals are
//! produced by inverting the normal CDF on open-interval uniforms. Paths run in
//! parallel, but every reduction is done serially in path order, so results do
//! not depend on the thread count.

use std::io::Write;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{check_curve_control, dot, inner_product_theta, sq_norm, Control, RiskCurve};
use crate::optimizer::UtilitySpec;
use crate::risk::{quantile_process, quantile_unchecked, RiskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Lognormal increments between breakpoints; exact in law.
    ExactLognormal,
    /// Euler-Maruyama on the wealth SDE with `steps` substeps per interval.
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimConfig {
    pub paths: usize,
    pub seed: u64,
    pub steps: usize,
    pub method: Method,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn exact(paths: usize, seed: u64) -> Self {
        SimConfig {
            paths,
            seed,
            steps: 1,
            method: Method::ExactLognormal,
            antithetic: false,
        }
    }

    pub fn euler(paths: usize, seed: u64, steps: usize) -> Self {
        SimConfig {
            paths,
            seed,
            steps,
            method: Method::EulerMaruyama,
            antithetic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidInput("paths must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidInput("steps must be at least 1".into()));
        }
        if self.antithetic && !self.paths.is_multiple_of(2) {
            return Err(Error::InvalidInput(
                "antithetic sampling needs an even number of paths".into(),
            ));
        }
        Ok(())
    }
}

/// Sampled wealth at every breakpoint, one row per path.
#[derive(Debug, Clone)]
pub struct WealthPaths {
    times: Vec<f64>,
    paths: usize,
    data: Vec<f64>,
}

impl WealthPaths {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let n = self.times.len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Wealth of every path at breakpoint `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        let n = self.times.len();
        self.data.iter().skip(k).step_by(n).copied().collect()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.column(self.times.len() - 1)
    }
}

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Estimate {
    pub mean: f64,
    /// `None` when fewer than two independent samples are available.
    pub std_error: Option<f64>,
    pub samples: usize,
}

impl Estimate {
    /// Sample mean with standard error from the sample standard deviation.
    /// With `antithetic`, consecutive pairs are averaged first.
    pub fn from_samples(values: &[f64], antithetic: bool) -> Self {
        if antithetic {
            let pairs: Vec<f64> = values.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let mut e = Estimate::from_samples(&pairs, false);
            e.samples = values.len();
            return e;
        }
        let n = values.len();
        let mean = neumaier_sum(values.iter().copied()) / n as f64;
        let std_error = (n > 1).then(|| {
            let ss = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean)));
            (ss / (n - 1) as f64 / n as f64).sqrt()
        });
        Estimate {
            mean,
            std_error,
            samples: n,
        }
    }

    /// `(mean - target) / std_error`.
    pub fn z_score(&self, target: f64) -> Option<f64> {
        self.std_error.map(|se| {
            if se > 0.0 {
                (self.mean - target) / se
            } else if self.mean == target {
                0.0
            } else {
                f64::INFINITY.copysign(self.mean - target)
            }
        })
    }
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

struct NormalStream {
    rng: ChaCha8Rng,
    sign: f64,
}

impl NormalStream {
    fn for_path(cfg: &SimConfig, path: usize) -> Self {
        let (stream, sign) = if cfg.antithetic {
            (path / 2, if path % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (path, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream as u64);
        NormalStream { rng, sign }
    }

    fn next(&mut self) -> f64 {
        // 53 random bits, shifted off zero: u in (0, 1)
        let u = ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        self.sign * quantile_unchecked(u)
    }
}

/// Samples `X^y` at every breakpoint of the curve's grid.
pub fn sample_wealth(x: f64, curve: &RiskCurve, y: &Control, cfg: &SimConfig) -> Result<WealthPaths> {
    cfg.validate()?;
    check_curve_control(curve, y)?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain("x", x, "(0, inf)"));
    }
    let grid = curve.grid();
    let k = grid.intervals();
    let stride = k + 1;
    let dts: Vec<f64> = (0..k).map(|j| grid.dt(j)).collect();
    let rates = curve.rates();
    let drift: Vec<f64> = (0..k)
        .map(|j| rates[j] + dot(&y.values()[j], &curve.theta()[j]))
        .collect();
    let vol: Vec<f64> = y.values().iter().map(|v| sq_norm(v).sqrt()).collect();

    let mut data = vec![0.0; cfg.paths * stride];
    data.par_chunks_mut(stride).enumerate().for_each(|(i, row)| {
        let mut normals = NormalStream::for_path(cfg, i);
        row[0] = x;
        match cfg.method {
            Method::ExactLognormal => {
                let mut log_x = 0.0;
                for j in 0..k {
                    let z = normals.next();
                    log_x += (drift[j] - 0.5 * vol[j] * vol[j]) * dts[j] + vol[j] * dts[j].sqrt() * z;
                    row[j + 1] = x * log_x.exp();
                }
            }
            Method::EulerMaruyama => {
                let mut w = x;
                for j in 0..k {
                    let h = dts[j] / cfg.steps as f64;
                    let sh = h.sqrt();
                    let yj = &y.values()[j];
                    for _ in 0..cfg.steps {
                        let dwy: f64 = yj.iter().map(|c| c * sh * normals.next()).sum();
                        w += w * (drift[j] * h + dwy);
                    }
                    row[j + 1] = w;
                }
            }
        }
    });
    Ok(WealthPaths {
        times: grid.breakpoints().to_vec(),
        paths: cfg.paths,
        data,
    })
}

/// One requested time in a quantile verification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QuantileProbe {
    pub time: f64,
    /// Closed-form alpha-quantile `Q_t`.
    pub quantile: f64,
    /// Fraction of paths with `X_t <= Q_t` (strictly below when degenerate).
    pub frequency: f64,
    /// `(frequency - alpha) / sqrt(alpha (1 - alpha) / N)`.
    pub z_score: f64,
    /// Empirical alpha-quantile of `X_t / Q_t`.
    pub empirical_quantile_ratio: f64,
    /// `||y||_t = 0`: `X_t / Q_t` is identically one.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulationReport {
    pub seed: u64,
    pub paths: usize,
    pub method: Method,
    pub antithetic: bool,
    /// Estimate of `E (X^y_T)^gamma`.
    pub mean_utility: Option<f64>,
    pub std_error: Option<f64>,
    pub quantile_probes: Vec<QuantileProbe>,
    /// Largest fraction of paths below `Q*_t` over non-degenerate probes.
    pub max_constraint_violation_freq: Option<f64>,
    /// Largest `|z_score|` over non-degenerate probes.
    pub max_abs_z: Option<f64>,
}

impl SimulationReport {
    fn empty(cfg: &SimConfig) -> Self {
        SimulationReport {
            seed: cfg.seed,
            paths: cfg.paths,
            method: cfg.method,
            antithetic: cfg.antithetic,
            mean_utility: None,
            std_error: None,
            quantile_probes: Vec::new(),
            max_constraint_violation_freq: None,
            max_abs_z: None,
        }
    }
}

/// Monte Carlo estimate of the cost functional `E (X^y_T)^gamma`.
pub fn estimate_cost(
    x: f64,
    curve: &RiskCurve,
    y: &Control,
    util: &UtilitySpec,
    cfg: &SimConfig,
) -> Result<SimulationReport> {
    let paths = sample_wealth(x, curve, y, cfg)?;
    let utilities: Vec<f64> = paths.terminal().into_iter().map(|w| util.utility(w)).collect();
    let est = Estimate::from_samples(&utilities, cfg.antithetic);
    let mut report = SimulationReport::empty(cfg);
    report.mean_utility = Some(est.mean);
    report.std_error = est.std_error;
    Ok(report)
}

/// Compares the empirical law of `X_t` against the closed-form quantile `Q_t`
/// at each requested time.
pub fn verify_quantile(
    x: f64,
    curve: &RiskCurve,
    y: &Control,
    spec: &RiskSpec,
    cfg: &SimConfig,
    times: &[f64],
) -> Result<SimulationReport> {
    check_curve_control(curve, y)?;
    let fine = curve.grid().with_times(times)?;
    let curve = curve.refine(&fine)?;
    let y = y.refine(&fine)?;
    let paths = sample_wealth(x, &curve, &y, cfg)?;
    let n = cfg.paths as f64;
    let alpha = spec.alpha;
    let se = (alpha * (1.0 - alpha) / n).sqrt();
    let rank = ((alpha * n).ceil() as usize).clamp(1, cfg.paths);

    let mut report = SimulationReport::empty(cfg);
    for &t in times {
        let k = fine
            .breakpoints()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap();
        let q = quantile_process(x, &curve, &y, spec, fine.breakpoints()[k])?;
        let degenerate = y.norm_sq_at(fine.breakpoints()[k])? == 0.0;
        let mut ratios: Vec<f64> = paths.column(k).into_iter().map(|w| w / q).collect();
        let below = if degenerate {
            ratios.iter().filter(|&&r| r < 1.0).count()
        } else {
            ratios.iter().filter(|&&r| r <= 1.0).count()
        };
        let frequency = below as f64 / n;
        let (_, qr, _) = ratios.select_nth_unstable_by(rank - 1, f64::total_cmp);
        report.quantile_probes.push(QuantileProbe {
            time: t,
            quantile: q,
            frequency,
            z_score: (frequency - alpha) / se,
            empirical_quantile_ratio: *qr,
            degenerate,
        });
    }
    let live: Vec<&QuantileProbe> = report.quantile_probes.iter().filter(|p| !p.degenerate).collect();
    if !live.is_empty() {
        report.max_constraint_violation_freq =
            Some(live.iter().map(|p| p.frequency).fold(f64::NEG_INFINITY, f64::max));
        report.max_abs_z = Some(live.iter().map(|p| p.z_score.abs()).fold(0.0, f64::max));
    }
    Ok(report)
}

/// Estimate of `E exp(int y' dW - ||y||^2/2)` at the horizon; one for deterministic `y`.
pub fn stochastic_exponent_mean(curve: &RiskCurve, y: &Control, cfg: &SimConfig) -> Result<Estimate> {
    let paths = sample_wealth(1.0, curve, y, cfg)?;
    let t = curve.horizon();
    let drift = (curve.rate_integral(t)? + inner_product_theta(curve, y, t)?).exp();
    let values: Vec<f64> = paths.terminal().into_iter().map(|w| w / drift).collect();
    Ok(Estimate::from_samples(&values, cfg.antithetic))
}

/// Writes one row per path: terminal wealth and its utility.
pub fn write_samples_csv<W: Write>(paths: &WealthPaths, util: &UtilitySpec, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["terminal_wealth", "utility"])?;
    for v in paths.terminal() {
        w.write_record([v.to_string(), util.utility(v).to_string()])?;
    }
    w.flush()?;
    Ok(())
}
