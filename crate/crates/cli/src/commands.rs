use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use varmerton::optimizer::{lambda_of_a, Regime, Solution, UtilitySpec};
use varmerton::oracle::{delta_battery, grid_search_proportional, stationarity_battery, DeltaBattery, StationarityBattery};
use varmerton::risk::{check_admissible, ConstraintReport, RiskSpec};
use varmerton::simulate::{estimate_cost, sample_wealth, verify_quantile, write_samples_csv, Method, SimConfig, SimulationReport};
use varmerton::{build_risk_curve, solve_constrained, solve_unconstrained, Control, MarketModel, RiskCurve, TimeGrid};

use crate::{Format, ProblemArgs, Sampler, SweepParam};

#[derive(Debug)]
pub enum Failure {
    InvalidInput(String),
    Hypothesis(String),
    Unbounded(String),
    Verification(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> &'static str {
        match self {
            Failure::InvalidInput(_) => "invalid-input",
            Failure::Hypothesis(_) => "hypothesis-violated",
            Failure::Unbounded(_) => "unbounded",
            Failure::Verification(_) => "verification-failed",
            Failure::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Hypothesis(_) => 3,
            Failure::Verification(_) => 4,
            _ => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::InvalidInput(m)
            | Failure::Hypothesis(m)
            | Failure::Unbounded(m)
            | Failure::Verification(m)
            | Failure::Io(m) => m,
        }
    }
}

impl From<varmerton::Error> for Failure {
    fn from(e: varmerton::Error) -> Self {
        match e {
            varmerton::Error::HypothesisViolated { .. } => Failure::Hypothesis(e.to_string()),
            varmerton::Error::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::InvalidInput(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// A loaded problem: market, risk curve, utility and optional bound.
struct Problem {
    model: MarketModel,
    curve: RiskCurve,
    util: UtilitySpec,
    risk: Option<RiskSpec>,
    x: f64,
}

fn in_file(e: varmerton::Error, path: &Path) -> Failure {
    match Failure::from(e) {
        Failure::Io(m) => Failure::Io(format!("{}: {m}", path.display())),
        Failure::InvalidInput(m) => Failure::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn load_market(path: &Path) -> Outcome<MarketModel> {
    MarketModel::load_json(path).map_err(|e| in_file(e, path))
}

impl ProblemArgs {
    fn gamma(&self) -> Outcome<f64> {
        self.gamma
            .ok_or_else(|| Failure::InvalidInput("--gamma is required".into()))
    }

    fn risk(&self, curve: &RiskCurve, alpha: Option<f64>, zeta: Option<f64>) -> Outcome<Option<RiskSpec>> {
        match (alpha, zeta) {
            (_, None) => Ok(None),
            (None, Some(_)) => Err(Failure::InvalidInput("--zeta needs --alpha".into())),
            (Some(a), Some(z)) => Ok(Some(RiskSpec::new(a, z, curve)?)),
        }
    }

    fn load(&self) -> Outcome<Problem> {
        let model = load_market(&self.market)?;
        let curve = build_risk_curve(&model)?;
        let util = UtilitySpec::new(self.gamma()?)?;
        let risk = self.risk(&curve, self.alpha, self.zeta)?;
        Ok(Problem {
            model,
            curve,
            util,
            risk,
            x: self.endowment,
        })
    }
}

impl Problem {
    fn solve(&self) -> Outcome<Solution> {
        let sol = match &self.risk {
            Some(spec) => solve_constrained(self.x, &self.curve, spec, &self.util)?,
            None => solve_unconstrained(self.x, &self.curve, &self.util)?,
        };
        Ok(sol.with_portfolio(&self.model)?)
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Outcome {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?,
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Outcome<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::InvalidInput(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Outcome<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Failure::Io(e.to_string());
    w.write_record(header).map_err(io_err)?;
    for row in rows {
        w.write_record(row).map_err(io_err)?;
    }
    w.into_inner().map_err(|e| Failure::Io(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn solve(args: &ProblemArgs, out: Option<&Path>, format: Format) -> Outcome {
    let problem = args.load()?;
    let sol = problem.solve()?;
    if sol.regime == Regime::Unbounded {
        eprintln!("note: objective is unbounded (gamma = 1 with no VaR bound)");
    }
    let bytes = match format {
        Format::Json => json_bytes(&sol)?,
        Format::Csv => {
            let d = problem.curve.dim();
            let mut header = vec!["tStart".to_string(), "tEnd".to_string()];
            header.extend((1..=d).map(|i| format!("y{i}")));
            header.extend((1..=d).map(|i| format!("pi{i}")));
            let bp = &sol.breakpoints;
            let rows: Vec<Vec<String>> = (0..bp.len() - 1)
                .map(|k| {
                    let mut row = vec![bp[k].to_string(), bp[k + 1].to_string()];
                    for part in [&sol.control, &sol.portfolio] {
                        match part {
                            Some(v) => row.extend(v[k].iter().map(f64::to_string)),
                            None => row.extend(std::iter::repeat_n(String::new(), d)),
                        }
                    }
                    row
                })
                .collect();
            csv_bytes(&header, &rows)?
        }
    };
    emit(out, &bytes)
}

pub struct SimulateOpts {
    pub paths: usize,
    pub seed: u64,
    pub method: Sampler,
    pub steps: usize,
    pub antithetic: bool,
    pub probes: usize,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SimulateOutput {
    regime: Regime,
    j_star: f64,
    /// `(mean - jStar) / stdError`; null when the standard error is unavailable.
    z_score: Option<f64>,
    simulation: SimulationReport,
}

pub fn simulate(args: &ProblemArgs, out: Option<&Path>, format: Format, opts: &SimulateOpts) -> Outcome {
    let problem = args.load()?;
    let sol = problem.solve()?;
    let y = sol
        .optimal_control()
        .ok_or_else(|| Failure::Unbounded("objective is unbounded; there is no optimal control to simulate".into()))?;
    let cfg = SimConfig {
        paths: opts.paths,
        seed: opts.seed,
        steps: if opts.method == Sampler::Exact { 1 } else { opts.steps },
        method: match opts.method {
            Sampler::Exact => Method::ExactLognormal,
            Sampler::Euler => Method::EulerMaruyama,
        },
        antithetic: opts.antithetic,
    };
    cfg.validate()?;
    if format == Format::Csv {
        let paths = sample_wealth(problem.x, &problem.curve, y, &cfg)?;
        let mut buf = Vec::new();
        write_samples_csv(&paths, &problem.util, &mut buf)?;
        return emit(out, &buf);
    }

    let mut report = estimate_cost(problem.x, &problem.curve, y, &problem.util, &cfg)?;
    if let (Some(spec), true) = (&problem.risk, opts.probes > 0) {
        let h = problem.curve.horizon();
        let times: Vec<f64> = (1..=opts.probes).map(|k| h * k as f64 / opts.probes as f64).collect();
        let q = verify_quantile(problem.x, &problem.curve, y, spec, &cfg, &times)?;
        report.quantile_probes = q.quantile_probes;
        report.max_constraint_violation_freq = q.max_constraint_violation_freq;
        report.max_abs_z = q.max_abs_z;
    }
    let mean = report.mean_utility.unwrap_or(f64::NAN);
    let z_score = report.std_error.map(|se| {
        let diff = mean - sol.j_star;
        if se > 0.0 {
            diff / se
        } else if diff.abs() <= 1e-12 * sol.j_star.abs() {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        }
    });
    let output = SimulateOutput {
        regime: sol.regime,
        j_star: sol.j_star,
        z_score,
        simulation: report,
    };
    emit(out, &json_bytes(&output)?)
}

pub struct VerifyOpts {
    pub probes: usize,
    pub grid: usize,
    pub pairs: usize,
    pub seed: u64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct OracleCheck {
    g_star: f64,
    best_c: f64,
    spacing: f64,
    grid_size: usize,
    pass: bool,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct CheckLine {
    name: &'static str,
    /// Null when the check does not apply (zero market price of risk).
    pass: Option<bool>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct VerifyOutput {
    regime: Regime,
    control_source: &'static str,
    constraint: ConstraintReport,
    oracle: Option<OracleCheck>,
    delta: DeltaBattery,
    stationarity: Option<StationarityBattery>,
    checks: Vec<CheckLine>,
    passed: bool,
}

pub fn verify(args: &ProblemArgs, control: Option<&Path>, out: Option<&Path>, opts: &VerifyOpts) -> Outcome {
    let problem = args.load()?;
    let spec = problem
        .risk
        .ok_or_else(|| Failure::InvalidInput("verify needs a VaR bound (--alpha and --zeta)".into()))?;
    let sol = problem.solve()?;
    let solved = sol.optimal_control().expect("constrained problems have a control").clone();

    let (y, curve, source) = match control {
        Some(p) => {
            let y = Control::load_json(p).map_err(|e| in_file(e, p))?;
            if y.dim() != problem.curve.dim() {
                return Err(Failure::InvalidInput(format!(
                    "control has {} components, market has {} assets",
                    y.dim(),
                    problem.curve.dim()
                )));
            }
            if (y.grid().horizon() - problem.curve.horizon()).abs() > 1e-12 {
                return Err(Failure::InvalidInput(format!(
                    "control horizon {} differs from market horizon {}",
                    y.grid().horizon(),
                    problem.curve.horizon()
                )));
            }
            let fine = y.grid().merge(problem.curve.grid())?;
            (y.refine(&fine)?, problem.curve.refine(&fine)?, "file")
        }
        None => (solved, problem.curve.clone(), "solved"),
    };
    let constraint = check_admissible(problem.x, &curve, &y, &spec, opts.probes)?;

    let base = &problem.curve;
    let battery_grid = TimeGrid::uniform(base.horizon(), 8)?.merge(base.grid())?;
    let delta = delta_battery(&battery_grid, base.dim(), opts.pairs, opts.seed)?;

    let (oracle, stationarity) = if sol.regime == Regime::ZeroTheta {
        (None, None)
    } else {
        let g_star = sol.g_star.expect("nonzero theta has a radius");
        let grid = grid_search_proportional(base, &spec, &problem.util, opts.grid)?;
        let oracle = OracleCheck {
            g_star,
            best_c: grid.best_c,
            spacing: grid.spacing,
            grid_size: opts.grid,
            pass: (grid.best_c - g_star).abs() <= grid.spacing,
        };
        let lambda = match sol.regime {
            Regime::ConstraintBinding => lambda_of_a(spec.a_max, base, &problem.util, spec.z_abs())?,
            _ => 0.0,
        };
        let st = stationarity_battery(
            base,
            &problem.util,
            lambda,
            spec.z_abs(),
            &battery_grid,
            100,
            1000,
            opts.seed.wrapping_add(1),
        )?;
        (Some(oracle), Some(st))
    };

    let checks = vec![
        CheckLine {
            name: "constraint",
            pass: Some(constraint.admissible),
        },
        CheckLine {
            name: "oracle",
            pass: oracle.as_ref().map(|o| o.pass),
        },
        CheckLine {
            name: "delta",
            pass: Some(delta.pass),
        },
        CheckLine {
            name: "stationarity",
            pass: stationarity.as_ref().map(|s| s.pass),
        },
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| c.pass == Some(false)).map(|c| c.name).collect();
    let output = VerifyOutput {
        regime: sol.regime,
        control_source: source,
        constraint,
        oracle,
        delta,
        stationarity,
        checks,
        passed: failed.is_empty(),
    };
    emit(out, &json_bytes(&output)?)?;
    if failed.is_empty() {
        Ok(())
    } else {
        let detail = if failed.contains(&"constraint") {
            format!(" (worst time {})", output.constraint.worst_time)
        } else {
            String::new()
        };
        Err(Failure::Verification(format!("failed checks: {}{detail}", failed.join(", "))))
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SweepRow {
    value: f64,
    g_star: Option<f64>,
    a_star: Option<f64>,
    /// Null when unbounded or not solved.
    j_star: Option<f64>,
    regime: String,
}

#[derive(Serialize)]
struct SweepOutput {
    parameter: &'static str,
    rows: Vec<SweepRow>,
}

pub fn sweep(
    args: &ProblemArgs,
    param: SweepParam,
    from: f64,
    to: f64,
    points: usize,
    out: Option<&Path>,
    format: Format,
) -> Outcome {
    if points == 0 || (points == 1 && from != to) {
        return Err(Failure::InvalidInput(format!("need at least 2 points for a range, got {points}")));
    }
    if !(from.is_finite() && to.is_finite()) {
        return Err(Failure::InvalidInput("range bounds must be finite".into()));
    }
    let model = load_market(&args.market)?;
    let curve = build_risk_curve(&model)?;
    let values: Vec<f64> = (0..points)
        .map(|i| {
            if points == 1 {
                from
            } else {
                from + (to - from) * i as f64 / (points - 1) as f64
            }
        })
        .collect();

    // validate the whole range before solving anything
    let mut setups = Vec::with_capacity(points);
    for &v in &values {
        let (alpha, zeta, gamma) = match param {
            SweepParam::Zeta => {
                if args.alpha.is_none() {
                    return Err(Failure::InvalidInput("a zeta sweep needs --alpha".into()));
                }
                (args.alpha, Some(v), args.gamma()?)
            }
            SweepParam::Alpha => {
                if args.zeta.is_none() {
                    return Err(Failure::InvalidInput("an alpha sweep needs --zeta".into()));
                }
                (Some(v), args.zeta, args.gamma()?)
            }
            SweepParam::Gamma => (args.alpha, args.zeta, v),
        };
        let util = UtilitySpec::new(gamma)?;
        let risk = args.risk(&curve, alpha, zeta)?;
        setups.push((util, risk));
    }

    let mut rows = Vec::with_capacity(points);
    for (&value, (util, risk)) in values.iter().zip(&setups) {
        let result = match risk {
            Some(spec) if !spec.hypothesis_holds() => None,
            Some(spec) => Some(solve_constrained(args.endowment, &curve, spec, util)?),
            None => Some(solve_unconstrained(args.endowment, &curve, util)?),
        };
        rows.push(match result {
            None => SweepRow {
                value,
                g_star: None,
                a_star: None,
                j_star: None,
                regime: "hypothesis-violated".into(),
            },
            Some(sol) => SweepRow {
                value,
                g_star: sol.g_star,
                a_star: sol.a_star,
                j_star: sol.j_star.is_finite().then_some(sol.j_star),
                regime: serde_json::to_value(sol.regime)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
            },
        });
    }

    let name = match param {
        SweepParam::Zeta => "zeta",
        SweepParam::Gamma => "gamma",
        SweepParam::Alpha => "alpha",
    };
    let bytes = match format {
        Format::Json => json_bytes(&SweepOutput { parameter: name, rows })?,
        Format::Csv => {
            let header: Vec<String> = [name, "gStar", "aStar", "jStar", "regime"].map(String::from).to_vec();
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let j = if r.regime == "unbounded" { "inf".to_string() } else { opt(r.j_star) };
                    vec![r.value.to_string(), opt(r.g_star), opt(r.a_star), j, r.regime.clone()]
                })
                .collect();
            csv_bytes(&header, &body)?
        }
    };
    emit(out, &bytes)
}
