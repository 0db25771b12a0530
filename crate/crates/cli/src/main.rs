//! `varmerton`: solve, simulate, verify and sweep the VaR-constrained Merton problem.
//!
//! Errors go to stderr as a single line `error[<code>]: <message>`. Exit codes:
//! 0 success, 2 invalid input, 3 hypothesis violation, 4 verification failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "varmerton", version, about = "Merton portfolio optimization under a uniform VaR bound")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ProblemArgs {
    /// Market spec JSON: {"T", "breakpoints", "r", "mu", "sigma"}.
    #[arg(long)]
    pub market: PathBuf,
    /// VaR confidence level, in (0, 1/2).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Tolerated fraction of riskless wealth, in (0, 1). Omit for the unconstrained problem.
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Utility exponent, in (0, 1].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Initial wealth x.
    #[arg(long, default_value_t = 1.0)]
    pub endowment: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Exact,
    Euler,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Zeta,
    Gamma,
    Alpha,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the optimal control and value.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// json: full solution; csv: control and portfolio per interval.
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Solve, then Monte Carlo the optimal wealth.
    Simulate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// json: report; csv: terminal wealth and utility per path.
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Sampler::Exact)]
        method: Sampler,
        /// Euler substeps per interval.
        #[arg(long, default_value_t = 256)]
        steps: usize,
        #[arg(long)]
        antithetic: bool,
        /// Number of equally spaced times in (0, T] at which the quantile law is checked.
        #[arg(long, default_value_t = 4)]
        probes: usize,
    },
    /// Check a control against the bound and run the oracle batteries.
    Verify {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Control JSON {"breakpoints", "values"} to check instead of the solved control.
        #[arg(long)]
        control: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Probe times for the constraint check.
        #[arg(long, default_value_t = 1000)]
        probes: usize,
        /// Grid points for the proportional-control search.
        #[arg(long, default_value_t = 100_000)]
        grid: usize,
        /// Random pairs for the norm-defect battery.
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve over a range of one parameter.
    Sweep {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 99)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let message: Vec<&str> = rendered
                .lines()
                .map(str::trim)
                .take_while(|l| !l.is_empty() && !l.starts_with("Usage:"))
                .collect();
            eprintln!("error[invalid-input]: {}", message.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Solve { problem, out, format } => commands::solve(&problem, out.as_deref(), format),
        Command::Simulate {
            problem,
            out,
            format,
            paths,
            seed,
            method,
            steps,
            antithetic,
            probes,
        } => commands::simulate(
            &problem,
            out.as_deref(),
            format,
            &commands::SimulateOpts {
                paths,
                seed,
                method,
                steps,
                antithetic,
                probes,
            },
        ),
        Command::Verify {
            problem,
            control,
            out,
            probes,
            grid,
            pairs,
            seed,
        } => commands::verify(
            &problem,
            control.as_deref(),
            out.as_deref(),
            &commands::VerifyOpts {
                probes,
                grid,
                pairs,
                seed,
            },
        ),
        Command::Sweep {
            problem,
            param,
            from,
            to,
            points,
            out,
            format,
        } => commands::sweep(&problem, param, from, to, points, out.as_deref(), format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.code(), f.message().replace('\n', " "));
            ExitCode::from(f.exit_code())
        }
    }
}
