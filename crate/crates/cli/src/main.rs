use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hts_reconcile::baseforecast::ForecasterKind;
use hts_reconcile::covariance::ResidualPanel;
use hts_reconcile::experiment::{run_experiment, ExperimentConfig};
use hts_reconcile::io::{read_hierarchy, read_wide_csv, wide_csv, write_string, IoError};
use hts_reconcile::metrics::{build_report_with, Aggregation, RepResult, RunReport};
use hts_reconcile::mintit::MinTitConfig;
use hts_reconcile::reconcilers::ForecastPanel;
use hts_reconcile::scenarios::{generate, Scenario, ScenarioConfig};
use hts_reconcile::{build_structure_matrix, reconcile_with, Error, Method};

#[derive(Parser)]
#[command(name = "hts-reconcile", version, about = "Reconcile hierarchical forecasts and run simulation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Table,
}

#[derive(clap::Args)]
struct MinTitArgs {
    /// Convergence threshold (default scales with the forecast magnitude).
    #[arg(long)]
    mintit_eps: Option<f64>,
    #[arg(long, default_value_t = 500)]
    mintit_maxit: usize,
}

impl MinTitArgs {
    fn config(&self) -> MinTitConfig<f64> {
        MinTitConfig {
            epsilon: self.mintit_eps,
            max_iterations: self.mintit_maxit,
            ..MinTitConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo scenario and report RMSE changes against the base forecasts.
    Simulate {
        #[arg(long, value_parser = parse_scenario)]
        scenario: Scenario,
        /// Series length including the holdout.
        #[arg(long = "T", value_name = "T", default_value_t = 30)]
        t: usize,
        /// Replicates (defaults to 5000, or 500 for the large scenario).
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Base forecaster: naive, mean, ses, ar or arN.
        #[arg(long, default_value = "ar", value_parser = parse_base)]
        base: ForecasterKind,
        /// Comma-separated methods (bu, wls-s, wls-v, mint, mint-sample, mintit-g, mintit-l).
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Option<Vec<Method>>,
        #[arg(long, env = "HTS_RECONCILE_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// per-rep: mean of per-replicate changes; pooled: change of the mean RMSE.
        #[arg(long, default_value = "per-rep", value_parser = parse_aggregation)]
        aggregation: Aggregation,
        /// Also write per-replicate RMSEs as JSON.
        #[arg(long)]
        raw_out: Option<PathBuf>,
        #[command(flatten)]
        mintit: MinTitArgs,
    },
    /// Reconcile forecasts read from CSV.
    Reconcile {
        /// Hierarchy as nested JSON or a child,parent CSV edge list.
        #[arg(long)]
        hierarchy: PathBuf,
        /// Wide CSV: one column per node, one row per horizon step.
        #[arg(long)]
        forecasts: PathBuf,
        /// Wide CSV of in-sample residuals; leading blanks mark late starts.
        #[arg(long)]
        residuals: Option<PathBuf>,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Iterative methods only: write convergence diagnostics as JSON.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[command(flatten)]
        mintit: MinTitArgs,
    },
    /// Rebuild a report from a per-replicate JSON file written by `simulate --raw-out`.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long, default_value = "per-rep", value_parser = parse_aggregation)]
        aggregation: Aggregation,
    },
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    s.parse()
}

fn parse_base(s: &str) -> Result<ForecasterKind, String> {
    s.parse()
}

#[derive(Serialize, Deserialize)]
struct RawRun {
    scenario: ScenarioConfig,
    reps: Vec<RepResult>,
}

enum Failure {
    Validation(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => Ok(write_string(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn render(report: &RunReport, format: Format) -> String {
    match format {
        Format::Csv => report.to_csv(),
        Format::Table => report.to_table(),
        Format::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    }
}

fn simulate(cmd: Command) -> Result<(), Failure> {
    let Command::Simulate { scenario, t, reps, seed, base, methods, threads, out, format, aggregation, raw_out, mintit } = cmd else {
        unreachable!()
    };
    if threads == Some(0) {
        return Err(Failure::Validation("--threads must be at least 1".into()));
    }
    let reps = reps.unwrap_or(scenario.default_reps());
    let sc = ScenarioConfig::new(scenario, t, reps, seed).map_err(Error::from)?;
    let mintit = mintit.config();
    mintit.validate().map_err(Error::from)?;
    let mut cfg = ExperimentConfig::new(sc);
    cfg.base = base;
    cfg.mintit = mintit;
    cfg.threads = threads;
    cfg.aggregation = aggregation;
    if let Some(m) = methods {
        if m.is_empty() {
            return Err(Failure::Validation("--methods must name at least one method".into()));
        }
        cfg.methods = m;
    }
    let (report, reps) = run_experiment(&cfg)?;
    if let Some(p) = raw_out {
        let raw = RawRun { scenario: sc, reps };
        write_string(&p, &serde_json::to_string(&raw).expect("results serialize"))?;
    }
    emit(out.as_deref(), &render(&report, format))
}

fn reconcile_cmd(cmd: Command) -> Result<(), Failure> {
    let Command::Reconcile { hierarchy, forecasts, residuals, method, out, diagnostics, mintit } = cmd else {
        unreachable!()
    };
    let h = read_hierarchy(&hierarchy)?;
    let table = read_wide_csv(&forecasts)?.align(&h)?;
    if let Some(j) = table.start.iter().position(|&s| s > 0) {
        return Err(Failure::Validation(format!("forecast column `{}` has blank cells", table.labels[j])));
    }
    let f = ForecastPanel::new(table.values.transpose()).map_err(Error::from)?;
    let r = match residuals {
        Some(p) => {
            let t = read_wide_csv(&p)?.align(&h)?;
            Some(ResidualPanel::new(t.values, t.start).map_err(Error::from)?)
        }
        None => None,
    };
    if method.needs_residuals() && r.is_none() {
        return Err(Failure::Validation(format!("method {} needs --residuals", method.flag())));
    }
    let s = build_structure_matrix::<f64>(&h);
    let cfg = mintit.config();
    cfg.validate().map_err(Error::from)?;
    let result = reconcile_with(method, &h, &s, &f, r.as_ref(), &cfg)?;
    if let Some(p) = diagnostics {
        let d = result
            .mintit
            .as_ref()
            .ok_or_else(|| Failure::Validation(format!("--diagnostics applies only to iterative methods, not {}", method.flag())))?;
        write_string(&p, &(serde_json::to_string_pretty(d).expect("diagnostics serialize") + "\n"))?;
    }
    let text = wide_csv(h.labels(), &result.forecasts.values().transpose(), None);
    emit(out.as_deref(), &text)
}

fn report_cmd(cmd: Command) -> Result<(), Failure> {
    let Command::Report { input, out, format, aggregation } = cmd else { unreachable!() };
    let text = std::fs::read_to_string(&input).map_err(|e| Failure::Validation(format!("{}: {e}", input.display())))?;
    let raw: RawRun = serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", input.display())))?;
    let h = generate(&raw.scenario, 0).map_err(Error::from)?.hierarchy;
    let report = build_report_with(&h, &raw.scenario.windows(), &raw.reps, aggregation).map_err(Error::from)?;
    emit(out.as_deref(), &render(&report, format))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        c @ Command::Simulate { .. } => simulate(c),
        c @ Command::Reconcile { .. } => reconcile_cmd(c),
        c @ Command::Report { .. } => report_cmd(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
