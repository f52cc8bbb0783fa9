//! `tariffsim`: validate import data, run a reform scenario, compare
//! scenarios.
//!
//! Exit codes: 0 success, 1 validation findings or model failure, 2 usage,
//! I/O or schema errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use thiserror::Error;

use tariffsim::engine::{self, EngineError, RunOptions, SimulationResult, State};
use tariffsim::ingest::{self, Dataset, IngestError, TradeLine};
use tariffsim::report::{self, Format, RenderOptions, ReportTable};
use tariffsim::scenario::{self, Scenario, ScenarioError};

#[derive(Parser)]
#[command(name = "tariffsim", version, about = "Partial-equilibrium tariff reform simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an import table (one row per trade line) and report every problem.
    Validate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        groups: Option<PathBuf>,
    },
    /// Simulate one scenario and write partner, band and summary reports.
    Run {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Simulate several scenarios and write a side-by-side summary.
    Compare {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long = "scenario", required = true, num_args = 1)]
        scenarios: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Output formats; repeat for several. Defaults to csv, json and md.
    #[arg(long = "format")]
    formats: Vec<String>,
    /// Shares and average tariffs at whole percent.
    #[arg(long)]
    paper_rounding: bool,
    /// Worker threads for the simulation.
    #[arg(long, env = "TARIFFSIM_JOBS")]
    jobs: Option<usize>,
    /// Partners shown individually in the partner table.
    #[arg(long, default_value_t = 5)]
    top_n: usize,
    /// Display label for currency values.
    #[arg(long, default_value = "currency units")]
    currency_label: String,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error("{path}: {source}")]
    Scenario { path: PathBuf, source: ScenarioError },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Engine(EngineError::DegenerateWeights { .. } | EngineError::InvalidDataset(_)) => 1,
            _ => 2,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_records(path: &Path) -> Result<Vec<ingest::TradeRecord>, CliError> {
    ingest::parse_trade_records(read(path)?.as_slice()).map_err(|source| CliError::Ingest {
        path: path.to_path_buf(),
        source,
    })
}

fn load_groups(path: Option<&Path>) -> Result<Vec<ingest::CountryGroup>, CliError> {
    let Some(path) = path else { return Ok(Vec::new()) };
    ingest::parse_groups(read(path)?.as_slice()).map_err(|source| CliError::Ingest {
        path: path.to_path_buf(),
        source,
    })
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    scenario::parse_scenario(read(path)?.as_slice()).map_err(|source| CliError::Scenario {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_validate(data: &Path, groups: Option<&Path>) -> Result<u8, CliError> {
    let records = load_records(data)?;
    let lines: Vec<TradeLine> = records.iter().map(TradeLine::from).collect();
    let dataset = Dataset::new(lines).with_groups(load_groups(groups)?);
    let report = ingest::validate_dataset(&dataset);
    print!("{report}");
    Ok(if report.is_clean() { 0 } else { 1 })
}

impl RunArgs {
    fn formats(&self) -> Result<Vec<Format>, CliError> {
        if self.formats.is_empty() {
            return Ok(Format::ALL.to_vec());
        }
        let mut out = Vec::new();
        for f in &self.formats {
            let f: Format = f.parse()?;
            if !out.contains(&f) {
                out.push(f);
            }
        }
        Ok(out)
    }

    fn render_options(&self) -> RenderOptions {
        RenderOptions {
            paper_rounding: self.paper_rounding,
        }
    }

    fn load_dataset(&self) -> Result<Dataset, CliError> {
        let records = load_records(&self.data)?;
        let dataset = Dataset::new(ingest::aggregate_lines(&records))
            .with_groups(load_groups(self.groups.as_deref())?)
            .with_currency_label(&self.currency_label);
        info!(
            "{} records aggregated into {} trade lines",
            records.len(),
            dataset.lines.len()
        );
        Ok(dataset)
    }

    fn simulate(&self, dataset: &Dataset, scenario: &Scenario) -> Result<SimulationResult, CliError> {
        info!("simulating scenario `{}`", scenario.name);
        Ok(engine::run_simulation_with(
            dataset,
            scenario,
            RunOptions { jobs: self.jobs },
        )?)
    }

    fn write_table<T: ReportTable>(&self, stem: &str, table: &T, formats: &[Format]) -> Result<(), CliError> {
        for &format in formats {
            let path = self.out.join(format!("{stem}.{}", format.extension()));
            write(&path, &report::render(table, format, &self.render_options())?)?;
            info!("wrote {}", path.display());
        }
        Ok(())
    }

    fn prepare_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|source| CliError::Io {
            path: self.out.clone(),
            source,
        })
    }

    fn write_baseline(&self, dataset: &Dataset, first: &SimulationResult, formats: &[Format]) -> Result<(), CliError> {
        self.write_table(
            "partners",
            &report::partner_shares_for_dataset(dataset, Some(self.top_n)),
            formats,
        )?;
        let bands = report::revenue_by_band(first, &report::standard_bands(), State::Before);
        self.write_table("bands", &bands, formats)
    }
}

fn cmd_run(args: &RunArgs, scenario_path: &Path) -> Result<u8, CliError> {
    let formats = args.formats()?;
    let dataset = args.load_dataset()?;
    let scenario = load_scenario(scenario_path)?;
    let result = args.simulate(&dataset, &scenario)?;

    args.prepare_out()?;
    args.write_baseline(&dataset, &result, &formats)?;
    let summary = report::scenario_summary(&result);
    args.write_table("summary", &summary, &formats)?;
    print!("{}", summary.grid(&args.render_options()).to_markdown());
    Ok(0)
}

fn cmd_compare(args: &RunArgs, scenario_paths: &[PathBuf]) -> Result<u8, CliError> {
    if scenario_paths.len() < 2 {
        return Err(CliError::Usage("compare needs at least two --scenario files".into()));
    }
    let formats = args.formats()?;
    let dataset = args.load_dataset()?;
    let scenarios = scenario_paths
        .iter()
        .map(|p| load_scenario(p))
        .collect::<Result<Vec<_>, _>>()?;
    let results = scenarios
        .iter()
        .map(|s| args.simulate(&dataset, s))
        .collect::<Result<Vec<_>, _>>()?;

    args.prepare_out()?;
    args.write_baseline(&dataset, &results[0], &formats)?;
    let summaries: Vec<_> = results.iter().map(report::scenario_summary).collect();
    let table = report::compare_summaries(&summaries);
    args.write_table("summary", &table, &formats)?;
    print!("{}", table.grid(&args.render_options()).to_markdown());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();

    let outcome = match &cli.command {
        Command::Validate { data, groups } => cmd_validate(data, groups.as_deref()),
        Command::Run { common, scenario } => cmd_run(common, scenario),
        Command::Compare { common, scenarios } => cmd_compare(common, scenarios),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
