use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use banditswap::harness::{run_experiment, run_static_select, summarize_report_dir, ExperimentConfig, StreamSpec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "banditswap",
    version,
    about = "Bandit-driven model assessment and substitution simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Static bandit over the whole stream; prints per-model draw counts.
    StaticSelect(Overrides),
    /// Windowed experiment (memory variant plus fresh baseline); writes a report directory.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        /// Report directory.
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Summarizes a report directory from its window table and event log.
    Report {
        /// Report directory written by `run`.
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    /// Experiment TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    memory: Option<f64>,
    #[arg(long)]
    residual: Option<f64>,
    #[arg(long)]
    thr: Option<f64>,
    #[arg(long = "burn-in")]
    burn_in: Option<usize>,
    #[arg(long)]
    g: Option<usize>,
    /// Trace count for a synthetic stream, or a CSV file of traces.
    #[arg(long)]
    traces: Option<String>,
    /// Feature schema TOML for a CSV stream.
    #[arg(long, requires = "traces")]
    schema: Option<PathBuf>,
}

impl Overrides {
    fn config(&self) -> banditswap::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let engine = &mut config.engine;
        if let Some(v) = self.seed {
            engine.seed = v;
        }
        if let Some(v) = self.memory {
            engine.memory = v;
        }
        if let Some(v) = self.residual {
            engine.residual = v;
        }
        if let Some(v) = self.thr {
            engine.thr = v;
        }
        if let Some(v) = self.burn_in {
            engine.burn_in = v;
        }
        if let Some(v) = self.g {
            engine.g = v;
        }
        if let Some(traces) = &self.traces {
            let train = config.stream.train();
            config.stream = match traces.parse::<usize>() {
                Ok(n) => StreamSpec::Synthetic { traces: n, train },
                Err(_) => StreamSpec::Csv {
                    path: traces.into(),
                    schema: self.schema.clone(),
                    train,
                },
            };
        }
        config.validate()?;
        Ok(config)
    }
}

fn static_select(overrides: &Overrides) -> anyhow::Result<()> {
    let config = overrides.config()?;
    let (ids, selection) = run_static_select(&config)?;
    let total: u64 = selection.draws.iter().sum();
    println!("{:<16} {:>10} {:>8}", "model", "draws", "share");
    for (id, draws) in ids.iter().zip(&selection.draws) {
        let share = if total == 0 { 0.0 } else { *draws as f64 / total as f64 };
        println!("{id:<16} {draws:>10} {share:>8.4}");
    }
    println!("optimum: {}", ids[selection.optimum]);
    Ok(())
}

fn run(overrides: &Overrides, out: &PathBuf) -> anyhow::Result<()> {
    let config = overrides.config()?;
    log::info!("running {} models, seed {}", config.models.len(), config.engine.seed);
    let report = run_experiment(&config)?;
    report
        .write(out)
        .with_context(|| format!("writing report to {}", out.display()))?;
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(())
}

fn report(out: &PathBuf) -> anyhow::Result<()> {
    let summary = summarize_report_dir(out).with_context(|| format!("reading report {}", out.display()))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<banditswap::Error>() {
        Some(banditswap::Error::Config(_) | banditswap::Error::Usage(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::StaticSelect(overrides) => static_select(overrides),
        Command::Run { overrides, out } => run(overrides, out),
        Command::Report { out } => report(out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
