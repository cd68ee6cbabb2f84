//! `crn`: runs the pipeline stages from a config file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crn_core::config::PipelineConfig;
use crn_core::pipeline::{run_stage, GroupChoice, Layout, Stage};
use crn_core::{CrnError, Result};

#[derive(Debug, Parser)]
#[command(name = "crn", version, about = "Bayesian-forecast reinforcement-learning trading pipeline")]
struct Cli {
    /// Pipeline config (TOML, or JSON by extension).
    #[arg(long, global = true, default_value = "crn.toml")]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; falls back to CRN_OUT, then the config, then `crn-out`.
    #[arg(long, global = true, env = "CRN_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Load and align the input CSVs.
    Ingest,
    /// Compute indicator frames for every feature group.
    Indicators,
    /// Score the feature groups and record each coin's choice.
    SelectFeatures,
    /// Fit the forecasting network and write next-day forecasts.
    TrainDbn,
    /// Train one agent per strategy and seed.
    TrainAgent,
    /// Evaluate every strategy on the test split and write trade logs.
    Backtest,
    /// Aggregate the backtest into JSON, CSV and text tables.
    Report,
    /// Run every stage in order.
    All,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::Ingest => vec![Stage::Ingest],
            Command::Indicators => vec![Stage::Indicators],
            Command::SelectFeatures => vec![Stage::SelectFeatures],
            Command::TrainDbn => vec![Stage::TrainDbn],
            Command::TrainAgent => vec![Stage::TrainAgent],
            Command::Backtest => vec![Stage::Backtest],
            Command::Report => vec![Stage::Report],
            Command::All => Stage::ALL.to_vec(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<(PipelineConfig, PathBuf)> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("crn-out"));
    Ok((cfg, out))
}

fn print_selection(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let layout = Layout::new(out);
    for coin in &cfg.coins {
        let path = layout.selection(coin);
        let text = std::fs::read_to_string(&path).map_err(|e| CrnError::Io { path: path.clone(), source: e })?;
        let choice: GroupChoice = serde_json::from_str(&text)?;
        match &choice.selection {
            Some(sel) => {
                for (g, acc) in &sel.accuracies {
                    println!("{coin}\t{g}\t{acc:.4}");
                }
                for (g, why) in &sel.skipped {
                    println!("{coin}\t{g}\tskipped: {why}");
                }
                println!("{coin}\tselected {}", choice.group);
            }
            None => println!("{coin}\tpinned {}", choice.group),
        }
    }
    Ok(())
}

fn print_report(out: &Path) -> Result<()> {
    let path = Layout::new(out).report_dir().join("roi_table.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| CrnError::Io { path, source: e })?;
    print!("{text}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let (cfg, out) = load_config(cli)?;
    for stage in cli.command.stages() {
        log::info!("stage {}", stage.name());
        run_stage(stage, &cfg, &out)?;
        match stage {
            Stage::SelectFeatures => print_selection(&cfg, &out)?,
            Stage::Report => print_report(&out)?,
            _ => {}
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
