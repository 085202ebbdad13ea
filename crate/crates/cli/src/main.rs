use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfbaynet_cli::config::RunConfig;
use mfbaynet_cli::{cmd_cokrige, cmd_gen_data, cmd_noise_study, cmd_predict, cmd_train, cmd_tune, CliError};
use mfbaynet_core::data::Fidelity;

#[derive(Parser)]
#[command(name = "mfbaynet", version, about = "Multi-fidelity Bayesian neural network surrogates")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic low/mid/high datasets as CSV.
    GenData,
    /// Train the transfer pipeline (or one fidelity) and score it on the HF test set.
    Train {
        #[arg(long, value_parser = parse_fidelity)]
        single_fidelity: Option<Fidelity>,
    },
    /// Bayesian optimization of the network hyperparameters.
    Tune,
    /// Fit and score the co-kriging baseline.
    Cokrige,
    /// Predict means and stds at the points of a CSV file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with `aoa_deg` and `mach` columns.
        #[arg(long)]
        inputs: PathBuf,
    },
    /// Retrain with noisy copies of each fidelity and column.
    NoiseStudy,
}

fn parse_fidelity(s: &str) -> Result<Fidelity, String> {
    s.parse().map_err(|e: mfbaynet_core::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    cfg.validate()?;
    match cli.command {
        Command::GenData => {
            for path in cmd_gen_data(&cfg)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Train { single_fidelity } => {
            let r = cmd_train(&cfg, single_fidelity)?;
            println!("{}", r.evaluation.metrics.csv_row(&r.trained.model));
            println!("wrote {}", r.metrics_csv.display());
        }
        Command::Tune => {
            let r = cmd_tune(&cfg)?;
            println!("best objective {:.6} after {} trials", r.best_objective, r.state.history.len());
            println!("wrote {}", r.best_config.display());
        }
        Command::Cokrige => {
            let e = cmd_cokrige(&cfg)?;
            println!("{}", e.metrics.csv_row("CK LF/MF/HF"));
        }
        Command::Predict { checkpoint, inputs } => {
            let path = cmd_predict(&cfg, &checkpoint, &inputs)?;
            println!("wrote {}", path.display());
        }
        Command::NoiseStudy => {
            for r in cmd_noise_study(&cfg)? {
                println!("{}", r.metrics.csv_row(&r.label));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
