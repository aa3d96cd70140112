use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dgn::error::Error;
use dgn::experiment::{run_experiment, ExperimentConfig, Scenario};
use dgn::sweep::{default_depths, sweep, SweepSpec};
use dgn_core::train::NormKind;

/// Deep GNN experiments with differentiable group normalization.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over its repeats and append the result.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config file.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Write embeddings of the first repeat next to the results.
        #[arg(long)]
        export: bool,
    },
    /// Train every combination of the listed depths, normalizers, G and λ.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Depths; defaults depend on the model kind.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',', value_parser = parse_norm)]
        norm: Vec<NormKind>,
        /// Group counts; defaults to the config value.
        #[arg(long, value_delimiter = ',')]
        groups: Vec<usize>,
        /// λ values; defaults to the config value.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        /// Pick λ per DGN cell from the candidate set by validation accuracy.
        #[arg(long)]
        tune_lambda: bool,
        /// Zero the validation and test features before training.
        #[arg(long)]
        missing_features: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Extend the default SGC depths to 120.
        #[arg(long)]
        deep: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_norm(s: &str) -> Result<NormKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown normalizer {s:?}; expected none, batch, pair or dgn"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, output, repeats, export } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            if let Some(r) = repeats {
                cfg.repeats = r;
            }
            cfg.export |= export;
            let record = run_experiment(&cfg)?;
            println!(
                "{} {} K={} norm={}: accuracy {:.2} ± {:.2} ({} of {} repeats), G_Ins {:.4}, R_Group {:.4}",
                record.dataset,
                record.model.kind.name(),
                record.model.depth,
                record.model.norm.name(),
                100.0 * record.acc_mean,
                100.0 * record.acc_std,
                record.runs.len(),
                record.repeats,
                record.metrics.g_ins,
                record.metrics.r_group,
            );
            Ok(())
        }
        Command::Sweep { config, k, norm, groups, lambda, tune_lambda, missing_features, jobs, deep, output } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            if missing_features {
                cfg.scenario = Scenario::MissingFeatures;
            }
            let model = cfg.model_config();
            let spec = SweepSpec {
                depths: if k.is_empty() { default_depths(model.kind, deep) } else { k },
                norms: if norm.is_empty() { vec![model.norm] } else { norm },
                groups: if groups.is_empty() { vec![model.groups] } else { groups },
                lambdas: if lambda.is_empty() { vec![model.lambda] } else { lambda },
                tune_lambda,
                jobs,
            };
            let outcome = sweep(&cfg, &spec)?;
            for b in &outcome.best {
                println!(
                    "{}: best K={} accuracy {:.2} ± {:.2}{}",
                    b.norm.name(),
                    b.depth,
                    100.0 * b.acc_mean,
                    100.0 * b.acc_std,
                    b.improvement_abs.map(|d| format!(" ({d:+.2} points over none)")).unwrap_or_default()
                );
            }
            let failed = outcome.failures();
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", outcome.cells.len());
            }
            if failed == outcome.cells.len() {
                let first = outcome.cells.iter().find_map(|c| c.result.as_ref().err().cloned()).unwrap_or_default();
                return Err(Error::AllRepeatsFailed { repeats: cfg.repeats, first });
            }
            Ok(())
        }
    }
}
