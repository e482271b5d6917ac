use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ole::experiment::{
    cmd_gradcheck, cmd_metrics, cmd_sweep_lambda, cmd_train, ExperimentConfig, ExperimentError, GradcheckOptions,
};

#[derive(Parser)]
#[command(name = "ole", version, about = "Train and inspect orthogonal low-rank embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&self.set)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train (best of `repeats`) and export metrics and a checkpoint
    Train(Common),
    /// Validation accuracy of the combined loss over a list of lambdas
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lambdas; defaults to the `lambdas` key
        #[arg(long)]
        lambdas: Option<String>,
    },
    /// Finite-difference and orthogonal-optimum checks
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Recompute metrics for a saved checkpoint
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let out = cmd_train(&cfg)?;
            for r in &out.runs {
                println!("seed {} val_acc {:.4}", r.seed, r.val_accuracy);
            }
            let report = &out.evaluation.report;
            println!(
                "selected seed {} test_acc {:.4} knn_acc {:.4} intra {:.2} inter {:.2} energy_top_c {:.4}",
                out.best.seed,
                out.evaluation.accuracy,
                report.knn_accuracy,
                report.mean_intra_angle,
                report.mean_inter_angle,
                report.energy_top_c
            );
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Sweep { common, lambdas } => {
            let mut cfg = common.resolve()?;
            if let Some(list) = lambdas {
                cfg.set("lambdas", &list)?;
            }
            let result = cmd_sweep_lambda(&cfg, &cfg.lambdas)?;
            for row in &result.rows {
                println!(
                    "lambda {} mean_acc {:.4} std_acc {:.4}",
                    row.lambda, row.mean_acc, row.std_acc
                );
            }
            println!("best lambda {}", result.best_lambda);
        }
        Command::Gradcheck { seed, trials, corrupt } => {
            let report = cmd_gradcheck(seed, trials, GradcheckOptions { corrupt })?;
            println!("{report}");
            if !report.passed() {
                return Err(ExperimentError::Check("gradient check failed".into()));
            }
        }
        Command::Metrics { common, checkpoint } => {
            let mut cfg = common.resolve()?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            let ev = cmd_metrics(&cfg)?;
            println!(
                "accuracy {:.4} knn_acc {:.4} intra {:.2} inter {:.2} energy_top_c {:.4}",
                ev.accuracy,
                ev.report.knn_accuracy,
                ev.report.mean_intra_angle,
                ev.report.mean_inter_angle,
                ev.report.energy_top_c
            );
            println!("wrote {}", cfg.output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
