use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use gradflow::optim::TrainConfig;
use gradflow_cli::{
    cmd_eval, cmd_gradcheck, cmd_inspect, cmd_train, resolve_arch, DataSource, EvalArgs, GradcheckArgs, TrainArgs,
};

/// Train and check small convolutional networks on MNIST.
#[derive(Parser, Debug)]
#[command(name = "gradflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Directory with the MNIST IDX files (raw or .gz)
    #[arg(long, global = true, env = "GRADFLOW_DATA_DIR")]
    data_dir: Option<PathBuf>,

    /// Use the bundled synthetic digits instead of MNIST
    #[arg(long, global = true)]
    synthetic: bool,

    /// Architecture file; the reference net when absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 5)]
    epochs: usize,

    #[arg(long, global = true, default_value_t = 32)]
    batch_size: usize,

    #[arg(long, global = true, default_value_t = 0.01)]
    lr: f64,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// train: checkpoint to write. gradcheck: JSON report to write
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// eval: checkpoint to read
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// train: CSV metrics file
    #[arg(long, global = true, default_value = "metrics.csv")]
    metrics: PathBuf,

    /// gradcheck: only targets whose name or layer kind matches
    #[arg(long, global = true)]
    layer: Option<String>,

    /// gradcheck: maximum relative error
    #[arg(long, global = true)]
    tolerance: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train from scratch, writing metrics and checkpoints
    Train,
    /// Evaluate a checkpoint on the test split
    Eval,
    /// Compare analytic gradients with finite differences
    Gradcheck,
    /// Print shapes and parameter counts
    Inspect,
}

impl Cli {
    fn data(&self) -> Result<DataSource> {
        match (&self.data_dir, self.synthetic) {
            (_, true) => Ok(DataSource::Synthetic),
            (Some(d), false) => Ok(DataSource::Dir(d.clone())),
            (None, false) => bail!("no data: pass --data-dir, set GRADFLOW_DATA_DIR, or use --synthetic"),
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Train => {
            let args = TrainArgs {
                arch: resolve_arch(cli.config.as_deref())?,
                data: cli.data()?,
                train: TrainConfig {
                    learning_rate: cli.lr,
                    batch_size: cli.batch_size,
                    epochs: cli.epochs,
                    seed: cli.seed,
                    shuffle: true,
                },
                checkpoint: cli.out.clone().unwrap_or_else(|| PathBuf::from("checkpoint.bin")),
                metrics: cli.metrics.clone(),
            };
            cmd_train(&args, &mut stdout)?;
        }
        Command::Eval => {
            let Some(checkpoint) = cli.checkpoint.clone() else {
                bail!("eval needs --checkpoint");
            };
            let args = EvalArgs {
                arch: resolve_arch(cli.config.as_deref())?,
                data: cli.data()?,
                checkpoint,
                batch_size: cli.batch_size,
            };
            cmd_eval(&args, &mut stdout)?;
        }
        Command::Gradcheck => {
            let args = GradcheckArgs {
                layer: cli.layer.clone(),
                tolerance: cli.tolerance,
                report: cli.out.clone(),
            };
            return cmd_gradcheck(&args, &mut stdout);
        }
        Command::Inspect => {
            cmd_inspect(&resolve_arch(cli.config.as_deref())?, &mut stdout)?;
        }
    }
    stdout.flush()?;
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
