use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use converter::commands;
use converter::config::{load_train_config, parse_override};
use converter::exec::Threaded;
use converter::CliResult;

#[derive(Parser)]
#[command(
    name = "converter",
    version,
    about = "Structured-unitary sequence models: checks, demos, training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unitarity, round-trip, dense-oracle and timing checks of the structured transform
    UnitaryCheck {
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        perm_factor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the timing-ratio check
        #[arg(long)]
        no_timing: bool,
    },
    /// Finite-difference sweep over every registered operation
    Gradcheck {
        /// Add an operation with a deliberately wrong gradient
        #[arg(long)]
        inject_fault: bool,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Damped Chebyshev interpolants of a step function, one column per kernel
    KpmDemo {
        #[arg(long, default_value_t = 50)]
        order: usize,
        #[arg(long, default_value = "kpm_demo.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Timing of the fast transform against dense multiplication
    Bench {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "16384,32768,65536,131072"
        )]
        n: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a classifier on a synthetic task
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a configuration key, e.g. --set lr=0.003
        #[arg(long = "set", value_parser = parse_override)]
        set: Vec<(String, String)>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Record wall-clock seconds in the metrics
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Configuration describing the evaluation data; defaults to the checkpoint's own
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_parser = parse_override)]
        set: Vec<(String, String)>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn executor(workers: Option<usize>) -> Threaded {
    workers.map_or_else(Threaded::available, Threaded::new)
}

fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::UnitaryCheck {
            n,
            seeds,
            perm_factor,
            seed,
            no_timing,
        } => commands::unitary_check(n, seeds, perm_factor, seed, !no_timing, out),
        Command::Gradcheck {
            inject_fault,
            tol,
            seed,
        } => commands::gradcheck(inject_fault, tol, seed, out),
        Command::KpmDemo {
            order, out: path, ..
        } => commands::kpm_demo(order, &path, out).map(|_| ()),
        Command::Bench { n, reps, seed } => commands::bench(&n, reps, seed, out).map(|_| ()),
        Command::Train {
            config,
            mut set,
            task,
            eta,
            epochs,
            seed,
            out: dir,
            timing,
            workers,
        } => {
            let flags = [
                ("task", task),
                ("eta", eta.map(|v| v.to_string())),
                ("epochs", epochs.map(|v| v.to_string())),
                ("seed", seed.map(|v| v.to_string())),
            ];
            set.extend(
                flags
                    .into_iter()
                    .filter_map(|(k, v)| v.map(|v| (k.to_string(), v))),
            );
            let cfg = load_train_config(config.as_deref(), &set)?;
            commands::run_training(&cfg, &dir, timing, &executor(workers), out).map(|_| ())
        }
        Command::Eval {
            checkpoint,
            config,
            mut set,
            split,
            seed,
            workers,
        } => {
            if let Some(s) = seed {
                set.push(("seed".into(), s.to_string()));
            }
            let data_cfg = match (&config, set.is_empty()) {
                (None, true) => None,
                _ => Some(load_train_config(config.as_deref(), &set)?),
            };
            let split = commands::parse_split(&split)?;
            commands::run_eval(&checkpoint, data_cfg, split, &executor(workers), out).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
