use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lungseg::commands::{cmd_eval, cmd_phantom, cmd_report, cmd_train};
use lungseg::{Error, Result, RunConfig};

#[derive(Parser)]
#[command(name = "lungseg", version, about = "Wavelet-augmented lung tumor segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the command's primary output: the dataset directory,
    /// weights file, report CSV or comparison table.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    Phantom,
    /// Train on every fold except the held-out one and save weights.
    Train,
    /// Evaluate saved weights on the held-out fold and write a report CSV.
    Eval,
    /// Compare report CSVs, best mean dice first.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Phantom => {
            if let Some(out) = cli.out {
                config.dataset_path = out;
            }
            let summary = cmd_phantom(&config)?;
            println!("{summary}");
        }
        Command::Train => {
            if let Some(out) = cli.out {
                config.weights_path = out;
            }
            let outcome = cmd_train(&config)?;
            println!(
                "trained {} epochs; weights {}, log {}",
                outcome.epochs.len(),
                config.weights_path.display(),
                outcome.log_path.display()
            );
        }
        Command::Eval => {
            if let Some(out) = cli.out {
                config.report_path = out;
            }
            let r = cmd_eval(&config)?;
            println!(
                "mean dice {:.4}  tp {} fp {} tn {} fn {}  f1 {:.4}  -> {}",
                r.mean_dice,
                r.confusion.tp,
                r.confusion.fp,
                r.confusion.tn,
                r.confusion.fn_,
                r.f1,
                config.report_path.display()
            );
        }
        Command::Report { csv } => match cli.out {
            Some(path) => {
                let mut f = std::fs::File::create(&path).map_err(Error::io(&path))?;
                cmd_report(&csv, &mut f)?;
            }
            None => cmd_report(&csv, &mut std::io::stdout().lock())?,
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
