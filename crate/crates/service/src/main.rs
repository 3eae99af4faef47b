use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ivos_service::commands::{
    evaluation_sequences, load_config, run_calibration, run_eval, write_synthetic,
};
use ivos_service::{router, AppState};

#[derive(Parser)]
#[command(
    name = "ivos",
    version,
    about = "Interactive video object segmentation"
)]
struct Cli {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Calibrated head parameters, overriding the config's `segmenter.head`.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scribble robot and score every round.
    Eval {
        /// Sequence directory with `JPEGImages/` and `Annotations/`;
        /// the built-in synthetic suite when omitted.
        #[arg(long)]
        sequence: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        rounds: usize,
        /// Robot runs per sequence, with seeds counting up from the
        /// config's `robot.seed`.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value = "eval-out")]
        out: PathBuf,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Write synthetic sequences with ground truth to disk.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Suite index; all sequences when omitted.
        #[arg(long)]
        index: Option<usize>,
    },
    /// Fit the head parameters and write a params file.
    Calibrate {
        /// Training sequence directories (repeatable); the synthetic suite
        /// when omitted.
        #[arg(long)]
        sequence: Vec<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, default_value = "params.toml")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(cli.config.as_deref(), cli.params.as_deref())?;
    match cli.command {
        Command::Eval {
            sequence,
            rounds,
            seeds,
            out,
        } => {
            let sequences = evaluation_sequences(sequence.as_deref())?;
            let report = run_eval(&sequences, &config, rounds, seeds, &out)?;
            print!("{}", report.table());
            println!("wrote {}", out.display());
        }
        Command::Serve { port, host } => {
            let addr = SocketAddr::new(host, port);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                eprintln!("listening on http://{addr}");
                axum::serve(listener, router(AppState::new(config))).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
        Command::Synth { out, index } => {
            for dir in write_synthetic(&out, index)? {
                println!("{}", dir.display());
            }
        }
        Command::Calibrate {
            sequence,
            iterations,
            out,
        } => {
            if let Some(n) = iterations {
                config.calibration.iterations = n;
            }
            let report = run_calibration(&sequence, &config, &out)?;
            let p = report.params;
            println!(
                "loss {:.6} -> {:.6}",
                report.initial_loss, report.final_loss
            );
            println!(
                "kappa {:.4} gamma {:.4} alpha {:.4} beta {:.4}",
                p.kappa, p.gamma, p.alpha, p.beta
            );
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
