use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use acv::commands::{self, Case, SimulateArgs};
use acv::service::{resume_jobs, router, AppState};
use acv::store::Store;
use acv_core::preftree::TreeFormat;
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "acv", version, about = "Advice-conformance verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Session directory; ACV_DATA_DIR takes precedence when set.
        #[arg(long, default_value = "./sessions")]
        data_dir: PathBuf,
    },
    /// Run a simulated good- or bad-advice experiment and write its report.
    Simulate {
        #[arg(long)]
        case: Case,
        #[arg(long, default_value_t = 16)]
        players: usize,
        #[arg(long, default_value_t = acv_core::verify::DEFAULT_NOISE)]
        p: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "default")]
        world: String,
        /// Training config JSON; defaults apply to missing fields.
        #[arg(long)]
        training: Option<PathBuf>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Write the human and agent trees of a report.
    Render {
        report: PathBuf,
        #[arg(long, default_value = "dot")]
        format: TreeFormat,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Compare two tree documents and print the verdict.
    Compare { human: PathBuf, agent: PathBuf },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn verdict_code(summary: &acv_core::verify::Summary) -> ExitCode {
    println!("{}", summary.text);
    ExitCode::from(summary.verdict.exit_code() as u8)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Serve { port, data_dir } => {
            let dir = commands::resolve_data_dir(data_dir, std::env::var(commands::DATA_DIR_ENV).ok());
            serve(port, dir)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { case, players, p, seed, world, training, out } => {
            let args = SimulateArgs { case, players, p, seed, world, training, out };
            let (_, summary) = commands::simulate(&args)?;
            eprintln!("report written to {}", args.out.display());
            Ok(verdict_code(&summary))
        }
        Command::Render { report, format, out_dir } => {
            for path in commands::render(&report, format, &out_dir)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { human, agent } => Ok(verdict_code(&commands::compare(&human, &agent)?)),
    }
}

#[tokio::main]
async fn serve(port: u16, dir: PathBuf) -> Result<()> {
    let store = Arc::new(Store::open(&dir).with_context(|| format!("opening {}", dir.display()))?);
    let state = AppState { store };
    resume_jobs(&state).await;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!(port, dir = %dir.display(), "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
