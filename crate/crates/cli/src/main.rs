use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sae_cli::commands;
use sae_cli::service::Service;
use sae_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "sae", version, about = "Train and inspect structuring autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set train.gamma=0.5`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, metrics and latent CSVs.
    Train(Common),
    /// Evaluate a checkpoint on the test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train one model per gamma and tabulate the errors.
    SweepGamma {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
    },
    /// Compare guided and random label acquisition with a replay oracle.
    Guided(Common),
    /// Move a sample along a class-center direction.
    Morph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        id: usize,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        to: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Rank unlabeled samples by ascending margin.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        k: usize,
    },
    /// Run the HTTP labeling service.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn load(c: &Common) -> Result<RunConfig, CliError> {
    RunConfig::load(&c.config, &c.overrides)
}

fn print_json(v: &impl serde::Serialize) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

async fn serve(cfg: RunConfig, checkpoint: Option<PathBuf>, host: String, port: u16) -> Result<(), CliError> {
    let ui = cfg.ui_dir.clone();
    let service = tokio::task::spawn_blocking(move || Service::start(&cfg, checkpoint.as_deref()))
        .await
        .map_err(|e| CliError::Usage(e.to_string()))??;
    let app = match &ui {
        Some(dir) => service.router_with_ui(dir),
        None => service.router(),
    };
    let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    tokio::task::spawn_blocking(move || service.shutdown()).await.map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => print_json(&commands::cmd_train(&load(&c)?)?),
        Command::Eval { common, checkpoint } => print_json(&commands::cmd_eval(&load(&common)?, checkpoint.as_deref())?),
        Command::SweepGamma { common, gammas } => print_json(&commands::cmd_sweep_gamma(&load(&common)?, &gammas)?),
        Command::Guided(c) => print_json(&commands::cmd_guided(&load(&c)?)?),
        Command::Morph { common, checkpoint, id, from, to, steps } => {
            print_json(&commands::cmd_morph(&load(&common)?, checkpoint.as_deref(), id, (from, to), steps)?)
        }
        Command::Rank { common, checkpoint, k } => {
            let path = commands::cmd_rank(&load(&common)?, checkpoint.as_deref(), k)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Serve { common, checkpoint, host, port } => {
            let cfg = load(&common)?;
            tokio::runtime::Runtime::new()?.block_on(serve(cfg, checkpoint, host, port))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
