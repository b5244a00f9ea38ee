use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use stylechat_gateway::config::ServiceConfig;
use stylechat_gateway::{eval, http, pipeline};

#[derive(Parser)]
#[command(
    name = "stylechat",
    version,
    about = "Chat-driven dress search and design"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Derive every seed from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the catalog and the NLU training set.
    GenData(#[command(flatten)] Common),
    /// Train models from generated data.
    Train {
        #[arg(value_enum, default_value_t = Stage::All)]
        stage: Stage,
        #[command(flatten)]
        common: Common,
    },
    /// Serve the HTTP API.
    Serve(#[command(flatten)] Common),
    /// Train from scratch and print the acceptance report as JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Nlu,
    Encoders,
    Flow,
    All,
}

fn load(common: &Common) -> Result<ServiceConfig> {
    let mut config = ServiceConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.reseed(seed);
    }
    Ok(config)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::GenData(common) => {
            let config = load(&common)?;
            let (items, examples) = pipeline::gen_data(&config)?;
            println!(
                "wrote {items} catalog items and {examples} NLU examples to {}",
                config.data_dir.display()
            );
        }
        Command::Train { stage, common } => {
            let config = load(&common)?;
            if matches!(stage, Stage::Nlu | Stage::All) {
                let m = pipeline::train_nlu(&config)?;
                println!(
                    "nlu: {} intents, final loss {:.4}",
                    m.labels().len(),
                    m.meta().final_loss
                );
            }
            if matches!(stage, Stage::Encoders | Stage::All) {
                let e = pipeline::train_encoders(&config)?;
                println!(
                    "encoders: loss {:.4} -> {:.4}",
                    e.summary.initial_loss,
                    e.summary.loss_history.last().copied().unwrap_or(f64::NAN)
                );
            }
            if matches!(stage, Stage::Flow | Stage::All) {
                let f = pipeline::train_flow(&config)?;
                println!(
                    "flow: nll {:.3} -> {:.3}",
                    f.meta.initial_nll,
                    f.meta.loss_history.last().copied().unwrap_or(f64::NAN)
                );
            }
        }
        Command::Serve(common) => {
            let config = load(&common)?;
            tokio::runtime::Runtime::new()?.block_on(http::serve(config))?;
        }
        Command::Eval { common, out } => {
            let config = load(&common)?;
            let report = eval::run(&config)?;
            for c in &report.criteria {
                eprintln!("{}", c.line());
            }
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(path) = out {
                std::fs::write(&path, &json)?;
            }
            println!("{json}");
            if !report.all_pass() {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
