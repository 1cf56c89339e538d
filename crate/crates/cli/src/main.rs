use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use chrono::Utc;
use clap::{Parser, Subcommand};
use commentscope_client::{Client, ClientError};
use commentscope_core::config::Config;
use commentscope_core::datastore::Store;
use commentscope_core::ingestion::SourceError;
use commentscope_core::pipeline::{self, parse_stages, run_pipeline, IngestSource, Models, Prompts, RunSpec, Stage};
use commentscope_core::Error;
use commentscope_service::ServiceOptions;

#[derive(Parser, Debug)]
#[command(name = "commentscope", version, about = "Audience feedback analytics for a video channel")]
struct Cli {
    /// Config file. Relative paths inside it resolve against its directory.
    #[arg(long, global = true, env = "COMMENTSCOPE_CONFIG")]
    config: Option<PathBuf>,

    /// Override `storage.database`.
    #[arg(long, global = true, env = "COMMENTSCOPE_DB")]
    db: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fetch videos and comments into the datastore.
    Ingest {
        /// Channel to fetch from the YouTube Data API.
        #[arg(long, conflicts_with = "fixture")]
        channel: Option<String>,
        /// Directory holding channel.json, videos.json and comments.json.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Re-read every comment instead of only newer ones.
        #[arg(long)]
        full: bool,
    },
    /// Run analysis stages and publish a snapshot.
    Analyze {
        /// Comma-separated stages; defaults to all analysis stages.
        #[arg(long)]
        stages: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the read-only API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Built dashboard to serve at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Dump the current snapshot as a static JSON bundle.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Read from a running service instead of the local datastore.
        #[arg(long)]
        api: Option<String>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand, Debug)]
enum ConfigAction {
    /// Parse and check the config file.
    Validate,
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None if Path::new("commentscope.toml").exists() => Config::load(Path::new("commentscope.toml"))?,
        None => Config::default(),
    };
    if let Some(db) = &cli.db {
        cfg.storage.database = std::path::absolute(db)?;
    }
    Ok(cfg)
}

fn open_store(cfg: &Config) -> anyhow::Result<Store> {
    let path = cfg.database_path();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(Store::open(&path)?)
}

async fn ingest(cfg: &Config, channel: Option<String>, fixture: Option<PathBuf>, full: bool) -> anyhow::Result<()> {
    let store = open_store(cfg)?;
    let source = match (channel, fixture) {
        (_, Some(dir)) => IngestSource::Fixture(dir),
        (Some(id), None) => IngestSource::Channel(id),
        (None, None) => IngestSource::from_config(cfg)?,
    };
    let manifest = pipeline::ingest(&store, cfg, &source, full, Utc::now()).await?;
    println!(
        "ingested channel={} videos={} comments={}",
        manifest.channel_id, manifest.videos_fetched, manifest.comments_fetched
    );
    Ok(())
}

async fn analyze(cfg: &Config, stages: Option<String>, seed: Option<u64>) -> anyhow::Result<()> {
    let store = open_store(cfg)?;
    let stages = match stages {
        Some(s) => parse_stages(&s)?,
        None => Stage::ANALYSIS.into_iter().collect(),
    };
    let models = Models::from_config(cfg, &store)?;
    let prompts = Prompts::from_config(cfg)?;
    let run = RunSpec { stages, seed: seed.unwrap_or(cfg.seed) };
    let out = run_pipeline(&store, cfg, &models, &prompts, &run, Utc::now()).await?;
    println!(
        "snapshot={} artifacts={} computed={} reused={} degraded={}",
        out.snapshot.snapshot_id,
        out.snapshot.artifact_index.len(),
        out.computed.len(),
        out.reused.len(),
        out.snapshot.degraded.len()
    );
    Ok(())
}

fn service_options(cfg: &Config, static_dir: Option<PathBuf>) -> ServiceOptions {
    ServiceOptions { cors_origins: cfg.service.cors_origins.clone(), static_dir }
}

async fn serve(cfg: &Config, host: &str, port: u16, static_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let store = open_store(cfg)?;
    let app = commentscope_service::router(store, &service_options(cfg, static_dir));
    let listener = tokio::net::TcpListener::bind((host, port)).await.with_context(|| format!("binding {host}:{port}"))?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    std::io::stdout().flush()?;
    commentscope_service::serve(listener, app).await?;
    Ok(())
}

async fn report(cfg: &Config, out: &Path, api: Option<String>) -> anyhow::Result<()> {
    let summary = match api {
        Some(base) => commentscope_client::write_bundle(&Client::new(base), out).await?,
        None => {
            // Serve the local datastore on a private port for the duration.
            let store = open_store(cfg)?;
            let app = commentscope_service::router(store, &ServiceOptions::default());
            let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await?;
            let addr = listener.local_addr()?;
            let server = tokio::spawn(commentscope_service::serve(listener, app));
            let result = commentscope_client::write_bundle(&Client::new(format!("http://{addr}")), out).await;
            server.abort();
            result?
        }
    };
    println!(
        "report snapshot={} files={} not_computed={} out={}",
        summary.snapshot_id,
        summary.files.len(),
        summary.not_computed.len(),
        out.display()
    );
    Ok(())
}

fn error_code(e: &anyhow::Error) -> String {
    if let Some(e) = e.downcast_ref::<Error>() {
        return e.code().to_string();
    }
    if let Some(e) = e.downcast_ref::<SourceError>() {
        return e.code().to_string();
    }
    if let Some(e) = e.downcast_ref::<ClientError>() {
        return e.code().to_string();
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return "io_error".into();
    }
    "error".into()
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest { channel, fixture, full } => ingest(&cfg, channel, fixture, full).await,
        Command::Analyze { stages, seed } => analyze(&cfg, stages, seed).await,
        Command::Serve { host, port, static_dir } => serve(&cfg, &host, port, static_dir).await,
        Command::Report { out, api } => report(&cfg, &out, api).await,
        Command::Config { action: ConfigAction::Validate } => {
            cfg.validate()?;
            println!("config ok");
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("COMMENTSCOPE_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: code={} message={}", error_code(&e), message);
            ExitCode::FAILURE
        }
    }
}
