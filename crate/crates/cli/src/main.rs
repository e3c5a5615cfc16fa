//! `gridops` command line.
//!
//! Exit status: 0 on success, 1 when the command ran but the domain said no
//! (invalid configuration, failed refresh, bad script), 2 on usage errors.

use std::collections::BTreeSet;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use gridops_api::{Service, ServiceSettings};
use gridops_core::{Engine, EngineError, Format, RefreshCause, RefreshOutcome, SystemClock};
use gridops_sim::{run_scenario, ScenarioScript};

#[derive(Debug, Parser)]
#[command(name = "gridops", version, about = "Materialized operational views and the operator desk")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the HTTP API until interrupted.
    Serve {
        /// Service file (.toml) or view configuration (.xml).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
    },
    /// Check a configuration without starting anything.
    ValidateConfig { file: PathBuf },
    /// Refresh one view and print the outcome.
    Refresh {
        view: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a path query against a view.
    Query {
        view: String,
        query: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "xml")]
        format: Format,
    },
    /// Deterministic scenarios on virtual time.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioCommand {
    /// Run a script and print its event log.
    Run {
        file: PathBuf,
        /// One JSON object per line instead of text.
        #[arg(long)]
        json: bool,
    },
}

/// Error already carrying its code in the message.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(message)) => {
            eprintln!("{message}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Serve { config, port, bind } => serve(&config, SocketAddr::new(bind, port)),
        Command::ValidateConfig { file } => validate(&file),
        Command::Refresh { view, config } => {
            let service = one_shot(&config)?;
            let outcome = refresh_with_upstream(&service.engine, &view)?;
            println!("{}", serde_json::json!({ "view": view, "result": outcome }));
            match outcome {
                RefreshOutcome::Failed { error } => Err(Failure(format!("{}: {}", error.class.code(), error.message))),
                _ => Ok(()),
            }
        }
        Command::Query {
            view,
            query,
            config,
            format,
        } => {
            let service = one_shot(&config)?;
            if service.engine.get_view(&view).is_err() {
                refresh_with_upstream(&service.engine, &view)?;
            }
            let doc = service.engine.query_view(&view, &query)?;
            match format {
                Format::Xml => println!("{}", doc.to_xml()),
                Format::Json => println!("{}", doc.to_json()),
            }
            Ok(())
        }
        Command::Scenario {
            command: ScenarioCommand::Run { file, json },
        } => {
            let script = ScenarioScript::load(&file)?;
            let (_, log) = run_scenario(&script)?;
            for entry in log {
                if json {
                    println!("{}", serde_json::to_string(&entry)?);
                } else {
                    println!("{entry}");
                }
            }
            Ok(())
        }
    }
}

fn serve(config: &Path, addr: SocketAddr) -> Result<(), Failure> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let service = Arc::new(Service::load(config, Arc::new(SystemClock)).map_err(|e| Failure(format!("{}: {e}", e.code())))?);
    if service.identities.is_empty() {
        eprintln!("warning: no operators configured; every request will be refused");
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(gridops_api::serve(service, addr))?;
    Ok(())
}

fn validate(file: &Path) -> Result<(), Failure> {
    let mut settings = ServiceSettings::load(file).map_err(|e| match e {
        gridops_api::ServiceError::Config { .. } => Failure(format!("{}: {e}", e.code())),
        other => Failure(other.to_string()),
    })?;
    settings.views.validate()?;
    println!("OK: {}: {} views", file.display(), settings.views.views.len());
    Ok(())
}

fn one_shot(config: &Path) -> Result<Service, Failure> {
    Service::load(config, Arc::new(SystemClock)).map_err(|e| match e {
        gridops_api::ServiceError::Config { .. } => Failure(format!("{}: {e}", e.code())),
        other => Failure(other.to_string()),
    })
}

/// A one-shot process starts with empty caches, so upstream views without
/// servable content are refreshed first, dependencies before dependents.
fn refresh_with_upstream(engine: &Engine, view: &str) -> Result<RefreshOutcome, EngineError> {
    let config = engine.config();
    let target = config.view(view).ok_or_else(|| EngineError::ViewNotFound(view.to_string()))?;
    let mut done = BTreeSet::new();
    for dep in &target.dependencies {
        prepare(engine, &config, dep, &mut done);
    }
    engine.refresh_view(view, RefreshCause::Manual)
}

fn prepare(engine: &Engine, config: &gridops_core::ConfigSet, view: &str, done: &mut BTreeSet<String>) {
    if !done.insert(view.to_string()) || engine.get_view(view).is_ok() {
        return;
    }
    if let Some(cfg) = config.view(view) {
        for dep in &cfg.dependencies {
            prepare(engine, config, dep, done);
        }
    }
    let _ = engine.refresh_view(view, RefreshCause::Manual);
}
