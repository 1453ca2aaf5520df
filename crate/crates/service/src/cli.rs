//! Command-line front end.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use paintword::engine::Engine;
use paintword::harness::{
    emit_tables, run_optimizer_comparison, run_study, write_tables, AnyReport, ComparisonSpec, StudySpec, TableFormat,
};
use paintword::{assets, Error, Result};

use crate::adapter::{self, AdapterModels, EchoGenerator};
use crate::config::ServiceConfig;
use crate::http::{router, AppState};

#[derive(Parser, Debug)]
#[command(name = "paintword", version, about = "Paint words into generated images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the HTTP edit service.
    Serve {
        #[arg(long, env = "PAINTWORD_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Batch studies and their tables.
    Study {
        #[command(subcommand)]
        command: StudyCommand,
    },
    /// Serve bundled models over the adapter protocol.
    Adapter {
        /// `unix:<path>` or `tcp:<host:port>`.
        #[arg(long)]
        listen: String,
        /// Models to expose: toy-shapes, toy-style, toy-scorer or echo-<r>.
        #[arg(long = "model", required = true)]
        models: Vec<String>,
    },
}

#[derive(Args, Debug)]
pub struct StudyIo {
    /// JSON spec; omitted fields take their defaults.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory for the report and its tables.
    #[arg(long)]
    pub out: PathBuf,
    /// Service config whose registry supplies the models.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "json,csv,md")]
    pub formats: Vec<TableFormat>,
}

#[derive(Subcommand, Debug)]
pub enum StudyCommand {
    /// Word-by-category edit study.
    Run(StudyIo),
    /// Matched-budget gradient-only vs CMA-then-gradient comparison.
    CompareOptimizers(StudyIo),
    /// Re-render a saved report.
    Render {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "md")]
        format: TableFormat,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_spec<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

pub fn run_study_command(cmd: StudyCommand) -> Result<()> {
    match cmd {
        StudyCommand::Run(io) => {
            let spec: StudySpec = read_spec(&io.spec)?;
            let registry = ServiceConfig::load(io.config.as_deref())?.build_registry()?;
            let out = run_study(&spec, &registry)?;
            let mut paths = write_tables(&AnyReport::from(out.report), &io.out, &io.formats)?;
            let timings = io.out.join("timings.json");
            std::fs::write(
                &timings,
                serde_json::to_vec_pretty(&out.timings).expect("timings serialize"),
            )?;
            paths.push(timings);
            report_written(&paths);
        }
        StudyCommand::CompareOptimizers(io) => {
            let spec: ComparisonSpec = read_spec(&io.spec)?;
            let registry = ServiceConfig::load(io.config.as_deref())?.build_registry()?;
            let report = run_optimizer_comparison(&spec, &registry)?;
            let s = &report.summary;
            println!(
                "gradient-only lower semantic loss on {}/{} seeds; CMA-then-gradient higher realism on {}/{}",
                s.grad_lower_semantic_loss, s.seeds, s.cma_higher_realism, s.seeds
            );
            report_written(&write_tables(&AnyReport::from(report), &io.out, &io.formats)?);
        }
        StudyCommand::Render { report, format, out } => {
            let bytes = emit_tables(&AnyReport::load(&report)?, format)?;
            match out {
                Some(path) => std::fs::write(path, bytes)?,
                None => {
                    use std::io::Write;
                    std::io::stdout().write_all(&bytes)?;
                }
            }
        }
    }
    Ok(())
}

/// Resolves adapter model names to bundled models.
pub fn adapter_models(names: &[String]) -> Result<AdapterModels> {
    let mut models = AdapterModels::new();
    for name in names {
        models = match name.as_str() {
            assets::TOY_SHAPES => models.with_generator(name, Arc::new(assets::toy_shapes()?)),
            assets::TOY_STYLE => models.with_generator(name, Arc::new(assets::toy_style()?)),
            assets::TOY_SCORER => models.with_scorer(name, Arc::new(paintword::scorers::ToyScorer::default())),
            other => match other.strip_prefix("echo-").and_then(|r| r.parse().ok()) {
                Some(r) => models.with_generator(name, Arc::new(EchoGenerator::new(r))),
                None => return Err(Error::UnknownModel(other.to_string())),
            },
        };
    }
    Ok(models)
}

pub async fn serve(config: Option<&Path>) -> Result<()> {
    let cfg = ServiceConfig::load(config)?;
    let registry = tokio::task::block_in_place(|| cfg.build_registry())?;
    let state = AppState::new(Engine::new(registry, cfg.engine_config()), cfg.schedule.clone());
    let listener = tokio::net::TcpListener::bind(&cfg.bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub fn main_with(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { config } => tokio::runtime::Runtime::new()?.block_on(serve(config.as_deref())),
        Command::Study { command } => run_study_command(command),
        Command::Adapter { listen, models } => adapter::serve(&listen, adapter_models(&models)?),
    }
}
