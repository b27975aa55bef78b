//! Stage runner for the unwrapping and ink-detection pipeline.

pub mod config;
pub mod manifest;
pub mod stages;
pub mod workflow;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ConfigError, PipelineConfig};
pub use manifest::{Manifest, StageRecord};
pub use stages::{Runner, Stage};

/// Overrides the default output root when `--out` is absent.
pub const OUT_ENV: &str = "UNROLL_OUT";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` failed: {source:#}")]
    Stage {
        stage: &'static str,
        source: anyhow::Error,
    },
    #[error("{0:#}")]
    Setup(anyhow::Error),
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Stage(Stage),
    Pipeline,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    /// Output root; falls back to `$UNROLL_OUT`, then `out`.
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub manifest: Manifest,
}

/// Output directory name of a config: the first 16 hex digits of its hash.
pub fn run_dir_name(cfg: &PipelineConfig) -> String {
    cfg.hash()[..16].to_string()
}

pub fn output_root(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Loads the config and runs `command` on a dedicated thread pool.
pub fn run(command: Command, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let cfg = PipelineConfig::load(&opts.config)?;
    run_config(command, cfg, opts.out.as_deref(), opts.threads)
}

pub fn run_config(command: Command, cfg: PipelineConfig, out: Option<&Path>, threads: Option<usize>) -> Result<RunSummary, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| RunError::Setup(e.into()))?;
    let run_dir = output_root(out).join(run_dir_name(&cfg));
    pool.install(|| {
        let mut runner = Runner::open(cfg, run_dir.clone()).map_err(RunError::Setup)?;
        let stages: Vec<Stage> = match command {
            Command::Stage(s) => vec![s],
            Command::Pipeline => Stage::ALL.to_vec(),
        };
        for s in stages {
            runner.run(s).map_err(|source| RunError::Stage { stage: s.name(), source })?;
        }
        Ok(RunSummary {
            run_dir,
            manifest: runner.manifest,
        })
    })
}
