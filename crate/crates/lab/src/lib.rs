//! Config-driven experiment runner for `dispersive-core`: builds the space and operator,
//! dispatches one experiment kind and persists CSV tables plus a JSON summary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ExperimentConfig, KINDS};
pub use dispersive_core::{fit_decay_exponent, DecayFit};
pub use error::LabError;
pub use report::{Check, Outcome, RunReport};

/// Environment fallback for the worker count.
pub const WORKERS_ENV: &str = "DISPERSIVE_LAB_WORKERS";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, LabError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Parse(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}

/// Flag, then environment, then config, then available parallelism.
pub fn resolve_workers(cfg: &ExperimentConfig, flag: Option<usize>) -> Result<usize, LabError> {
    if let Some(w) = flag {
        return Ok(w.max(1));
    }
    if let Ok(s) = std::env::var(WORKERS_ENV) {
        return s.trim().parse::<usize>().map(|w| w.max(1)).map_err(|_| {
            LabError::Validation(format!("{WORKERS_ENV}: `{s}` is not a worker count"))
        });
    }
    Ok(cfg.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    }))
}

pub fn execute(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport, LabError> {
    let start = Instant::now();
    let workers = resolve_workers(cfg, opts.workers)?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LabError::Internal(e.to_string()))?;
    let space = cfg.build_space()?;
    let op = cfg.build_operator(&space)?;
    let outcome = experiments::run(cfg, &op, seed, &pool)?;
    Ok(RunReport::new(
        &cfg.kind,
        &cfg.source,
        seed,
        outcome,
        start.elapsed().as_secs_f64(),
    ))
}

/// Runs and writes the report; returns the report and the written paths.
pub fn run(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(RunReport, Vec<PathBuf>), LabError> {
    let report = execute(cfg, opts)?;
    let dir = opts
        .out
        .clone()
        .or_else(|| {
            cfg.output
                .as_ref()
                .and_then(|o| o.dir.clone())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from("lab-out"));
    let prefix = cfg
        .output
        .as_ref()
        .and_then(|o| o.prefix.clone())
        .unwrap_or_else(|| cfg.kind.clone());
    let written = report.persist(&dir, &prefix)?;
    Ok((report, written))
}
