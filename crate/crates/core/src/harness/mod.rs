//! Monte Carlo campaigns, empirical-versus-analytic comparison, file export
//! and the command-line front end.

mod campaign;
mod cli;
mod export;
mod stats;

use std::path::PathBuf;

use thiserror::Error;

use crate::decoder::DecoderError;
use crate::ensemble::EnsembleError;
use crate::evolution::EvolutionError;
use crate::pathsim::PathError;

pub use campaign::{
    compare, run_campaign, success_rate, Campaign, CampaignResult, ComparisonReport,
    EmpiricalTrajectory, PointOutput, QuantityDeviation, RatePoint, Verdict, DEFAULT_TOLERANCE,
    LOW_N,
};
pub use cli::cli_main;
pub use export::{
    analytic_csv, csv_body, empirical_csv, results_json, version_line, write_campaign,
};
pub use stats::{trial_seeds, MeanVar, TrialSeeds};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "METPEEL_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error("invalid campaign: {0}")]
    BadCampaign(String),
    #[error("{THREADS_ENV} must be a positive integer, got {0:?}")]
    BadThreads(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not build the worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// A worker pool sized by `METPEEL_THREADS` when set, else by rayon's default.
pub fn worker_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => builder = builder.num_threads(n),
            _ => return Err(HarnessError::BadThreads(v)),
        }
    }
    Ok(builder.build()?)
}
