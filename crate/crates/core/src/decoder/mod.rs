//! Finite-length sampling and peeling of Tanner graphs from an ensemble.

mod graph;
mod peel;

use thiserror::Error;

use crate::ensemble::EnsembleError;
use crate::evolution::EvolutionError;

pub use graph::{
    check_stopping_set, node_counts, sample_graph, GraphSampler, NodeCounts, SampledGraph,
};
pub use peel::{
    apply_channel, peel, replay_one_step, DecodeOutcome, DecoderState, Snapshot, StepDelta,
    StepEvent, DEFAULT_RESOLUTION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(
        "node counts cannot be balanced; socket deficit (VN - CN) per edge type: {deficits:?}"
    )]
    Unbalanceable { deficits: Vec<i64> },
    #[error("block length {n} leaves no variable nodes")]
    TooSmall { n: usize },
    #[error("invalid residual state: {0}")]
    BadState(String),
}
