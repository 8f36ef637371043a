//! Financial correlation networks: yearly all-pairs correlations, threshold
//! pruning, communities and betweenness ranking.

pub mod cache;
pub mod community;
pub mod graph;
pub mod stats;

use thiserror::Error;

use crate::ingest::InstrumentId;

pub use cache::{
    build_cache_from, build_yearly_cache, correlation_distribution, CorrelationDistribution,
    CorrelationEdge, Measure, YearlyCorrelationCache,
};
pub use community::{communities, Community, DEFAULT_MAX_SIZE};
pub use graph::{betweenness, connected_components, prune_graph, CorrGraph, ThresholdConfig};
pub use stats::{pearson, spearman};

#[derive(Debug, Error)]
pub enum CorrError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no observations for year {0}")]
    EmptyYear(i32),
    #[error("unknown instrument {0}")]
    UnknownInstrument(InstrumentId),
    #[error("cache format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
