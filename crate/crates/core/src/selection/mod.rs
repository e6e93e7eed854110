//! Candidate selection: answer-location distributions, inverse cardinality
//! weighting over DBSCAN clusters, and the combiner that picks one answer per
//! (document, question).

mod dbl;
mod dbscan;
mod icw;
mod select;

pub use dbl::{
    build_distribution, dbl_weight, location_list, segment_of, segment_sizes, LocationDistribution,
    SEGMENTS,
};
pub use dbscan::{dbscan, ClusterAssignment, DbscanParams, NOISE};
pub use icw::icw_weights;
pub use select::{select, Combiner, SelectionResult};

use crate::inference::BackendError;

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("no labelled document contributes to category {0}")]
    NoContributingDocuments(usize),
    #[error("word range {start}..{end} outside document of {words} words")]
    RangeOutsideDocument {
        start: usize,
        end: usize,
        words: usize,
    },
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid DBSCAN parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Embedding(#[from] BackendError),
}
