//! Long-document question answering over contracts: chunking, prompting,
//! candidate generation, candidate selection and evaluation.

pub mod chunker;
pub mod corpus;
pub mod inference;
pub mod metrics;
pub mod prompt;
pub mod scalar;
pub mod selection;
pub mod text;

pub use scalar::Scalar;

pub type Embedding = inference::EmbeddingVector<f64>;
pub type Candidate = inference::Candidate<f64>;
pub type Distribution = selection::LocationDistribution<f64>;
pub type Selection = selection::SelectionResult<f64>;
pub type Score = metrics::MetricScore<f64>;
