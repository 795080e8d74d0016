//! A desk-scale laboratory for long-document neural ranking.
//!
//! The crate covers the full loop: subword tokenization, document chunking,
//! a small f64 transformer encoder with pluggable dense/sparse attention
//! built on an in-crate reverse-mode autodiff engine, the family of
//! passage-aggregation scoring heads, pairwise training, ranking metrics
//! with multi-seed significance testing, and relevant-passage position
//! analysis with a first-chunk ceiling estimator.

pub mod aggregators;
mod blocks;
pub mod chunking;
pub mod config;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod data;
pub mod position_analysis;
pub mod ranker;
pub mod training;
pub mod synthetic;
pub mod tensor;
pub mod tokenize;

pub use aggregators::{AggregatorConfig, AggregatorKind, ClsSet};
pub use chunking::{Chunk, ChunkScheme, ChunkedInput};
pub use config::ExperimentConfig;
pub use encoder::{AttentionPattern, EncoderConfig, Phase};
pub use error::{Error, Result};
pub use evaluation::{Judgments, Metric, MetricReport, RankedList};
pub use position_analysis::{MatchResult, PositionHistogram};
pub use ranker::{ChunkingConfig, Ranker};
pub use synthetic::SyntheticSpec;
pub use tensor::{Params, Tensor};
pub use tokenize::{TokenSeq, Vocab};
pub use training::{CandidateList, TrainConfig};
