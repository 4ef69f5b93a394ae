//! Dataset ingestion, feature encoding, subgroup partitioning and synthetic
//! data generation.
//!
//! Encoded vectors put the `d_cont` continuous features first (min–max scaled
//! into [0, 1]) followed by one smoothed one-hot block per categorical
//! feature. A block for level `l` out of `L` carries `1 - ε(L-1)` at `l` and
//! `ε` elsewhere, so it stays strictly inside the simplex.

mod dataset;
mod partition;
mod schema;
mod synthetic;

use thiserror::Error;

pub use dataset::{
    decode, encode, format_value, group_of, load_csv, read_csv, write_csv, Dataset, Normalizer,
    RawRow, RawValue, TRAIN_FRACTION,
};
pub(crate) use dataset::argmax;
pub use partition::{mean, partition, PartitionedData};
pub use schema::{
    CausalParent, FeatureKind, FeatureSchema, FeatureSpec, LabelSpec, Monotone, DEFAULT_SMOOTHING,
};
pub(crate) use schema::validate_edge;
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("row {row}: unknown level '{value}' for feature '{feature}'")]
    UnknownLevel { feature: String, value: String, row: usize },
    #[error("row {row}: non-numeric value '{value}' for feature '{feature}'")]
    NonNumeric { feature: String, value: String, row: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no positive instances{}", .0.map(|g| format!(" in group {g}")).unwrap_or_default())]
    NoPositives(Option<usize>),
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("value kind does not match feature '{feature}'")]
    KindMismatch { feature: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("{0}")]
    Io(String),
}
