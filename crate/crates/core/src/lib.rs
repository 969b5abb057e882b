//! Mining, storage and backtesting of hypercube "risk patterns" over a
//! county-by-feature data matrix.
//!
//! A pattern is a conjunction of one to three interval constraints on
//! distinct features. The counties inside it must show a target (for example
//! a death rate) that is significantly shifted relative to the counties
//! outside it. The pipeline is:
//!
//! 1. [`dataset`] loads the matrix, time series and schema.
//! 2. [`discretizer`] turns every feature into interval items.
//! 3. [`miner`] enumerates frequent item combinations with FP-growth and
//!    keeps the significant ones (Mann-Whitney or chi-square, BH-adjusted).
//! 4. [`patternstore`] persists the result and answers dashboard queries.
//! 5. [`evaluator`] backtests how fast pattern members grow afterwards.

pub mod dataset;
pub mod discretizer;
pub mod evaluator;
pub mod fixture;
pub mod miner;
pub mod par;
pub mod patternstore;
pub mod stats;
pub mod synth;

pub use dataset::{
    load_matrix, load_timeseries, CountyKey, DataMatrix, DatasetError, FeatureKind, FeatureSpec, GlobalStats,
    SchemaConfig, TargetTimeSeries,
};
pub use miner::{mine, mine_with, Direction, MiningConfig, MiningDirection, Pattern};
pub use par::Execution;
pub use patternstore::{PatternSet, PatternStore, StoreError};
