//! Cross-disease transfer experiments for weekly disease forecasting.
//!
//! The crate trains method-of-analogues and quantile-boosted-tree
//! forecasters on progressively wider training scopes (one data stream,
//! one disease, one mode of transmission, everything) and scores them in a
//! rolling-origin backtest so the effect of adding other diseases' data can
//! be measured as an MAE ratio against single-stream training.

pub mod corpus;
pub mod eval;
pub mod features;
pub mod gbt;
pub mod moa;
pub mod preprocess;
pub mod stats;
pub mod synthetic;
pub mod uncertainty;
pub mod week;

pub use corpus::{load_corpus, write_corpus, Corpus, ObservationSeries, ScopeKind, StreamKey, Taxonomy, TrainingScope};
pub use week::Week;
