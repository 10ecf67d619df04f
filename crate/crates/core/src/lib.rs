//! Structured prediction of POI trajectories: ingestion of check-in logs,
//! feature construction, chain decoding with list Viterbi and loop-free
//! path search, structured SVM training, and evaluation.

pub mod decode;
pub mod domain;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod learn;
pub mod pathopt;

pub use domain::{ChainScores, Dataset, GroundTruthSet, Model, Poi, PoiId, PoiTable, Query, Trajectory, Variant};
pub use error::{Error, Result};
