use thiserror::Error;

use crate::domain::Query;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("trajectory `{traj_id}` references unknown POI {poi_id}")]
    UnknownPoi { traj_id: String, poi_id: i64 },

    #[error("need at least {needed} examples, found {found}")]
    TooFewExamples { needed: usize, found: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("trajectory does not conform to query {0}")]
    NonConforming(Query),

    #[error("no path of length {length} exists over {n_pois} POIs")]
    Infeasible { length: usize, n_pois: usize },

    #[error("exact path engine supports at most {max} POIs, got {n_pois}")]
    TooLarge { n_pois: usize, max: usize },

    #[error("search exhausted for query {query} after {expansions} expansions")]
    SearchExhausted { query: Query, expansions: usize },

    #[error("regularisation constant must be positive, got {0}")]
    NonPositiveC(f64),

    #[error("no ranked POI pairs in the training data")]
    NoPairs,

    #[error("feature metadata does not match the POI table: {0}")]
    FeatureMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
