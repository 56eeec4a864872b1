use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("{reason}: tracks {}", format_ids(.track_ids))]
    Invariant { track_ids: Vec<i64>, reason: String },

    #[error("z = {z} µm is not on an emulsion plane")]
    OffPlane { z: f64 },

    #[error("need at least {needed} bricks to split, got {got}")]
    TooFewBricks { needed: usize, got: usize },

    #[error("shower origin ({x}, {y}, {z}) lies outside the brick")]
    OriginOutsideBrick { x: f64, y: f64, z: f64 },

    #[error("tracks {a} and {b} lie on the same plane")]
    SamePlane { a: i64, b: i64 },

    #[error("track {0} has no truth label")]
    Unlabeled(i64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("backward called on a tape that was not recording")]
    NotRecorded,

    #[error("{0} split is empty")]
    EmptySplit(&'static str),

    #[error("both classes must be present")]
    SingleClass,

    #[error("edge {src}->{dst} has no probability")]
    MissingProbability { src: i64, dst: i64 },

    #[error("label/truth mismatch: {0}")]
    LabelMismatch(String),

    #[error("cluster is empty")]
    EmptyCluster,

    #[error("feature {0} has zero variance")]
    DegenerateFeature(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_ids(ids: &[i64]) -> String {
    const SHOWN: usize = 20;
    let mut s = ids.iter().take(SHOWN).map(|id| id.to_string()).collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... ({} total)", ids.len()));
    }
    s
}
