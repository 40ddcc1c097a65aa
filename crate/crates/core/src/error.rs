use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate camera frame: {0}")]
    Frame(String),

    #[error("depth out of domain: {0}")]
    Domain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    /// The queried point lies on geometry that cannot move (static body or a
    /// revolute axis).
    #[error("no part motion at point: {0}")]
    NoMotion(String),

    #[error("shape contract violated: {0}")]
    Shape(String),

    #[error("normal estimation failed at pixel ({row}, {col})")]
    Normal { row: usize, col: usize },

    #[error("degenerate 6D rotation: {0}")]
    Rotation(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("data collection stopped after {attempts} attempts with {positives}/{want_pos} positives and {negatives}/{want_neg} negatives")]
    Collection {
        attempts: usize,
        positives: usize,
        negatives: usize,
        want_pos: usize,
        want_neg: usize,
    },

    #[error("non-finite loss at epoch {epoch}, sample {sample}: {detail}")]
    NonFinite {
        epoch: usize,
        sample: usize,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown ablation `{0}`")]
    UnknownAblation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png encoding: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
