use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Grasp point coincides with a goal so the projection direction is undefined.
    #[error("degenerate goal direction: grasp {grasp:?} is within {eps} m of goal {goal}")]
    DegenerateDirection { grasp: [f64; 2], goal: usize, eps: f64 },

    #[error("invalid trial: {0}")]
    InvalidTrial(String),

    #[error("invalid goal layout: {0}")]
    InvalidLayout(String),

    #[error("action begins at or before the beep (t0 = {t0}, beep = {t_beep}); no idle phase")]
    EmptyIdle { t_beep: f64, t0: f64 },

    #[error("window [{start}, {end}] is outside the signal of length {len}")]
    WindowOutOfRange { start: isize, end: usize, len: usize },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("feature fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("format version mismatch in {what}: expected {expected}, found {found}")]
    VersionMismatch { what: String, expected: String, found: String },

    #[error("model variant mismatch: expected {expected}, found {found}")]
    VariantMismatch { expected: String, found: String },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("missing input {0}")]
    MissingInput(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { what: what.into(), detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
