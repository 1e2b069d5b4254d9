//! Error types shared across the crate.

use thiserror::Error;

/// Tensor shape or contract violation.
#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("shape mismatch: {op} got {lhs:?} and {rhs:?}")]
    Mismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    BadLen { shape: Vec<usize>, len: usize },
    #[error("{0}")]
    Contract(String),
}

/// Data container errors: ingestion, resampling, caching.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: schema error: {msg}")]
    Schema { line: usize, msg: String },
    #[error("resample requires integer decimation (base {base_fps} -> target {target_fps})")]
    NonIntegerRatio { base_fps: f64, target_fps: f64 },
    #[error("cache file incompatible: {0}")]
    CacheIncompatible(String),
    #[error("cache file corrupt: {0}")]
    CacheCorrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Model configuration and forward-pass errors.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("d_model {d_model} not divisible by n_heads {n_heads}")]
    HeadsIndivisible { d_model: usize, n_heads: usize },
    #[error("cue {0} present in sample but disabled in config")]
    CueDisabled(String),
    #[error("frame rate must be positive, got {0}")]
    BadFps(f64),
    #[error("t_pred {requested} exceeds max_t_pred {max}")]
    Horizon { requested: usize, max: usize },
    #[error("fps conditioning variant mismatch: conditioning is {cond}, config wants {cfg}")]
    VariantMismatch { cond: String, cfg: String },
    #[error("{0}")]
    Config(String),
}

/// Training and evaluation errors.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss is not finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("empty dataset mixture")]
    EmptyMixture,
    #[error("requested {requested} samples but split holds {available}")]
    SplitTooSmall { requested: usize, available: usize },
    #[error("{0}")]
    Invalid(String),
}
