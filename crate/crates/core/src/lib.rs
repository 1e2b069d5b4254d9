//! Frame-rate-aware multi-agent trajectory forecasting at desk scale.
//!
//! The crate is organized around six subsystems:
//!
//! - [`tensor`] / [`tape`] / [`nn`] / [`optim`]: a minimal dense f64 tensor
//!   kernel with reverse-mode differentiation, the transformer building
//!   blocks, and an Adam optimizer.
//! - [`data`]: a frame-rate- and horizon-agnostic scene container with
//!   NDJSON ingestion, integer decimation, window extraction, ego-centric
//!   normalization, and a binary sample cache.
//! - [`synth`]: deterministic synthetic scene generators and the builder
//!   for the cross-setup zero-shot benchmark.
//! - [`model`]: the forecaster itself — cue embeddings, frame-rate
//!   conditioning variants, the cross-modality encoder, decoupled
//!   interaction modules, spatial-temporal masking, and the K-mode head.
//! - [`train`] / [`metrics`] / [`protocol`]: the winner-takes-all loss,
//!   displacement metrics, the mixed-setup training loop, and the
//!   zero-shot / few-shot / ablation / two-frame protocols.
//! - [`ckpt`]: weight checkpoints with config digests.

pub mod ckpt;
pub mod data;
pub mod model;
pub mod protocol;
pub mod synth;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod threads;
pub mod train;

pub use data::{AgentTrack, CueArray, CueKind, SampleWindow, SceneRecord};
pub use error::{DataError, ModelError, ShapeError, TrainError};
pub use metrics::{ade, fde, min_ade_k, min_fde_k, MetricsReport, SetupMetrics};
pub use tape::{GradTape, Gradients, Var};
pub use model::{ModelConfig, ModelWeights, Phase, Prediction};
pub use synth::{BenchmarkSetup, GenKind, GenSpec};
pub use tensor::Tensor;
pub use train::{TrainOutcome, TrainPlan, TrainSource};
