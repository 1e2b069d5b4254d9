//! The forecaster: cue embeddings with positional/identity/keypoint
//! encodings, five frame-rate conditioning variants, a cross-modality
//! encoder, decoupled interaction modules (historical encoder + predictive
//! decoder with ego-centric cross-attention), spatial-temporal masking, and
//! a K-mode prediction head.

mod fps;
mod masks;
mod tokens;
mod weights;
pub mod forward;

pub use fps::{apply_fps, encode_fps, FpsConditioning};
pub use masks::{apply_masks, MaskOutcome};
pub use tokens::{embed_cues, TokenBatch, TokenMeta};
pub use weights::{CaWeights, FpsWeights, ModelVars, ModelWeights, PidWeights, PoolWeights};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::CueKind;
use crate::error::ModelError;

/// Frame-rate conditioning mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpsVariant {
    /// No conditioning: the model is blind to the frame rate.
    None,
    /// MLP on the normalized scalar rate, added to every token.
    MlpSum,
    /// MLP on the normalized scalar rate, appended as one extra token.
    MlpToken,
    /// Per-channel scale/shift heads (identity at init).
    Film,
    /// Learned table keyed by training-time rates; nearest key for unseen r.
    Codebook,
}

impl FpsVariant {
    pub const ALL: [FpsVariant; 5] = [
        FpsVariant::None,
        FpsVariant::Film,
        FpsVariant::Codebook,
        FpsVariant::MlpToken,
        FpsVariant::MlpSum,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FpsVariant::None => "none",
            FpsVariant::MlpSum => "mlp_sum",
            FpsVariant::MlpToken => "mlp_token",
            FpsVariant::Film => "film",
            FpsVariant::Codebook => "codebook",
        }
    }
}

/// Stochastic masking ratios used during pre-training.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRatios {
    /// Chance of dropping each non-trajectory cue per agent.
    #[serde(default = "default_modality")]
    pub modality: f64,
    /// Fraction of pose keypoint tokens dropped per (agent, frame).
    #[serde(default = "default_spatial")]
    pub spatial: f64,
    /// Fraction of observed frames dropped, keeping each agent's last two.
    #[serde(default = "default_temporal")]
    pub temporal: f64,
}

fn default_modality() -> f64 {
    0.3
}
fn default_spatial() -> f64 {
    0.5
}
fn default_temporal() -> f64 {
    0.75
}

impl Default for MaskRatios {
    fn default() -> Self {
        Self {
            modality: 0.3,
            spatial: 0.5,
            temporal: 0.75,
        }
    }
}

/// Forward-pass phase: pre-training applies stochastic masks, the others
/// keep only genuinely missing frames masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
    Eval,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_cme_layers")]
    pub cme_layers: usize,
    #[serde(default = "default_hie_layers")]
    pub hie_layers: usize,
    #[serde(default = "default_pid_layers")]
    pub pid_decoder_layers: usize,
    /// Number of predicted modes K.
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    #[serde(default = "default_max_t_obs")]
    pub max_t_obs: usize,
    #[serde(default = "default_max_t_pred")]
    pub max_t_pred: usize,
    #[serde(default = "default_cues")]
    pub cues_enabled: BTreeSet<CueKind>,
    #[serde(default = "default_variant")]
    pub fps_variant: FpsVariant,
    /// Key set for the codebook variant (training-time rates).
    #[serde(default = "default_codebook_fps")]
    pub codebook_fps: Vec<f64>,
    #[serde(default)]
    pub mask_ratios: MaskRatios,
    #[serde(default = "default_ctx_queries")]
    pub n_ctx_queries: usize,
    #[serde(default = "default_fps_reference")]
    pub fps_reference: f64,
    /// Keypoint count for the 3D pose cue.
    #[serde(default = "default_e_pose")]
    pub e_p3: usize,
    /// Keypoint count for the 2D pose cue.
    #[serde(default = "default_e_pose")]
    pub e_p2: usize,
    /// Interaction-module switches (ablation rows disable them).
    #[serde(default = "default_true")]
    pub use_hie: bool,
    #[serde(default = "default_true")]
    pub use_decoder: bool,
    #[serde(default = "default_true")]
    pub use_ca: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_heads() -> usize {
    4
}
fn default_cme_layers() -> usize {
    6
}
fn default_hie_layers() -> usize {
    4
}
fn default_pid_layers() -> usize {
    2
}
fn default_modes() -> usize {
    20
}
fn default_max_t_obs() -> usize {
    10
}
fn default_max_t_pred() -> usize {
    20
}
fn default_cues() -> BTreeSet<CueKind> {
    [CueKind::T, CueKind::P3].into_iter().collect()
}
fn default_variant() -> FpsVariant {
    FpsVariant::MlpSum
}
fn default_codebook_fps() -> Vec<f64> {
    vec![5.0, 2.5]
}
fn default_ctx_queries() -> usize {
    8
}
fn default_fps_reference() -> f64 {
    25.0
}
fn default_e_pose() -> usize {
    17
}
fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// A config with paper-default layer counts for the given width.
    pub fn with_dims(d_model: usize, seed: u64) -> Self {
        Self {
            d_model,
            n_heads: default_heads(),
            cme_layers: default_cme_layers(),
            hie_layers: default_hie_layers(),
            pid_decoder_layers: default_pid_layers(),
            n_modes: default_modes(),
            max_t_obs: default_max_t_obs(),
            max_t_pred: default_max_t_pred(),
            cues_enabled: default_cues(),
            fps_variant: default_variant(),
            codebook_fps: default_codebook_fps(),
            mask_ratios: MaskRatios::default(),
            n_ctx_queries: default_ctx_queries(),
            fps_reference: default_fps_reference(),
            e_p3: default_e_pose(),
            e_p2: default_e_pose(),
            use_hie: true,
            use_decoder: true,
            use_ca: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::HeadsIndivisible {
                d_model: self.d_model,
                n_heads: self.n_heads,
            });
        }
        if self.n_modes < 1 {
            return Err(ModelError::Config("n_modes must be >= 1".into()));
        }
        if self.max_t_obs < 2 {
            return Err(ModelError::Config("max_t_obs must be >= 2".into()));
        }
        if self.max_t_pred < 1 {
            return Err(ModelError::Config("max_t_pred must be >= 1".into()));
        }
        if !self.cues_enabled.contains(&CueKind::T) {
            return Err(ModelError::Config("trajectory cue must stay enabled".into()));
        }
        if self.fps_variant == FpsVariant::Codebook && self.codebook_fps.is_empty() {
            return Err(ModelError::Config("codebook variant needs codebook_fps keys".into()));
        }
        if self.fps_reference <= 0.0 {
            return Err(ModelError::Config("fps_reference must be positive".into()));
        }
        if self.use_ca && !self.use_decoder {
            return Err(ModelError::Config(
                "cross-attention requires the decoder (use_ca without use_decoder)".into(),
            ));
        }
        for r in [self.mask_ratios.modality, self.mask_ratios.spatial, self.mask_ratios.temporal] {
            if !(0.0..=1.0).contains(&r) {
                return Err(ModelError::Config("mask ratios must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// (elements, features) for a cue under this config.
    pub fn cue_dims(&self, kind: CueKind) -> (usize, usize) {
        match kind {
            CueKind::T => (1, 2),
            CueKind::P3 => (self.e_p3, 3),
            CueKind::P2 => (self.e_p2, 2),
            CueKind::B3 => (1, 6),
            CueKind::B2 => (1, 4),
        }
    }
}

/// K predicted futures in the normalized (ego-centric) frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub modes: Vec<Vec<[f64; 2]>>,
}

impl Prediction {
    pub fn k(&self) -> usize {
        self.modes.len()
    }

    pub fn t_pred(&self) -> usize {
        self.modes.first().map(|m| m.len()).unwrap_or(0)
    }
}
