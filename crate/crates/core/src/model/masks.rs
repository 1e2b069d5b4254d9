//! Spatial-temporal masking for masked pre-training.
//!
//! Pre-training drops, per agent: (i) each non-trajectory cue with
//! probability `modality`; (ii) a `spatial` fraction of pose keypoint
//! tokens per frame; (iii) a `temporal` fraction of the agent's valid
//! observed frames, always retaining its last two. Dropped tokens leave the
//! key mask, so nothing downstream can attend them. Fine-tune and eval
//! phases apply no stochastic masks.

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CueKind, SampleWindow};

use super::tokens::TokenBatch;
use super::{ModelConfig, Phase};

/// Which tokens a masking pass dropped.
#[derive(Debug, Default, Clone)]
pub struct MaskOutcome {
    pub dropped: Vec<usize>,
}

/// Applies the phase's masking policy in place; RNG consumption depends
/// only on the sample's structure, never on cue values.
pub fn apply_masks(
    batch: &mut TokenBatch<'_>,
    sample: &SampleWindow,
    cfg: &ModelConfig,
    phase: Phase,
    rng: &mut ChaCha8Rng,
) -> MaskOutcome {
    let mut outcome = MaskOutcome::default();
    if phase != Phase::Pretrain {
        return outcome;
    }
    let cues = batch.cues.clone();
    let t_obs = batch.t_obs;

    let drop = |batch: &mut TokenBatch<'_>, outcome: &mut MaskOutcome, idx: usize| {
        if batch.key_mask[idx] {
            batch.key_mask[idx] = false;
            outcome.dropped.push(idx);
        }
    };

    // (i) modality: each non-trajectory cue of each agent, independently.
    for a in 0..batch.n_agents {
        for &(kind, e) in &cues {
            if kind == CueKind::T {
                continue;
            }
            if rng.gen_bool(cfg.mask_ratios.modality) {
                for t in 0..t_obs {
                    for el in 0..e {
                        drop(batch, &mut outcome, batch.index_of(a, kind, t, el));
                    }
                }
            }
        }
    }

    // (ii) spatial: pose keypoints per (agent, frame).
    for a in 0..batch.n_agents {
        for &(kind, e) in &cues {
            if !matches!(kind, CueKind::P3 | CueKind::P2) || e == 0 {
                continue;
            }
            let k = (cfg.mask_ratios.spatial * e as f64).round() as usize;
            if k == 0 {
                continue;
            }
            for t in 0..t_obs {
                for el in index_sample(rng, e, k.min(e)) {
                    drop(batch, &mut outcome, batch.index_of(a, kind, t, el));
                }
            }
        }
    }

    // (iii) temporal: per agent over its valid frames, keeping the last two.
    for a in 0..batch.n_agents {
        let valid_ts: Vec<usize> = (0..t_obs).filter(|&t| sample.valid(a, t)).collect();
        if valid_ts.len() <= 2 {
            continue;
        }
        let maskable = &valid_ts[..valid_ts.len() - 2];
        let count = (cfg.mask_ratios.temporal * maskable.len() as f64).round() as usize;
        if count == 0 {
            continue;
        }
        for pick in index_sample(rng, maskable.len(), count.min(maskable.len())) {
            let t = maskable[pick];
            for &(kind, e) in &cues {
                for el in 0..e {
                    drop(batch, &mut outcome, batch.index_of(a, kind, t, el));
                }
            }
        }
    }

    outcome
}
