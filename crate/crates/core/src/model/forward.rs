//! The full forward pipeline: embed -> frame-rate conditioning -> masking
//! -> cross-modality encoder -> historical interaction encoder ->
//! predictive interaction decoder -> K-mode rollout head.

use rand_chacha::ChaCha8Rng;

use crate::data::SampleWindow;
use crate::error::ModelError;
use crate::nn::Lifter;
use crate::tape::{concat_rows, GradTape, Var};
use crate::tensor::Tensor;

use super::fps::{apply_fps, encode_fps};
use super::masks::apply_masks;
use super::tokens::{embed_cues, TokenBatch};
use super::weights::{ModelVars, ModelWeights};
use super::{ModelConfig, Phase, Prediction};

/// Recorded forward pass output.
pub struct TraceOutput<'t> {
    /// Predicted positions, [K, max_t_pred, 2], normalized frame.
    pub positions: Var<'t>,
    /// Token indices dropped by stochastic masking.
    pub dropped: Vec<usize>,
    pub n_tokens: usize,
}

/// Runs the whole pipeline on a tape so a loss can differentiate through it.
/// The sample must be normalized (ego last observed position at the origin).
pub fn forward_traced<'t>(
    tape: &'t GradTape,
    vars: &ModelVars<'t>,
    sample: &SampleWindow,
    cfg: &ModelConfig,
    phase: Phase,
    rng: &mut ChaCha8Rng,
) -> Result<TraceOutput<'t>, ModelError> {
    if sample.t_pred > cfg.max_t_pred {
        return Err(ModelError::Horizon {
            requested: sample.t_pred,
            max: cfg.max_t_pred,
        });
    }
    let batch = embed_cues(tape, vars, sample, cfg)?;
    let cond = encode_fps(tape, &vars.fps, sample.fps as f64, cfg)?;
    let mut batch = apply_fps(batch, cond, cfg)?;
    let outcome = apply_masks(&mut batch, sample, cfg, phase, rng);
    let n_tokens = batch.n_tokens();

    let (mh_t, traj_mask) = cme_forward(&batch, vars, cfg);
    let (h, h_mask) = hie_forward(&mh_t, &traj_mask, vars);
    let z_star = pid_forward(tape, &h, &h_mask, sample.ego_index, sample.t_obs, vars, cfg);
    let positions = predict_positions(&z_star, vars, cfg);
    Ok(TraceOutput {
        positions,
        dropped: outcome.dropped,
        n_tokens,
    })
}

/// Cross-modality encoder: a shared stack attends over each agent's own
/// token sequence (all cues, plus the fps token when appended); outputs are
/// restricted to the trajectory positions, yielding refined motion tokens
/// per agent: [n_agents, t_obs, d]. The trajectory key mask rides along.
pub fn cme_forward<'t>(
    batch: &TokenBatch<'t>,
    vars: &ModelVars<'t>,
    cfg: &ModelConfig,
) -> (Var<'t>, Vec<bool>) {
    let n_agents = batch.n_agents;
    let t_obs = batch.t_obs;
    let d = cfg.d_model;
    let per_agent: usize = batch.cues.iter().map(|&(_, e)| t_obs * e).sum();
    let seq = per_agent + usize::from(batch.fps_token.is_some());

    // Per-agent gather: own tokens in block order (trajectory first), then
    // the shared fps token.
    let mut gather = Vec::with_capacity(n_agents * seq);
    let mut mask = Vec::with_capacity(n_agents * seq);
    for a in 0..n_agents {
        for &(kind, e) in &batch.cues {
            for t in 0..t_obs {
                for el in 0..e {
                    let idx = batch.index_of(a, kind, t, el);
                    gather.push(idx);
                    mask.push(batch.key_mask[idx]);
                }
            }
        }
        if let Some(fps_idx) = batch.fps_token {
            gather.push(fps_idx);
            mask.push(batch.key_mask[fps_idx]);
        }
    }
    let x = batch
        .tokens
        .gather_rows(&gather)
        .reshape(&[n_agents, seq, d]);
    let encoded = vars.cme.forward(&x, &mask);

    // Trajectory tokens are the first t_obs positions of each sequence.
    let mh_t = encoded.slice_axis(1, 0, t_obs);
    let traj_mask: Vec<bool> = (0..n_agents)
        .flat_map(|a| (0..t_obs).map(move |t| (a, t)))
        .map(|(a, t)| mask[a * seq + t])
        .collect();
    (mh_t, traj_mask)
}

/// Historical interaction encoder: full cross-agent, cross-time attention
/// over the flattened trajectory tokens. Disabled, it passes tokens through.
pub fn hie_forward<'t>(
    mh_t: &Var<'t>,
    traj_mask: &[bool],
    vars: &ModelVars<'t>,
) -> (Var<'t>, Vec<bool>) {
    let (n_agents, t_obs, d) = (mh_t.shape()[0], mh_t.shape()[1], mh_t.shape()[2]);
    let flat = mh_t.reshape(&[1, n_agents * t_obs, d]);
    let h = match &vars.hie {
        Some(stack) => stack.forward(&flat, traj_mask),
        None => flat,
    };
    (h, traj_mask.to_vec())
}

/// Predictive interaction decoder: learned ego and contextual queries decode
/// against the unified encoder output, then ego-centric cross-attention
/// refines the ego modes. With the decoder ablated, encoder ego tokens are
/// mean-pooled into K modes via learned mode embeddings.
pub fn pid_forward<'t>(
    tape: &'t GradTape,
    h: &Var<'t>,
    h_mask: &[bool],
    ego_index: usize,
    t_obs: usize,
    vars: &ModelVars<'t>,
    cfg: &ModelConfig,
) -> Var<'t> {
    let d = cfg.d_model;
    let k = cfg.n_modes;
    if let Some(pid) = &vars.pid {
        let n_ctx = cfg.n_ctx_queries;
        let queries = if n_ctx > 0 {
            concat_rows(&[pid.ego_queries.clone(), pid.ctx_queries.clone()])
        } else {
            pid.ego_queries.clone()
        };
        let decoded = pid
            .decoder
            .forward(&queries.reshape(&[1, k + n_ctx, d]), h, h_mask)
            .reshape(&[k + n_ctx, d]);
        let z_ego = decoded.slice_axis(0, 0, k);
        if n_ctx == 0 {
            return z_ego;
        }
        let z_ctx = decoded.slice_axis(0, k, n_ctx);
        match &pid.ca {
            Some(ca) => {
                let q = ca.ln_q.forward(&z_ego.reshape(&[1, k, d]));
                let kv = ca.ln_kv.forward(&z_ctx.reshape(&[1, n_ctx, d]));
                let refined = ca.attn.forward(&q, &kv, &vec![true; n_ctx]);
                z_ego.add(&refined.reshape(&[k, d]))
            }
            None => z_ego,
        }
    } else {
        let pool = vars.pool.as_ref().expect("pooling weights when decoder is off");
        let rows = h.shape()[1];
        let flat = h.reshape(&[rows, d]);
        let ego_rows: Vec<usize> = (0..t_obs).map(|t| ego_index * t_obs + t).collect();
        let gathered = flat.gather_rows(&ego_rows);
        let n_valid = ego_rows
            .iter()
            .filter(|&&r| h_mask[r])
            .count()
            .max(1) as f64;
        let weights: Vec<f64> = ego_rows
            .iter()
            .map(|&r| if h_mask[r] { 1.0 / n_valid } else { 0.0 })
            .collect();
        let pooled = tape
            .leaf(Tensor::from_vec(&[1, t_obs], weights))
            .matmul(&gathered)
            .reshape(&[d]);
        pool.mode_emb.add_row(&pooled)
    }
}

/// Maps each mode vector to `max_t_pred` per-frame displacements and
/// accumulates them into positions from the origin (the ego's last observed
/// position in the normalized frame).
pub fn predict_positions<'t>(z_star: &Var<'t>, vars: &ModelVars<'t>, cfg: &ModelConfig) -> Var<'t> {
    let k = z_star.shape()[0];
    vars.head
        .forward(z_star)
        .reshape(&[k, cfg.max_t_pred, 2])
        .cumsum(1)
}

/// Standalone prediction head on plain mode vectors: rolls the full horizon
/// out and truncates to `t_pred`.
pub fn predict(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    z_star: &Tensor,
    t_pred: usize,
) -> Result<Prediction, ModelError> {
    if t_pred > cfg.max_t_pred {
        return Err(ModelError::Horizon {
            requested: t_pred,
            max: cfg.max_t_pred,
        });
    }
    let tape = GradTape::new();
    let mut l = Lifter::new(&tape);
    let vars = weights.lift(&mut l);
    let z = tape.leaf(z_star.clone());
    let positions = predict_positions(&z, &vars, cfg);
    Ok(extract_prediction(positions.value(), t_pred))
}

/// Full inference pass; the sample must be normalized.
pub fn forward(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    sample: &SampleWindow,
    phase: Phase,
    rng: &mut ChaCha8Rng,
) -> Result<Prediction, ModelError> {
    let tape = GradTape::new();
    let mut l = Lifter::new(&tape);
    let vars = weights.lift(&mut l);
    let out = forward_traced(&tape, &vars, sample, cfg, phase, rng)?;
    Ok(extract_prediction(out.positions.value(), sample.t_pred))
}

/// Truncates a [K, max_t_pred, 2] rollout to the requested horizon.
pub fn extract_prediction(positions: &Tensor, t_pred: usize) -> Prediction {
    let k = positions.shape()[0];
    let max_t = positions.shape()[1];
    debug_assert!(t_pred <= max_t);
    let data = positions.data();
    let modes = (0..k)
        .map(|m| {
            (0..t_pred)
                .map(|t| {
                    let off = (m * max_t + t) * 2;
                    [data[off], data[off + 1]]
                })
                .collect()
        })
        .collect();
    Prediction { modes }
}
