//! Cue embedding: raw cue channels become d_model tokens with sinusoidal
//! positional encoding over frame order, a two-class (ego/neighbor)
//! identity embedding, and a per-keypoint-type embedding for pose cues.

use crate::data::{CueKind, SampleWindow};
use crate::error::ModelError;
use crate::nn::sinusoidal_pe;
use crate::tape::{concat_rows, GradTape, Var};
use crate::tensor::Tensor;

use super::weights::ModelVars;
use super::ModelConfig;

/// Provenance of one token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMeta {
    /// Agent slot in the sample, or None for the global fps token.
    pub agent: Option<usize>,
    pub cue: Option<CueKind>,
    pub time: Option<usize>,
    pub element: Option<usize>,
}

/// Embedded tokens plus their metadata and key mask. Tokens are laid out in
/// cue-major blocks (trajectory first), each block agent-major by
/// (agent, time, element); an fps token, when present, sits at the end.
pub struct TokenBatch<'t> {
    pub tokens: Var<'t>,
    pub meta: Vec<TokenMeta>,
    /// Tokens flagged off are never attended as keys.
    pub key_mask: Vec<bool>,
    pub n_agents: usize,
    pub t_obs: usize,
    /// Layout descriptor: present cue kinds with element counts, block order.
    pub cues: Vec<(CueKind, usize)>,
    pub fps_token: Option<usize>,
}

impl<'t> TokenBatch<'t> {
    pub fn n_tokens(&self) -> usize {
        self.meta.len()
    }

    /// Flat index of token (agent, cue, time, element).
    pub fn index_of(&self, agent: usize, cue: CueKind, t: usize, el: usize) -> usize {
        let mut offset = 0;
        for &(kind, e) in &self.cues {
            if kind == cue {
                return offset + (agent * self.t_obs + t) * e + el;
            }
            offset += self.n_agents * self.t_obs * e;
        }
        panic!("cue {cue} not present in token batch");
    }
}

/// Embeds every cue of a (normalized) sample into tokens.
pub fn embed_cues<'t>(
    tape: &'t GradTape,
    vars: &ModelVars<'t>,
    sample: &SampleWindow,
    cfg: &ModelConfig,
) -> Result<TokenBatch<'t>, ModelError> {
    for kind in sample.obs.keys() {
        if !cfg.cues_enabled.contains(kind) {
            return Err(ModelError::CueDisabled(kind.to_string()));
        }
    }
    if sample.t_obs > cfg.max_t_obs {
        return Err(ModelError::Config(format!(
            "t_obs {} exceeds max_t_obs {}",
            sample.t_obs, cfg.max_t_obs
        )));
    }
    let d = cfg.d_model;
    let t_obs = sample.t_obs;
    let n_agents = sample.n_agents;
    let pe = sinusoidal_pe(cfg.max_t_obs, d);

    let mut blocks: Vec<Var<'t>> = Vec::new();
    let mut meta = Vec::new();
    let mut key_mask = Vec::new();
    let mut cues = Vec::new();

    for (kind, win) in &sample.obs {
        let (cfg_e, cfg_f) = cfg.cue_dims(*kind);
        if win.features != cfg_f {
            return Err(ModelError::Config(format!(
                "cue {kind}: sample has {} features, config expects {cfg_f}",
                win.features
            )));
        }
        if win.elements > cfg_e {
            return Err(ModelError::Config(format!(
                "cue {kind}: sample has {} elements, config allows {cfg_e}",
                win.elements
            )));
        }
        let e = win.elements;
        let f = win.features;
        let rows = n_agents * t_obs * e;

        // Raw features, f32 storage upcast to the f64 math width.
        let raw: Vec<f64> = win.data.iter().map(|&v| v as f64).collect();
        let x = tape.leaf(Tensor::from_vec(&[rows, f], raw));
        let mlp = vars
            .cue_mlps
            .get(kind)
            .ok_or_else(|| ModelError::CueDisabled(kind.to_string()))?;
        let mut tok = mlp.forward(&x);

        // Positional encoding over the time index.
        let mut pe_block = Vec::with_capacity(rows * d);
        for a in 0..n_agents {
            for t in 0..t_obs {
                for _ in 0..e {
                    pe_block.extend_from_slice(&pe.data()[t * d..(t + 1) * d]);
                }
                let _ = a;
            }
        }
        tok = tok.add_const(&Tensor::from_vec(&[rows, d], pe_block));

        // Two-class identity embedding: ego vs neighbor.
        let ident_idx: Vec<usize> = (0..n_agents)
            .flat_map(|a| {
                std::iter::repeat(if a == sample.ego_index { 0 } else { 1 }).take(t_obs * e)
            })
            .collect();
        tok = tok.add(&vars.ident_emb.gather_rows(&ident_idx));

        // Keypoint-type embedding for pose cues.
        if matches!(kind, CueKind::P3 | CueKind::P2) {
            let kp = vars
                .keypoint_emb
                .as_ref()
                .ok_or_else(|| ModelError::Config("pose cue without keypoint embedding".into()))?;
            let kp_idx: Vec<usize> = (0..n_agents * t_obs)
                .flat_map(|_| 0..e)
                .collect();
            tok = tok.add(&kp.gather_rows(&kp_idx));
        }

        for a in 0..n_agents {
            for t in 0..t_obs {
                let valid = sample.valid(a, t);
                for el in 0..e {
                    meta.push(TokenMeta {
                        agent: Some(a),
                        cue: Some(*kind),
                        time: Some(t),
                        element: Some(el),
                    });
                    key_mask.push(valid);
                }
            }
        }
        cues.push((*kind, e));
        blocks.push(tok);
    }

    let tokens = if blocks.len() == 1 {
        blocks.pop().unwrap()
    } else {
        concat_rows(&blocks)
    };
    Ok(TokenBatch {
        tokens,
        meta,
        key_mask,
        n_agents,
        t_obs,
        cues,
        fps_token: None,
    })
}
