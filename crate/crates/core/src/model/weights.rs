//! All learnable parameters, their initialization, and the lifted mirror
//! used inside a recorded forward pass.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FpsVariant, ModelConfig};
use crate::data::CueKind;
use crate::nn::{
    join, normal_init, DecoderStackV, DecoderStackW, EncoderStackV, EncoderStackW, LayerNormV,
    LayerNormW, Lifter, LinearW, MhaV, MhaW, MlpV, MlpW, ParamTree,
};
use crate::tape::Var;
use crate::tensor::Tensor;

const EMB_STD: f64 = 0.02;

/// Frame-rate encoder parameters; the variant decides the shape.
#[derive(Clone, Debug)]
pub enum FpsWeights {
    None,
    /// Shared by `mlp_sum` and `mlp_token`.
    Mlp(MlpW),
    /// Trunk + two heads; heads are zero-initialized so scale = 1, shift = 0.
    Film {
        trunk: LinearW,
        scale: LinearW,
        shift: LinearW,
    },
    Codebook {
        keys: Vec<f64>,
        table: Tensor,
    },
}

impl FpsWeights {
    fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        match cfg.fps_variant {
            FpsVariant::None => FpsWeights::None,
            FpsVariant::MlpSum | FpsVariant::MlpToken => {
                FpsWeights::Mlp(MlpW::init(rng, 1, d, d))
            }
            FpsVariant::Film => FpsWeights::Film {
                trunk: LinearW::init(rng, 1, d),
                scale: LinearW::zeros(d, d),
                shift: LinearW::zeros(d, d),
            },
            FpsVariant::Codebook => FpsWeights::Codebook {
                keys: cfg.codebook_fps.clone(),
                table: normal_init(rng, &[cfg.codebook_fps.len(), d], EMB_STD),
            },
        }
    }

    /// Zeroes the rate encoder so conditioning is exactly the identity
    /// (used for the identity-at-init checks; FiLM is already identity).
    pub fn zero_out(&mut self) {
        match self {
            FpsWeights::Mlp(mlp) => mlp.zero_out(),
            FpsWeights::Codebook { table, .. } => *table = Tensor::zeros(table.shape()),
            FpsWeights::None | FpsWeights::Film { .. } => {}
        }
    }
}

impl ParamTree for FpsWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match self {
            FpsWeights::None => {}
            FpsWeights::Mlp(mlp) => mlp.visit(&join(prefix, "mlp"), f),
            FpsWeights::Film { trunk, scale, shift } => {
                trunk.visit(&join(prefix, "trunk"), f);
                scale.visit(&join(prefix, "scale"), f);
                shift.visit(&join(prefix, "shift"), f);
            }
            FpsWeights::Codebook { table, .. } => f(&join(prefix, "table"), table),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            FpsWeights::None => {}
            FpsWeights::Mlp(mlp) => mlp.visit_mut(&join(prefix, "mlp"), f),
            FpsWeights::Film { trunk, scale, shift } => {
                trunk.visit_mut(&join(prefix, "trunk"), f);
                scale.visit_mut(&join(prefix, "scale"), f);
                shift.visit_mut(&join(prefix, "shift"), f);
            }
            FpsWeights::Codebook { table, .. } => f(&join(prefix, "table"), table),
        }
    }
}

pub enum FpsVars<'t> {
    None,
    Mlp(MlpV<'t>),
    Film {
        trunk: crate::nn::LinearV<'t>,
        scale: crate::nn::LinearV<'t>,
        shift: crate::nn::LinearV<'t>,
    },
    Codebook {
        keys: Vec<f64>,
        table: Var<'t>,
    },
}

/// Learned queries, decoder, and the ego-centric cross-attention layer.
#[derive(Clone, Debug)]
pub struct PidWeights {
    /// One learned query per predicted mode.
    pub ego_queries: Tensor,
    pub ctx_queries: Tensor,
    pub decoder: DecoderStackW,
    pub ca: Option<CaWeights>,
}

/// Ego-centric cross-attention; the output projection starts at zero so the
/// residual path is the identity at init.
#[derive(Clone, Debug)]
pub struct CaWeights {
    pub ln_q: LayerNormW,
    pub ln_kv: LayerNormW,
    pub attn: MhaW,
}

impl ParamTree for PidWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "ego_queries"), &self.ego_queries);
        f(&join(prefix, "ctx_queries"), &self.ctx_queries);
        self.decoder.visit(&join(prefix, "decoder"), f);
        if let Some(ca) = &self.ca {
            ca.ln_q.visit(&join(prefix, "ca.ln_q"), f);
            ca.ln_kv.visit(&join(prefix, "ca.ln_kv"), f);
            ca.attn.visit(&join(prefix, "ca.attn"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "ego_queries"), &mut self.ego_queries);
        f(&join(prefix, "ctx_queries"), &mut self.ctx_queries);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
        if let Some(ca) = &mut self.ca {
            ca.ln_q.visit_mut(&join(prefix, "ca.ln_q"), f);
            ca.ln_kv.visit_mut(&join(prefix, "ca.ln_kv"), f);
            ca.attn.visit_mut(&join(prefix, "ca.attn"), f);
        }
    }
}

pub struct PidVars<'t> {
    pub ego_queries: Var<'t>,
    pub ctx_queries: Var<'t>,
    pub decoder: DecoderStackV<'t>,
    pub ca: Option<CaVars<'t>>,
}

pub struct CaVars<'t> {
    pub ln_q: LayerNormV<'t>,
    pub ln_kv: LayerNormV<'t>,
    pub attn: MhaV<'t>,
}

/// Pooling head used when the decoder is ablated away: encoder ego tokens
/// are mean-pooled and spread into K modes by learned mode embeddings.
#[derive(Clone, Debug)]
pub struct PoolWeights {
    pub mode_emb: Tensor,
}

impl ParamTree for PoolWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "mode_emb"), &self.mode_emb);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "mode_emb"), &mut self.mode_emb);
    }
}

/// All learnable parameters of the model.
#[derive(Clone, Debug)]
pub struct ModelWeights {
    pub cue_mlps: BTreeMap<CueKind, MlpW>,
    /// Two-class identity embedding: row 0 ego, row 1 neighbor.
    pub ident_emb: Tensor,
    /// Per-keypoint-type embedding for pose cues, when any is enabled.
    pub keypoint_emb: Option<Tensor>,
    pub fps: FpsWeights,
    pub cme: EncoderStackW,
    pub hie: Option<EncoderStackW>,
    pub pid: Option<PidWeights>,
    pub pool: Option<PoolWeights>,
    /// Maps each mode vector to max_t_pred per-frame displacements.
    pub head: MlpW,
}

impl ModelWeights {
    pub fn init(cfg: &ModelConfig) -> Self {
        cfg.validate().expect("config validated before init");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.d_model;
        let cue_mlps: BTreeMap<CueKind, MlpW> = cfg
            .cues_enabled
            .iter()
            .map(|&kind| {
                let (_, f) = cfg.cue_dims(kind);
                (kind, MlpW::init(&mut rng, f, d, d))
            })
            .collect();
        let ident_emb = normal_init(&mut rng, &[2, d], EMB_STD);
        let max_kp = cfg
            .cues_enabled
            .iter()
            .filter(|k| matches!(k, CueKind::P3 | CueKind::P2))
            .map(|&k| cfg.cue_dims(k).0)
            .max();
        let keypoint_emb = max_kp.map(|e| normal_init(&mut rng, &[e, d], EMB_STD));
        let fps = FpsWeights::init(&mut rng, cfg);
        let cme = EncoderStackW::init(&mut rng, d, cfg.n_heads, cfg.cme_layers);
        let hie = cfg
            .use_hie
            .then(|| EncoderStackW::init(&mut rng, d, cfg.n_heads, cfg.hie_layers));
        let (pid, pool) = if cfg.use_decoder {
            let ego_queries = normal_init(&mut rng, &[cfg.n_modes, d], EMB_STD);
            let ctx_queries = normal_init(&mut rng, &[cfg.n_ctx_queries, d], EMB_STD);
            let decoder = DecoderStackW::init(&mut rng, d, cfg.n_heads, cfg.pid_decoder_layers);
            let ca = cfg.use_ca.then(|| CaWeights {
                ln_q: LayerNormW::init(d),
                ln_kv: LayerNormW::init(d),
                attn: MhaW::init_zero_out(&mut rng, d, cfg.n_heads),
            });
            (
                Some(PidWeights {
                    ego_queries,
                    ctx_queries,
                    decoder,
                    ca,
                }),
                None,
            )
        } else {
            (
                None,
                Some(PoolWeights {
                    mode_emb: normal_init(&mut rng, &[cfg.n_modes, d], EMB_STD),
                }),
            )
        };
        let head = MlpW::init(&mut rng, d, d, cfg.max_t_pred * 2);
        Self {
            cue_mlps,
            ident_emb,
            keypoint_emb,
            fps,
            cme,
            hie,
            pid,
            pool,
            head,
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>) -> ModelVars<'t> {
        ModelVars {
            cue_mlps: self
                .cue_mlps
                .iter()
                .map(|(kind, mlp)| (*kind, mlp.lift(l, &format!("cue_mlp.{kind}"))))
                .collect(),
            ident_emb: l.lift("ident_emb", &self.ident_emb),
            keypoint_emb: self.keypoint_emb.as_ref().map(|t| l.lift("keypoint_emb", t)),
            fps: match &self.fps {
                FpsWeights::None => FpsVars::None,
                FpsWeights::Mlp(mlp) => FpsVars::Mlp(mlp.lift(l, "fps.mlp")),
                FpsWeights::Film { trunk, scale, shift } => FpsVars::Film {
                    trunk: trunk.lift(l, "fps.trunk"),
                    scale: scale.lift(l, "fps.scale"),
                    shift: shift.lift(l, "fps.shift"),
                },
                FpsWeights::Codebook { keys, table } => FpsVars::Codebook {
                    keys: keys.clone(),
                    table: l.lift("fps.table", table),
                },
            },
            cme: self.cme.lift(l, "cme"),
            hie: self.hie.as_ref().map(|h| h.lift(l, "hie")),
            pid: self.pid.as_ref().map(|p| PidVars {
                ego_queries: l.lift("pid.ego_queries", &p.ego_queries),
                ctx_queries: l.lift("pid.ctx_queries", &p.ctx_queries),
                decoder: p.decoder.lift(l, "pid.decoder"),
                ca: p.ca.as_ref().map(|ca| CaVars {
                    ln_q: ca.ln_q.lift(l, "pid.ca.ln_q"),
                    ln_kv: ca.ln_kv.lift(l, "pid.ca.ln_kv"),
                    attn: ca.attn.lift(l, "pid.ca.attn"),
                }),
            }),
            pool: self.pool.as_ref().map(|p| PoolVars {
                mode_emb: l.lift("pool.mode_emb", &p.mode_emb),
            }),
            head: self.head.lift(l, "head"),
        }
    }

    /// Flat parameter list in visit order (for the optimizer).
    pub fn flat(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.push(t.clone()));
        out
    }

    /// Writes a flat parameter list (in visit order) back into the tree.
    pub fn assign_flat(&mut self, flat: &[Tensor]) {
        let mut idx = 0;
        self.visit_mut("", &mut |_, t| {
            *t = flat[idx].clone();
            idx += 1;
        });
        assert_eq!(idx, flat.len(), "flat parameter count mismatch");
    }
}

impl ParamTree for ModelWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (kind, mlp) in &self.cue_mlps {
            mlp.visit(&join(prefix, &format!("cue_mlp.{kind}")), f);
        }
        f(&join(prefix, "ident_emb"), &self.ident_emb);
        if let Some(kp) = &self.keypoint_emb {
            f(&join(prefix, "keypoint_emb"), kp);
        }
        self.fps.visit(&join(prefix, "fps"), f);
        self.cme.visit(&join(prefix, "cme"), f);
        if let Some(hie) = &self.hie {
            hie.visit(&join(prefix, "hie"), f);
        }
        if let Some(pid) = &self.pid {
            pid.visit(&join(prefix, "pid"), f);
        }
        if let Some(pool) = &self.pool {
            pool.visit(&join(prefix, "pool"), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (kind, mlp) in &mut self.cue_mlps {
            mlp.visit_mut(&join(prefix, &format!("cue_mlp.{kind}")), f);
        }
        f(&join(prefix, "ident_emb"), &mut self.ident_emb);
        if let Some(kp) = &mut self.keypoint_emb {
            f(&join(prefix, "keypoint_emb"), kp);
        }
        self.fps.visit_mut(&join(prefix, "fps"), f);
        self.cme.visit_mut(&join(prefix, "cme"), f);
        if let Some(hie) = &mut self.hie {
            hie.visit_mut(&join(prefix, "hie"), f);
        }
        if let Some(pid) = &mut self.pid {
            pid.visit_mut(&join(prefix, "pid"), f);
        }
        if let Some(pool) = &mut self.pool {
            pool.visit_mut(&join(prefix, "pool"), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

pub struct ModelVars<'t> {
    pub cue_mlps: BTreeMap<CueKind, MlpV<'t>>,
    pub ident_emb: Var<'t>,
    pub keypoint_emb: Option<Var<'t>>,
    pub fps: FpsVars<'t>,
    pub cme: EncoderStackV<'t>,
    pub hie: Option<EncoderStackV<'t>>,
    pub pid: Option<PidVars<'t>>,
    pub pool: Option<PoolVars<'t>>,
    pub head: MlpV<'t>,
}

pub struct PoolVars<'t> {
    pub mode_emb: Var<'t>,
}
