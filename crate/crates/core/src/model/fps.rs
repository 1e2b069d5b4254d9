//! Frame-rate conditioning: turning the scalar rate into a latent signal
//! and integrating it with the token stream.

use crate::error::ModelError;
use crate::tape::{concat_rows, GradTape, Var};
use crate::tensor::Tensor;

use super::tokens::{TokenBatch, TokenMeta};
use super::weights::FpsVars;
use super::{FpsVariant, ModelConfig};

/// Conditioning produced by [`encode_fps`]; shape depends on the variant.
pub enum FpsConditioning<'t> {
    None,
    /// Latent embedding E_r for summation, token append, or codebook lookup.
    Vector(Var<'t>),
    /// Per-channel scale and shift.
    Film { scale: Var<'t>, shift: Var<'t> },
}

impl FpsConditioning<'_> {
    fn kind(&self) -> &'static str {
        match self {
            FpsConditioning::None => "none",
            FpsConditioning::Vector(_) => "vector",
            FpsConditioning::Film { .. } => "film",
        }
    }
}

/// Converts the scalar rate `r` (frames/second) into conditioning.
///
/// The scalar is normalized by `fps_reference` before the MLP so inputs stay
/// O(1). The codebook looks up the nearest trained key, with no
/// interpolation for unseen rates.
pub fn encode_fps<'t>(
    tape: &'t GradTape,
    vars: &FpsVars<'t>,
    r: f64,
    cfg: &ModelConfig,
) -> Result<FpsConditioning<'t>, ModelError> {
    if r <= 0.0 {
        return Err(ModelError::BadFps(r));
    }
    let d = cfg.d_model;
    Ok(match vars {
        FpsVars::None => FpsConditioning::None,
        FpsVars::Mlp(mlp) => {
            let x = tape.leaf(Tensor::from_vec(&[1, 1], vec![r / cfg.fps_reference]));
            FpsConditioning::Vector(mlp.forward(&x).reshape(&[d]))
        }
        FpsVars::Film { trunk, scale, shift } => {
            let x = tape.leaf(Tensor::from_vec(&[1, 1], vec![r / cfg.fps_reference]));
            let h = trunk.forward(&x).gelu();
            let gamma = scale.forward(&h).add_const(&Tensor::full(&[1, d], 1.0));
            let beta = shift.forward(&h);
            FpsConditioning::Film {
                scale: gamma.reshape(&[d]),
                shift: beta.reshape(&[d]),
            }
        }
        FpsVars::Codebook { keys, table } => {
            let idx = nearest_key(keys, r);
            FpsConditioning::Vector(table.gather_rows(&[idx]).reshape(&[d]))
        }
    })
}

/// Index of the key closest to `r`; ties resolve to the first key.
pub fn nearest_key(keys: &[f64], r: f64) -> usize {
    assert!(!keys.is_empty(), "codebook has no keys");
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &k) in keys.iter().enumerate() {
        let d = (r - k).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Integrates conditioning with the token stream per the config's variant.
pub fn apply_fps<'t>(
    batch: TokenBatch<'t>,
    cond: FpsConditioning<'t>,
    cfg: &ModelConfig,
) -> Result<TokenBatch<'t>, ModelError> {
    let mismatch = |cond: &FpsConditioning<'_>| ModelError::VariantMismatch {
        cond: cond.kind().to_string(),
        cfg: cfg.fps_variant.as_str().to_string(),
    };
    match (cfg.fps_variant, cond) {
        (FpsVariant::None, FpsConditioning::None) => Ok(batch),
        (FpsVariant::MlpSum | FpsVariant::Codebook, FpsConditioning::Vector(e_r)) => {
            let mut b = batch;
            b.tokens = b.tokens.add_row(&e_r);
            Ok(b)
        }
        (FpsVariant::Film, FpsConditioning::Film { scale, shift }) => {
            let mut b = batch;
            b.tokens = b.tokens.mul_row(&scale).add_row(&shift);
            Ok(b)
        }
        (FpsVariant::MlpToken, FpsConditioning::Vector(e_r)) => {
            let mut b = batch;
            let d = cfg.d_model;
            b.tokens = concat_rows(&[b.tokens.clone(), e_r.reshape(&[1, d])]);
            b.fps_token = Some(b.meta.len());
            b.meta.push(TokenMeta {
                agent: None,
                cue: None,
                time: None,
                element: None,
            });
            b.key_mask.push(true);
            Ok(b)
        }
        (_, cond) => Err(mismatch(&cond)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::weights::{FpsWeights, ModelWeights};
    use crate::nn::Lifter;

    fn cfg_with(variant: FpsVariant) -> ModelConfig {
        let mut cfg = ModelConfig::with_dims(16, 4);
        cfg.fps_variant = variant;
        cfg
    }

    #[test]
    fn zero_mlp_yields_zero_embedding_for_every_rate() {
        let cfg = cfg_with(FpsVariant::MlpSum);
        let mut w = ModelWeights::init(&cfg);
        w.fps.zero_out();
        for r in [1.0, 2.5, 5.0, 25.0, 60.0] {
            let tape = GradTape::new();
            let mut l = Lifter::new(&tape);
            let vars = w.lift(&mut l);
            match encode_fps(&tape, &vars.fps, r, &cfg).unwrap() {
                FpsConditioning::Vector(v) => {
                    assert!(v.value().data().iter().all(|&x| x == 0.0))
                }
                _ => panic!("expected vector conditioning"),
            }
        }
    }

    #[test]
    fn film_at_init_is_identity() {
        let cfg = cfg_with(FpsVariant::Film);
        let w = ModelWeights::init(&cfg);
        let tape = GradTape::new();
        let mut l = Lifter::new(&tape);
        let vars = w.lift(&mut l);
        match encode_fps(&tape, &vars.fps, 2.5, &cfg).unwrap() {
            FpsConditioning::Film { scale, shift } => {
                assert!(scale.value().data().iter().all(|&x| x == 1.0));
                assert!(shift.value().data().iter().all(|&x| x == 0.0));
            }
            _ => panic!("expected film conditioning"),
        }
    }

    #[test]
    fn codebook_unseen_rate_takes_nearest_key() {
        assert_eq!(nearest_key(&[5.0, 2.5], 1.0), 1);
        assert_eq!(nearest_key(&[5.0, 2.5], 4.0), 0);
        // Ties resolve to the first key.
        assert_eq!(nearest_key(&[5.0, 2.5], 3.75), 0);

        let cfg = cfg_with(FpsVariant::Codebook);
        let w = ModelWeights::init(&cfg);
        let tape = GradTape::new();
        let mut l = Lifter::new(&tape);
        let vars = w.lift(&mut l);
        let at = |r: f64| match encode_fps(&tape, &vars.fps, r, &cfg).unwrap() {
            FpsConditioning::Vector(v) => v.value().clone(),
            _ => panic!("expected vector"),
        };
        assert!(at(1.0).bit_eq(&at(2.5)));
        assert!(!at(1.0).bit_eq(&at(5.0)));
        if let FpsWeights::Codebook { table, .. } = &w.fps {
            let row: Vec<f64> = table.data()[16..32].to_vec();
            assert_eq!(at(1.0).data(), &row[..]);
        } else {
            panic!("codebook weights expected");
        }
    }

    #[test]
    fn negative_rate_is_a_domain_error() {
        let cfg = cfg_with(FpsVariant::MlpSum);
        let w = ModelWeights::init(&cfg);
        let tape = GradTape::new();
        let mut l = Lifter::new(&tape);
        let vars = w.lift(&mut l);
        assert!(matches!(
            encode_fps(&tape, &vars.fps, 0.0, &cfg),
            Err(ModelError::BadFps(_))
        ));
    }

    #[test]
    fn variant_mismatch_is_a_contract_error() {
        let cfg_none = cfg_with(FpsVariant::None);
        let cfg_sum = cfg_with(FpsVariant::MlpSum);
        let w = ModelWeights::init(&cfg_sum);
        let sample = crate::model::tokens::tests::toy_sample(1, 4, false, 0);
        let tape = GradTape::new();
        let mut l = Lifter::new(&tape);
        let vars = w.lift(&mut l);
        let batch = crate::model::embed_cues(&tape, &vars, &sample, &cfg_sum).unwrap();
        let cond = encode_fps(&tape, &vars.fps, 5.0, &cfg_sum).unwrap();
        assert!(matches!(
            apply_fps(batch, cond, &cfg_none),
            Err(ModelError::VariantMismatch { .. })
        ));
    }

    #[test]
    fn token_variant_adds_exactly_one_always_valid_token() {
        let cfg = cfg_with(FpsVariant::MlpToken);
        let w = ModelWeights::init(&cfg);
        let sample = crate::model::tokens::tests::toy_sample(2, 4, false, 0);
        let tape = GradTape::new();
        let mut l = Lifter::new(&tape);
        let vars = w.lift(&mut l);
        let batch = crate::model::embed_cues(&tape, &vars, &sample, &cfg).unwrap();
        let before = batch.n_tokens();
        let cond = encode_fps(&tape, &vars.fps, 5.0, &cfg).unwrap();
        let after = apply_fps(batch, cond, &cfg).unwrap();
        assert_eq!(after.n_tokens(), before + 1);
        assert_eq!(after.fps_token, Some(before));
        assert!(after.key_mask[before]);
        assert_eq!(after.meta[before].agent, None);
    }

    #[test]
    fn none_variant_is_bit_identical() {
        let cfg = cfg_with(FpsVariant::None);
        let w = ModelWeights::init(&cfg);
        let sample = crate::model::tokens::tests::toy_sample(2, 4, false, 0);
        let tape = GradTape::new();
        let mut l = Lifter::new(&tape);
        let vars = w.lift(&mut l);
        let batch = crate::model::embed_cues(&tape, &vars, &sample, &cfg).unwrap();
        let before = batch.tokens.value().clone();
        let cond = encode_fps(&tape, &vars.fps, 5.0, &cfg).unwrap();
        let after = apply_fps(batch, cond, &cfg).unwrap();
        assert!(after.tokens.value().bit_eq(&before));
    }
}
