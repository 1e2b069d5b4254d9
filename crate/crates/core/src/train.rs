//! Winner-takes-all loss and the mixed-setup training loop.
//!
//! Batches draw samples from weighted sources, so one batch may mix
//! different (fps, t_obs, t_pred) setups; every sample carries its own rate
//! into the frame-rate encoder and is processed on its own tape, with
//! gradients reduced in a fixed slot order. Per-sample mask randomness is
//! seeded from (plan seed, epoch, batch, slot), so results are bit-identical
//! across runs and worker counts.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{normalize, SampleWindow};
use crate::error::TrainError;
use crate::metrics::{MetricsAccum, SetupMetrics};
use crate::model::forward::{extract_prediction, forward_traced};
use crate::model::{ModelConfig, ModelWeights, Phase, Prediction};
use crate::nn::Lifter;
use crate::optim::{adam_step, AdamState, LrSchedule};
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;
use crate::threads;

/// One named sample pool with a mixture weight.
#[derive(Debug, Clone)]
pub struct TrainSource {
    pub name: String,
    pub weight: f64,
    pub samples: Vec<SampleWindow>,
}

impl TrainSource {
    pub fn new(name: &str, samples: Vec<SampleWindow>) -> Self {
        Self {
            name: name.to_string(),
            weight: 1.0,
            samples,
        }
    }
}

/// Training plan: epochs, batching, phase, seed, and the dataset mixture.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub phase: Phase,
    pub seed: u64,
    /// Validation metrics every this many epochs (and at the final epoch).
    pub eval_cadence: usize,
    /// Held-out tail fraction of each source.
    pub val_fraction: f64,
    /// Epochs already completed before this run (checkpoint resume); shifts
    /// the learning-rate schedule and the per-epoch randomness.
    pub epoch_offset: usize,
    pub sources: Vec<TrainSource>,
}

impl TrainPlan {
    pub fn new(sources: Vec<TrainSource>) -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            phase: Phase::Pretrain,
            seed: 0,
            eval_cadence: 1,
            val_fraction: 0.1,
            epoch_offset: 0,
            sources,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossPoint {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub curve: Vec<LossPoint>,
    /// (epoch, metrics over the held-out validation pool).
    pub val_metrics: Vec<(usize, SetupMetrics)>,
}

/// Mean squared Euclidean error over valid frames, minimized over modes.
/// The loss is in squared meters.
pub fn wta_l2_loss(
    pred: &Prediction,
    gt: &[[f64; 2]],
    horizon_mask: &[bool],
) -> Result<f64, TrainError> {
    if pred.modes.is_empty() {
        return Err(TrainError::Invalid("prediction has no modes".into()));
    }
    let n_valid = horizon_mask.iter().filter(|&&m| m).count();
    if n_valid == 0 {
        return Err(TrainError::Invalid("empty valid horizon".into()));
    }
    let mut best = f64::INFINITY;
    for mode in &pred.modes {
        if mode.len() != gt.len() || gt.len() != horizon_mask.len() {
            return Err(TrainError::Invalid(format!(
                "loss horizon mismatch: pred {}, gt {}, mask {}",
                mode.len(),
                gt.len(),
                horizon_mask.len()
            )));
        }
        let mut sum = 0.0;
        for t in 0..gt.len() {
            if horizon_mask[t] {
                let dx = mode[t][0] - gt[t][0];
                let dy = mode[t][1] - gt[t][1];
                sum += dx * dx + dy * dy;
            }
        }
        best = best.min(sum / n_valid as f64);
    }
    Ok(best)
}

/// Traced winner-takes-all loss over a [K, max_t_pred, 2] rollout; frames at
/// `t >= t_pred` are masked out. Gradients flow through the winning mode.
pub fn wta_l2_loss_traced<'t>(
    positions: &Var<'t>,
    gt: &[[f64; 2]],
    t_pred: usize,
) -> Result<Var<'t>, TrainError> {
    let k = positions.shape()[0];
    let max_t = positions.shape()[1];
    if t_pred == 0 || t_pred > max_t || gt.len() < t_pred {
        return Err(TrainError::Invalid("empty or oversized loss horizon".into()));
    }
    let mut neg_gt = vec![0.0; max_t * 2];
    let mut mask = vec![0.0; max_t * 2];
    for t in 0..t_pred {
        neg_gt[2 * t] = -gt[t][0];
        neg_gt[2 * t + 1] = -gt[t][1];
        mask[2 * t] = 1.0;
        mask[2 * t + 1] = 1.0;
    }
    let neg_gt = Tensor::from_vec(&[max_t, 2], neg_gt);
    let mask = Tensor::from_vec(&[max_t, 2], mask);

    let mut best: Option<Var<'t>> = None;
    let mut best_val = f64::INFINITY;
    for m in 0..k {
        let diff = positions
            .slice_axis(0, m, 1)
            .reshape(&[max_t, 2])
            .add_const(&neg_gt)
            .mul_const(&mask);
        let loss_m = diff.mul(&diff).sum().scale(1.0 / t_pred as f64);
        let v = loss_m.value().item();
        if v < best_val {
            best_val = v;
            best = Some(loss_m);
        }
    }
    Ok(best.expect("k >= 1"))
}

fn mix(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ c.wrapping_mul(0x1656_67b1_9e37_79f9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Gradient of the WTA loss for one normalized sample.
fn sample_grad(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    sample: &SampleWindow,
    phase: Phase,
    rng_seed: u64,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let tape = GradTape::new();
    let mut lifter = Lifter::new(&tape);
    let vars = weights.lift(&mut lifter);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let out = forward_traced(&tape, &vars, sample, cfg, phase, &mut rng)
        .map_err(|e| TrainError::Invalid(e.to_string()))?;
    let gt: Vec<[f64; 2]> = (0..sample.t_pred)
        .map(|t| {
            let p = sample.future_xy(t);
            [p[0] as f64, p[1] as f64]
        })
        .collect();
    let loss = wta_l2_loss_traced(&out.positions, &gt, sample.t_pred)?;
    let grads = tape
        .backward(&loss)
        .map_err(|e| TrainError::Invalid(e.to_string()))?;
    Ok((loss.value().item(), lifter.grads(&grads)))
}

/// Eval-phase prediction for a normalized sample.
fn predict_normalized(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    sample: &SampleWindow,
) -> Result<Prediction, TrainError> {
    let tape = GradTape::new();
    let mut lifter = Lifter::new(&tape);
    let vars = weights.lift(&mut lifter);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward_traced(&tape, &vars, sample, cfg, Phase::Eval, &mut rng)
        .map_err(|e| TrainError::Invalid(e.to_string()))?;
    Ok(extract_prediction(out.positions.value(), sample.t_pred))
}

/// Loss and metrics of a normalized sample pool under eval-phase forward.
pub(crate) fn eval_pool(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    pool: &[SampleWindow],
) -> Result<(f64, SetupMetrics), TrainError> {
    let results: Vec<Result<(f64, MetricsAccum), TrainError>> = threads::run(|| {
        pool.par_iter()
            .map(|sample| {
                let pred = predict_normalized(weights, cfg, sample)?;
                let gt: Vec<[f64; 2]> = (0..sample.t_pred)
                    .map(|t| {
                        let p = sample.future_xy(t);
                        [p[0] as f64, p[1] as f64]
                    })
                    .collect();
                let loss = wta_l2_loss(&pred, &gt, &vec![true; gt.len()])?;
                let mut acc = MetricsAccum::default();
                acc.push(&pred.modes, &gt);
                Ok((loss, acc))
            })
            .collect()
    });
    let mut loss_sum = 0.0;
    let mut accum = MetricsAccum::default();
    let mut n = 0usize;
    for r in results {
        let (loss, acc) = r?;
        loss_sum += loss;
        accum.merge(&acc);
        n += 1;
    }
    if n == 0 {
        return Err(TrainError::Invalid("empty evaluation pool".into()));
    }
    Ok((loss_sum / n as f64, accum.finish()))
}

struct SourceQueue {
    order: Vec<usize>,
    cursor: usize,
    refills: u64,
    source_idx: u64,
    seed: u64,
}

impl SourceQueue {
    fn new(len: usize, source_idx: u64, seed: u64) -> Self {
        let mut q = Self {
            order: (0..len).collect(),
            cursor: 0,
            refills: 0,
            source_idx,
            seed,
        };
        q.reshuffle();
        q
    }

    fn reshuffle(&mut self) {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix(self.seed, 0xD1, self.source_idx, self.refills));
        self.order.shuffle(&mut rng);
        self.refills += 1;
        self.cursor = 0;
    }

    fn next(&mut self) -> usize {
        if self.cursor >= self.order.len() {
            self.reshuffle();
        }
        let idx = self.order[self.cursor];
        self.cursor += 1;
        idx
    }
}

/// Trains from freshly initialized weights.
pub fn train(plan: &TrainPlan, cfg: &ModelConfig) -> Result<TrainOutcome, TrainError> {
    train_from(plan, cfg, None)
}

/// Trains from the given weights (fine-tuning) or a fresh init.
pub fn train_from(
    plan: &TrainPlan,
    cfg: &ModelConfig,
    init: Option<ModelWeights>,
) -> Result<TrainOutcome, TrainError> {
    if plan.sources.is_empty() || plan.sources.iter().all(|s| s.samples.is_empty()) {
        return Err(TrainError::EmptyMixture);
    }
    if plan.sources.iter().any(|s| s.weight <= 0.0) {
        return Err(TrainError::Invalid("source weights must be positive".into()));
    }
    if plan.batch_size == 0 {
        return Err(TrainError::Invalid("batch_size must be >= 1".into()));
    }
    cfg.validate().map_err(|e| TrainError::Invalid(e.to_string()))?;

    // Normalize once; split a validation tail off each source.
    let mut train_pools: Vec<Vec<SampleWindow>> = Vec::new();
    let mut val_pool: Vec<SampleWindow> = Vec::new();
    for source in &plan.sources {
        let normalized: Vec<SampleWindow> = source.samples.iter().map(normalize).collect();
        let n = normalized.len();
        let n_val = if plan.val_fraction > 0.0 && n > 1 {
            ((n as f64 * plan.val_fraction).ceil() as usize).min(n - 1)
        } else {
            0
        };
        let (train_part, val_part) = normalized.split_at(n - n_val);
        train_pools.push(train_part.to_vec());
        val_pool.extend_from_slice(val_part);
    }
    if train_pools.iter().all(|p| p.is_empty()) {
        return Err(TrainError::EmptyMixture);
    }

    let mut weights = init.unwrap_or_else(|| ModelWeights::init(cfg));
    let mut curve = Vec::new();
    let mut val_metrics = Vec::new();
    if plan.epochs == 0 {
        return Ok(TrainOutcome {
            weights,
            curve,
            val_metrics,
        });
    }

    let mut flat = weights.flat();
    let total_epochs = plan.epoch_offset + plan.epochs;
    let mut adam = AdamState::new(&flat, LrSchedule::new(total_epochs));
    let eligible: Vec<(usize, f64)> = plan
        .sources
        .iter()
        .enumerate()
        .filter(|(i, _)| !train_pools[*i].is_empty())
        .map(|(i, s)| (i, s.weight))
        .collect();
    let total_weight: f64 = eligible.iter().map(|(_, w)| w).sum();
    let epoch_size: usize = train_pools.iter().map(|p| p.len()).sum();
    let n_batches = epoch_size.div_ceil(plan.batch_size);
    let mut queues: Vec<SourceQueue> = train_pools
        .iter()
        .enumerate()
        .map(|(i, p)| SourceQueue::new(p.len(), i as u64, plan.seed))
        .collect();

    for epoch in plan.epoch_offset..total_epochs {
        let lr = adam.schedule.at_epoch(epoch);
        let mut epoch_loss = 0.0;
        for batch in 0..n_batches {
            let mut draw_rng =
                ChaCha8Rng::seed_from_u64(mix(plan.seed, 0xBA, epoch as u64, batch as u64));
            let remaining = epoch_size - batch * plan.batch_size;
            let batch_len = plan.batch_size.min(remaining);
            let mut slots: Vec<(usize, usize, u64)> = Vec::with_capacity(batch_len);
            for slot in 0..batch_len {
                let mut pick = draw_rng.gen_range(0.0..total_weight);
                let mut source = eligible.last().expect("non-empty mixture").0;
                for &(i, w) in &eligible {
                    if pick < w {
                        source = i;
                        break;
                    }
                    pick -= w;
                }
                let sample_idx = queues[source].next();
                let mask_seed = mix(plan.seed, epoch as u64, batch as u64, slot as u64);
                slots.push((source, sample_idx, mask_seed));
            }

            // Per-sample gradients in parallel; reduction order is fixed by
            // chunk boundaries, independent of worker count.
            const CHUNK: usize = 8;
            let chunk_results: Vec<Result<(f64, Vec<Tensor>), TrainError>> = threads::run(|| {
                slots
                    .par_chunks(CHUNK)
                    .map(|chunk| {
                        let mut loss_sum = 0.0;
                        let mut grads: Option<Vec<Tensor>> = None;
                        for &(source, idx, seed) in chunk {
                            let sample = &train_pools[source][idx];
                            let (loss, g) = sample_grad(&weights, cfg, sample, plan.phase, seed)?;
                            loss_sum += loss;
                            grads = Some(match grads {
                                None => g,
                                Some(acc) => acc
                                    .into_iter()
                                    .zip(g)
                                    .map(|(a, b)| a.add(&b))
                                    .collect(),
                            });
                        }
                        Ok((loss_sum, grads.expect("non-empty chunk")))
                    })
                    .collect()
            });

            let mut loss_sum = 0.0;
            let mut grad_sum: Option<Vec<Tensor>> = None;
            for r in chunk_results {
                let (l, g) = r?;
                loss_sum += l;
                grad_sum = Some(match grad_sum {
                    None => g,
                    Some(acc) => acc.into_iter().zip(g).map(|(a, b)| a.add(&b)).collect(),
                });
            }
            let batch_loss = loss_sum / batch_len as f64;
            if !batch_loss.is_finite() {
                return Err(TrainError::NanLoss { epoch, batch });
            }
            let grads: Vec<Tensor> = grad_sum
                .expect("non-empty batch")
                .into_iter()
                .map(|g| g.scale(1.0 / batch_len as f64))
                .collect();
            adam_step(&mut adam, &mut flat, &grads, lr)
                .map_err(|e| TrainError::Invalid(e.to_string()))?;
            weights.assign_flat(&flat);
            epoch_loss += batch_loss;
        }
        curve.push(LossPoint {
            epoch,
            split: "train".into(),
            loss: epoch_loss / n_batches as f64,
        });
        let last = epoch + 1 == total_epochs;
        if !val_pool.is_empty() && (last || (epoch + 1) % plan.eval_cadence.max(1) == 0) {
            let (val_loss, metrics) = eval_pool(&weights, cfg, &val_pool)?;
            curve.push(LossPoint {
                epoch,
                split: "val".into(),
                loss: val_loss,
            });
            val_metrics.push((epoch, metrics));
        }
    }

    Ok(TrainOutcome {
        weights,
        curve,
        val_metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::extract_windows;
    use crate::synth::{generate, GenKind, GenSpec};

    fn toy_prediction(offsets: &[f64]) -> Prediction {
        Prediction {
            modes: offsets
                .iter()
                .map(|&o| vec![[o, 0.0], [1.0 + o, 0.0]])
                .collect(),
        }
    }

    #[test]
    fn exact_mode_gives_zero_loss() {
        let gt = vec![[0.0, 0.0], [1.0, 0.0]];
        let pred = toy_prediction(&[3.0, 0.0]);
        let loss = wta_l2_loss(&pred, &gt, &[true, true]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn constant_offset_single_mode_loss_is_one() {
        // K = 1 with a constant 1 m offset on every frame: squared meters = 1.
        let gt = vec![[0.0, 0.0], [1.0, 0.0]];
        let pred = Prediction {
            modes: vec![vec![[0.0, 1.0], [1.0, 1.0]]],
        };
        let loss = wta_l2_loss(&pred, &gt, &[true, true]).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn min_over_k_bounded_by_mean_and_monotone_in_k() {
        let gt = vec![[0.0, 0.0], [1.0, 0.0]];
        let mut offsets = vec![0.7, -1.3];
        let mask = [true, true];
        let mut prev = wta_l2_loss(&toy_prediction(&offsets), &gt, &mask).unwrap();
        let mean: f64 = toy_prediction(&offsets)
            .modes
            .iter()
            .map(|m| {
                m.iter()
                    .zip(&gt)
                    .map(|(p, g)| (p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2))
                    .sum::<f64>()
                    / 2.0
            })
            .sum::<f64>()
            / 2.0;
        assert!(prev <= mean);
        // Appending modes can only lower the minimum.
        for extra in [0.5, 0.05, 2.0, -0.01] {
            offsets.push(extra);
            let now = wta_l2_loss(&toy_prediction(&offsets), &gt, &mask).unwrap();
            assert!(now <= prev + 1e-15);
            prev = now;
        }
    }

    #[test]
    fn empty_horizon_is_a_contract_error() {
        let pred = toy_prediction(&[0.0]);
        let gt = vec![[0.0, 0.0], [1.0, 0.0]];
        assert!(wta_l2_loss(&pred, &gt, &[false, false]).is_err());
    }

    #[test]
    fn traced_loss_matches_plain_loss() {
        use crate::tape::GradTape;
        let tape = GradTape::new();
        let positions = tape.leaf(Tensor::from_vec(
            &[2, 3, 2],
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, -0.1, 0.0, 0.2, 0.1, 0.9, -0.4],
        ));
        let gt = vec![[0.0, 0.25], [0.3, 0.3]];
        let traced = wta_l2_loss_traced(&positions, &gt, 2).unwrap();
        let pred = extract_prediction(positions.value(), 2);
        let plain = wta_l2_loss(&pred, &gt, &[true, true]).unwrap();
        assert!((traced.value().item() - plain).abs() < 1e-15);
    }

    fn tiny_corpus(n_scenes: usize, seed: u64) -> Vec<SampleWindow> {
        let mut spec = GenSpec::new(GenKind::ConstVelocity);
        spec.n_scenes = n_scenes;
        spec.n_agents = 1;
        spec.duration_s = 2.0;
        spec.base_fps = 5.0;
        spec.seed = seed;
        generate(&spec)
            .iter()
            .flat_map(|s| extract_windows(s, 4, 3, 10))
            .collect()
    }

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::with_dims(16, 1);
        cfg.cme_layers = 1;
        cfg.hie_layers = 1;
        cfg.pid_decoder_layers = 1;
        cfg.n_modes = 2;
        cfg.n_ctx_queries = 2;
        cfg.max_t_obs = 4;
        cfg.max_t_pred = 3;
        cfg.cues_enabled = [crate::data::CueKind::T].into_iter().collect();
        cfg
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let cfg = tiny_cfg();
        let mut plan = TrainPlan::new(vec![TrainSource::new("cv", tiny_corpus(8, 0))]);
        plan.epochs = 0;
        let outcome = train(&plan, &cfg).unwrap();
        let init = ModelWeights::init(&cfg);
        for (a, b) in outcome.weights.flat().iter().zip(init.flat()) {
            assert!(a.bit_eq(&b));
        }
        assert!(outcome.curve.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_cfg();
        let mut plan = TrainPlan::new(vec![TrainSource::new("cv", tiny_corpus(8, 0))]);
        plan.epochs = 2;
        plan.batch_size = 4;
        plan.seed = 3;
        let a = train(&plan, &cfg).unwrap();
        let b = train(&plan, &cfg).unwrap();
        assert_eq!(a.curve.len(), b.curve.len());
        for (x, y) in a.curve.iter().zip(&b.curve) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        }
        for (x, y) in a.weights.flat().iter().zip(b.weights.flat()) {
            assert!(x.bit_eq(&y));
        }
    }

    #[test]
    fn loss_decreases_on_learnable_data() {
        let cfg = tiny_cfg();
        let mut plan = TrainPlan::new(vec![TrainSource::new("cv", tiny_corpus(40, 1))]);
        plan.epochs = 4;
        plan.batch_size = 8;
        plan.phase = Phase::Finetune;
        let outcome = train(&plan, &cfg).unwrap();
        let train_losses: Vec<f64> = outcome
            .curve
            .iter()
            .filter(|p| p.split == "train")
            .map(|p| p.loss)
            .collect();
        assert!(train_losses.last().unwrap() < train_losses.first().unwrap());
        assert!(!outcome.val_metrics.is_empty());
    }

    #[test]
    fn empty_mixture_is_an_error() {
        let cfg = tiny_cfg();
        let plan = TrainPlan::new(vec![]);
        assert!(matches!(train(&plan, &cfg), Err(TrainError::EmptyMixture)));
    }
}

#[cfg(test)]
mod eval_consistency_tests {
    use super::*;
    use crate::data::extract_windows;
    use crate::protocol::zero_shot_eval;
    use crate::synth::{generate, GenKind, GenSpec};

    #[test]
    fn eval_on_val_pool_reproduces_logged_val_metrics() {
        let mut spec = GenSpec::new(GenKind::ConstVelocity);
        spec.n_scenes = 20;
        spec.n_agents = 1;
        spec.base_fps = 5.0;
        spec.duration_s = 2.0;
        spec.seed = 9;
        let samples: Vec<SampleWindow> = generate(&spec)
            .iter()
            .flat_map(|s| extract_windows(s, 4, 3, 10))
            .collect();
        let mut cfg = ModelConfig::with_dims(16, 1);
        cfg.cme_layers = 1;
        cfg.hie_layers = 1;
        cfg.pid_decoder_layers = 1;
        cfg.n_modes = 2;
        cfg.n_ctx_queries = 2;
        cfg.max_t_obs = 4;
        cfg.max_t_pred = 3;
        cfg.cues_enabled = [crate::data::CueKind::T].into_iter().collect();

        let mut plan = TrainPlan::new(vec![TrainSource::new("cv", samples.clone())]);
        plan.epochs = 1;
        plan.batch_size = 8;
        plan.phase = Phase::Finetune;
        plan.val_fraction = 0.25;
        let outcome = train(&plan, &cfg).unwrap();
        let (_, logged) = outcome.val_metrics.last().cloned().unwrap();

        // The validation pool is the tail of the source.
        let n_val = (samples.len() as f64 * 0.25).ceil() as usize;
        let val_pool = &samples[samples.len() - n_val..];
        let report =
            zero_shot_eval(&outcome.weights, &cfg, val_pool, "consistency", "val", 0).unwrap();
        assert_eq!(report.metrics, logged);
    }
}
