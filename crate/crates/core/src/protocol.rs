//! Experimental protocols: zero-shot evaluation, two-frame robustness,
//! few-shot fine-tuning, and the ablation drivers (frame-rate encoder,
//! decoupled interaction modules, temporal masking ratio).
//!
//! Ablations train each row from scratch with identical seeds and budget
//! and report one row per (label, seed); headline numbers are 3-seed
//! medians, never single seeds.

use rayon::prelude::*;

use crate::ckpt::config_digest;
use crate::data::{normalize, SampleWindow};
use crate::error::TrainError;
use crate::metrics::{median, MetricsAccum, MetricsReport, SetupMetrics};
use crate::model::forward::forward;
use crate::model::{ModelConfig, ModelWeights, Phase};
use crate::synth::CrossSetupBenchmark;
use crate::threads;
use crate::train::{train, train_from, TrainOutcome, TrainPlan, TrainSource};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Prediction for one raw sample: normalized, eval phase, truncated to the
/// sample's horizon. The returned modes live in the normalized frame.
pub fn predict_sample(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    sample: &SampleWindow,
) -> Result<crate::model::Prediction, TrainError> {
    let normalized = normalize(sample);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    forward(weights, cfg, &normalized, Phase::Eval, &mut rng)
        .map_err(|e| TrainError::Invalid(e.to_string()))
}

/// Metrics over a sample pool at its native rates and horizons; weights are
/// read-only and never updated.
pub fn zero_shot_eval(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    samples: &[SampleWindow],
    protocol: &str,
    setup: &str,
    seed: u64,
) -> Result<MetricsReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Invalid("empty evaluation set".into()));
    }
    let accums: Vec<Result<MetricsAccum, TrainError>> = threads::run(|| {
        samples
            .par_iter()
            .map(|sample| {
                let normalized = normalize(sample);
                let pred = predict_sample(weights, cfg, sample)?;
                let gt: Vec<[f64; 2]> = (0..normalized.t_pred)
                    .map(|t| {
                        let p = normalized.future_xy(t);
                        [p[0] as f64, p[1] as f64]
                    })
                    .collect();
                let mut acc = MetricsAccum::default();
                acc.push(&pred.modes, &gt);
                Ok(acc)
            })
            .collect()
    });
    let mut total = MetricsAccum::default();
    for a in accums {
        total.merge(&a?);
    }
    Ok(MetricsReport {
        protocol: protocol.to_string(),
        setup: setup.to_string(),
        metrics: total.finish(),
        config_digest: config_digest(cfg),
        seed,
    })
}

/// Keeps each agent's last two valid observed frames and invalidates the
/// rest, simulating suddenly-appearing agents.
pub fn two_frame_transform(sample: &SampleWindow) -> SampleWindow {
    let mut out = sample.clone();
    for a in 0..sample.n_agents {
        let valid_ts: Vec<usize> = (0..sample.t_obs).filter(|&t| sample.valid(a, t)).collect();
        if valid_ts.len() <= 2 {
            continue;
        }
        for &t in &valid_ts[..valid_ts.len() - 2] {
            out.obs_valid[a * sample.t_obs + t] = false;
        }
    }
    out
}

/// Full-history vs two-frame evaluation with relative degradation (%).
#[derive(Debug, Clone)]
pub struct TwoFrameReport {
    pub full: MetricsReport,
    pub two_frame: MetricsReport,
    pub ade_degradation_pct: f64,
    pub fde_degradation_pct: f64,
    pub min_ade_degradation_pct: f64,
    pub min_fde_degradation_pct: f64,
}

pub fn two_frame_eval(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    samples: &[SampleWindow],
    seed: u64,
) -> Result<TwoFrameReport, TrainError> {
    let full = zero_shot_eval(weights, cfg, samples, "two_frame", "full", seed)?;
    let reduced: Vec<SampleWindow> = samples.iter().map(two_frame_transform).collect();
    let two = zero_shot_eval(weights, cfg, &reduced, "two_frame", "two_frame", seed)?;
    let pct = |a: f64, b: f64| (b - a) / a * 100.0;
    Ok(TwoFrameReport {
        ade_degradation_pct: pct(full.metrics.ade, two.metrics.ade),
        fde_degradation_pct: pct(full.metrics.fde, two.metrics.fde),
        min_ade_degradation_pct: pct(full.metrics.min_ade_k, two.metrics.min_ade_k),
        min_fde_degradation_pct: pct(full.metrics.min_fde_k, two.metrics.min_fde_k),
        full,
        two_frame: two,
    })
}

/// Shared training budget for ablation rows and few-shot runs.
#[derive(Debug, Clone)]
pub struct Budget {
    pub epochs: usize,
    pub batch_size: usize,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub phase: Phase,
}

impl Budget {
    pub fn new(epochs: usize, batch_size: usize) -> Self {
        Self {
            epochs,
            batch_size,
            n_seeds: 3,
            base_seed: 0,
            phase: Phase::Pretrain,
        }
    }
}

/// One trained-and-evaluated ablation row.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub seed: u64,
    pub metrics: SetupMetrics,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub name: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for row in &self.rows {
            if !out.contains(&row.label) {
                out.push(row.label.clone());
            }
        }
        out
    }

    /// Per-seed values of one metric for a label.
    pub fn seed_values(&self, label: &str, pick: impl Fn(&SetupMetrics) -> f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.label == label)
            .map(|r| pick(&r.metrics))
            .collect()
    }

    pub fn median_of(&self, label: &str, pick: impl Fn(&SetupMetrics) -> f64) -> f64 {
        median(&self.seed_values(label, pick))
    }
}

fn split_by_fps(samples: &[SampleWindow]) -> Vec<TrainSource> {
    let mut rates: Vec<f32> = samples.iter().map(|s| s.fps).collect();
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rates.dedup();
    rates
        .into_iter()
        .map(|fps| {
            TrainSource::new(
                &format!("fps{fps}"),
                samples.iter().filter(|s| s.fps == fps).cloned().collect(),
            )
        })
        .collect()
}

fn train_and_eval(
    cfg: &ModelConfig,
    budget: &Budget,
    seed: u64,
    train_samples: &[SampleWindow],
    test_samples: &[SampleWindow],
    protocol: &str,
) -> Result<(TrainOutcome, SetupMetrics), TrainError> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let mut plan = TrainPlan::new(split_by_fps(train_samples));
    plan.epochs = budget.epochs;
    plan.batch_size = budget.batch_size;
    plan.phase = budget.phase;
    plan.seed = seed;
    plan.val_fraction = 0.0;
    plan.eval_cadence = budget.epochs.max(1);
    let outcome = train(&plan, &cfg)?;
    let report = zero_shot_eval(&outcome.weights, &cfg, test_samples, protocol, "test", seed)?;
    Ok((outcome, report.metrics))
}

/// Trains every frame-rate-encoder variant on Setup 1 + Setup 2 and
/// evaluates zero-shot on Setup 3, over `n_seeds` seeds each.
pub fn run_ablation_fps(
    benchmark: &CrossSetupBenchmark,
    cfg_base: &ModelConfig,
    budget: &Budget,
) -> Result<AblationTable, TrainError> {
    let mut rows = Vec::new();
    for variant in crate::model::FpsVariant::ALL {
        for s in 0..budget.n_seeds {
            let seed = budget.base_seed + s as u64;
            let mut cfg = cfg_base.clone();
            cfg.fps_variant = variant;
            let (_, metrics) = train_and_eval(
                &cfg,
                budget,
                seed,
                &benchmark.train,
                &benchmark.test,
                "fps_ablation",
            )?;
            rows.push(AblationRow {
                label: variant.as_str().to_string(),
                seed,
                metrics,
            });
        }
    }
    Ok(AblationTable {
        name: "fps".into(),
        rows,
    })
}

/// The decoupled-interaction grid: backbone only, +HIE, +HIE+decoder,
/// decoder+CA (no HIE), and all modules. Each row trains from scratch with
/// the same budget; disabling HIE routes refined trajectory tokens straight
/// to the decoder, and disabling the decoder pools encoder ego tokens into
/// K heads.
pub fn run_ablation_decoupled(
    train_samples: &[SampleWindow],
    test_samples: &[SampleWindow],
    cfg_base: &ModelConfig,
    budget: &Budget,
) -> Result<AblationTable, TrainError> {
    let grid: [(&str, bool, bool, bool); 5] = [
        ("backbone", false, false, false),
        ("hie", true, false, false),
        ("hie_decoder", true, true, false),
        ("decoder_ca", false, true, true),
        ("full", true, true, true),
    ];
    let mut rows = Vec::new();
    for (label, use_hie, use_decoder, use_ca) in grid {
        for s in 0..budget.n_seeds {
            let seed = budget.base_seed + s as u64;
            let mut cfg = cfg_base.clone();
            cfg.use_hie = use_hie;
            cfg.use_decoder = use_decoder;
            cfg.use_ca = use_ca;
            let (_, metrics) = train_and_eval(
                &cfg,
                budget,
                seed,
                train_samples,
                test_samples,
                "decoupled_ablation",
            )?;
            rows.push(AblationRow {
                label: label.to_string(),
                seed,
                metrics,
            });
        }
    }
    Ok(AblationTable {
        name: "decoupled".into(),
        rows,
    })
}

/// One pre-training per temporal masking ratio, identical budget.
pub fn run_ablation_mask_ratio(
    train_samples: &[SampleWindow],
    test_samples: &[SampleWindow],
    ratios: &[f64],
    cfg_base: &ModelConfig,
    budget: &Budget,
) -> Result<AblationTable, TrainError> {
    let mut rows = Vec::new();
    for &ratio in ratios {
        for s in 0..budget.n_seeds {
            let seed = budget.base_seed + s as u64;
            let mut cfg = cfg_base.clone();
            cfg.mask_ratios.temporal = ratio;
            let (_, metrics) = train_and_eval(
                &cfg,
                budget,
                seed,
                train_samples,
                test_samples,
                "mask_ratio_ablation",
            )?;
            rows.push(AblationRow {
                label: format!("{ratio:.2}"),
                seed,
                metrics,
            });
        }
    }
    Ok(AblationTable {
        name: "mask_ratio".into(),
        rows,
    })
}

/// Test error after fine-tuning on n samples, for each requested n.
#[derive(Debug, Clone)]
pub struct FewShotPoint {
    pub n: usize,
    pub ade: f64,
    pub min_ade_k: f64,
}

/// Fine-tunes all weights on deterministic n-sample subsets of the target
/// split and reports test error per n.
pub fn few_shot_finetune(
    init: &ModelWeights,
    cfg: &ModelConfig,
    target_train: &[SampleWindow],
    target_test: &[SampleWindow],
    ns: &[usize],
    budget: &Budget,
) -> Result<Vec<FewShotPoint>, TrainError> {
    use rand::seq::SliceRandom;
    for &n in ns {
        if n > target_train.len() {
            return Err(TrainError::SplitTooSmall {
                requested: n,
                available: target_train.len(),
            });
        }
    }
    // One seeded permutation; subsets are nested prefixes of it.
    let mut order: Vec<usize> = (0..target_train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(budget.base_seed));

    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let subset: Vec<SampleWindow> = order[..n].iter().map(|&i| target_train[i].clone()).collect();
        let mut plan = TrainPlan::new(vec![TrainSource::new("target", subset)]);
        plan.epochs = budget.epochs;
        plan.batch_size = budget.batch_size.min(n.max(1));
        plan.phase = Phase::Finetune;
        plan.seed = budget.base_seed;
        plan.val_fraction = 0.0;
        let outcome = train_from(&plan, cfg, Some(init.clone()))?;
        let report = zero_shot_eval(
            &outcome.weights,
            cfg,
            target_test,
            "few_shot",
            &format!("n{n}"),
            budget.base_seed,
        )?;
        points.push(FewShotPoint {
            n,
            ade: report.metrics.ade,
            min_ade_k: report.metrics.min_ade_k,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckpt::weights_digest;
    use crate::data::extract_windows;
    use crate::synth::{generate, GenKind, GenSpec};

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::with_dims(16, 1);
        cfg.cme_layers = 1;
        cfg.hie_layers = 1;
        cfg.pid_decoder_layers = 1;
        cfg.n_modes = 2;
        cfg.n_ctx_queries = 2;
        cfg.max_t_obs = 6;
        cfg.max_t_pred = 4;
        cfg.cues_enabled = [crate::data::CueKind::T].into_iter().collect();
        cfg
    }

    fn tiny_windows(seed: u64, n_scenes: usize) -> Vec<SampleWindow> {
        let mut spec = GenSpec::new(GenKind::ConstVelocity);
        spec.n_scenes = n_scenes;
        spec.n_agents = 1;
        spec.base_fps = 5.0;
        spec.duration_s = 2.0;
        spec.seed = seed;
        generate(&spec)
            .iter()
            .flat_map(|s| extract_windows(s, 5, 3, 10))
            .collect()
    }

    #[test]
    fn zero_shot_eval_reports_counts_and_mutates_nothing() {
        let cfg = tiny_cfg();
        let weights = ModelWeights::init(&cfg);
        let samples = tiny_windows(0, 10);
        let before = weights_digest(&weights);
        let report = zero_shot_eval(&weights, &cfg, &samples, "p", "s", 0).unwrap();
        assert_eq!(report.metrics.n_samples, samples.len());
        assert_eq!(weights_digest(&weights), before);
        assert!(report.metrics.min_ade_k <= report.metrics.ade + 1e-15);
    }

    #[test]
    fn fps_blind_model_reports_identically_across_rate_labels() {
        let mut cfg = tiny_cfg();
        cfg.fps_variant = crate::model::FpsVariant::None;
        let weights = ModelWeights::init(&cfg);
        let samples = tiny_windows(1, 8);
        let relabeled: Vec<SampleWindow> = samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.fps = 1.0;
                s
            })
            .collect();
        let a = zero_shot_eval(&weights, &cfg, &samples, "p", "s", 0).unwrap();
        let b = zero_shot_eval(&weights, &cfg, &relabeled, "p", "s", 0).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn two_frame_transform_keeps_last_two_valid() {
        let samples = tiny_windows(2, 4);
        let sample = &samples[0];
        let reduced = two_frame_transform(sample);
        for a in 0..sample.n_agents {
            let valid: Vec<usize> = (0..sample.t_obs).filter(|&t| reduced.valid(a, t)).collect();
            assert_eq!(valid, vec![sample.t_obs - 2, sample.t_obs - 1]);
        }
        // t_obs = 2 windows are untouched: both arms identical.
        let short: Vec<SampleWindow> = {
            let mut spec = GenSpec::new(GenKind::ConstVelocity);
            spec.n_scenes = 2;
            spec.n_agents = 1;
            spec.base_fps = 5.0;
            spec.duration_s = 1.2;
            generate(&spec)
                .iter()
                .flat_map(|s| extract_windows(s, 2, 2, 10))
                .collect()
        };
        let cfg = {
            let mut c = tiny_cfg();
            c.max_t_obs = 2;
            c.max_t_pred = 2;
            c
        };
        let weights = ModelWeights::init(&cfg);
        let report = two_frame_eval(&weights, &cfg, &short, 0).unwrap();
        assert_eq!(report.ade_degradation_pct, 0.0);
        assert_eq!(report.full.metrics, report.two_frame.metrics);
    }

    #[test]
    fn few_shot_produces_a_point_per_n_and_rejects_oversize() {
        let cfg = tiny_cfg();
        let weights = ModelWeights::init(&cfg);
        let train_pool = tiny_windows(3, 12);
        let test_pool = tiny_windows(4, 4);
        let mut budget = Budget::new(1, 4);
        budget.phase = Phase::Finetune;
        let points =
            few_shot_finetune(&weights, &cfg, &train_pool, &test_pool, &[2, 4], &budget).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].n, 2);
        assert_eq!(points[1].n, 4);
        let err = few_shot_finetune(&weights, &cfg, &train_pool, &test_pool, &[999], &budget);
        assert!(matches!(err, Err(TrainError::SplitTooSmall { .. })));
    }

    #[test]
    fn ablation_tables_have_expected_grid() {
        let cfg = tiny_cfg();
        let train_pool = tiny_windows(5, 10);
        let test_pool = tiny_windows(6, 4);
        let mut budget = Budget::new(1, 8);
        budget.n_seeds = 2;
        let table =
            run_ablation_decoupled(&train_pool, &test_pool, &cfg, &budget).unwrap();
        assert_eq!(table.rows.len(), 5 * 2);
        assert_eq!(
            table.labels(),
            vec!["backbone", "hie", "hie_decoder", "decoder_ca", "full"]
        );
        for label in table.labels() {
            assert_eq!(table.seed_values(&label, |m| m.min_ade_k).len(), 2);
        }
    }
}

#[cfg(test)]
mod structure_tests {
    use super::*;
    use crate::data::extract_windows;
    use crate::model::FpsVariant;
    use crate::synth::{build_cross_setup_benchmark, generate, GenKind, GenSpec};

    fn micro_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::with_dims(16, 2);
        cfg.cme_layers = 1;
        cfg.hie_layers = 1;
        cfg.pid_decoder_layers = 1;
        cfg.n_modes = 2;
        cfg.n_ctx_queries = 2;
        cfg.max_t_obs = 10;
        cfg.max_t_pred = 20;
        cfg.cues_enabled = [crate::data::CueKind::T].into_iter().collect();
        cfg
    }

    #[test]
    fn fps_ablation_table_has_five_variants_times_seeds() {
        let mut spec = GenSpec::new(GenKind::Turning);
        spec.n_scenes = 12;
        spec.n_agents = 1;
        spec.seed = 4;
        let bench = build_cross_setup_benchmark(&spec, 0.25).unwrap();
        let mut budget = Budget::new(1, 8);
        budget.n_seeds = 2;
        let table = run_ablation_fps(&bench, &micro_cfg(), &budget).unwrap();
        assert_eq!(table.rows.len(), 5 * 2);
        let labels = table.labels();
        for v in FpsVariant::ALL {
            assert!(labels.contains(&v.as_str().to_string()), "{labels:?}");
        }
    }

    #[test]
    fn mask_ratio_table_and_zero_ratio_equivalence() {
        let mut spec = GenSpec::new(GenKind::Turning);
        spec.n_scenes = 12;
        spec.n_agents = 1;
        spec.base_fps = 5.0;
        spec.duration_s = 2.4;
        spec.seed = 5;
        let scenes = generate(&spec);
        let pool: Vec<_> = scenes
            .iter()
            .flat_map(|s| extract_windows(s, 5, 3, 12))
            .collect();
        let (train_pool, test_pool) = pool.split_at(pool.len() - 4);
        let mut cfg = micro_cfg();
        cfg.max_t_obs = 5;
        cfg.max_t_pred = 3;
        let mut budget = Budget::new(1, 8);
        budget.n_seeds = 1;
        let ratios = [0.10, 0.25, 0.50, 0.75, 0.90];
        let table = run_ablation_mask_ratio(
            &train_pool.to_vec(),
            &test_pool.to_vec(),
            &ratios,
            &cfg,
            &budget,
        )
        .unwrap();
        assert_eq!(table.rows.len(), 5);

        // Ratio 0 equals training with temporal masking disabled outright.
        let zero_row = run_ablation_mask_ratio(
            &train_pool.to_vec(),
            &test_pool.to_vec(),
            &[0.0],
            &cfg,
            &budget,
        )
        .unwrap();
        let mut cfg_off = cfg.clone();
        cfg_off.mask_ratios.temporal = 0.0;
        let (_, direct) = train_and_eval(
            &cfg_off,
            &budget,
            budget.base_seed,
            train_pool,
            test_pool,
            "mask_ratio_ablation",
        )
        .unwrap();
        assert_eq!(zero_row.rows[0].metrics, direct);
    }
}
