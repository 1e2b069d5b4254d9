//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Exact property criteria (gradients, metrics, masking, identity, data
//! layer, determinism) run at full strength. The training-based criteria
//! reproduce the reference ablation structure directionally at desk scale:
//! tiny widths, synthetic corpora, 3-seed medians.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use omnitraj_core::data::cache::{cache_read, cache_write};
use omnitraj_core::data::{
    extract_windows, normalize, resample, AgentTrack, CueArray, CueKind, CueWindow, SampleWindow,
    SceneRecord,
};
use omnitraj_core::metrics::{ade, fde, median, min_ade_k, min_fde_k};
use omnitraj_core::model::forward::{forward, forward_traced};
use omnitraj_core::model::{
    embed_cues, FpsVariant, ModelConfig, ModelWeights, Phase,
};
use omnitraj_core::nn::Lifter;
use omnitraj_core::tape::{finite_diff_check, GradTape};
use omnitraj_core::tensor::Tensor;
use omnitraj_core::train::{wta_l2_loss_traced, TrainPlan, TrainSource};

fn pass_line(n: usize, name: &str, detail: String) {
    println!("PASS criterion {n}: {name} — {detail}");
}

/// A synthetic sample with trajectory and pose cues for the exact checks.
fn toy_sample(
    rng: &mut ChaCha8Rng,
    n_agents: usize,
    t_obs: usize,
    t_pred: usize,
    pose_e: Option<usize>,
) -> SampleWindow {
    let mut obs = BTreeMap::new();
    obs.insert(
        CueKind::T,
        CueWindow {
            elements: 1,
            features: 2,
            data: (0..n_agents * t_obs * 2)
                .map(|_| rng.gen_range(-3.0f32..3.0))
                .collect(),
        },
    );
    if let Some(e) = pose_e {
        obs.insert(
            CueKind::P3,
            CueWindow {
                elements: e,
                features: 3,
                data: (0..n_agents * t_obs * e * 3)
                    .map(|_| rng.gen_range(-0.5f32..0.5))
                    .collect(),
            },
        );
    }
    SampleWindow {
        fps: 5.0,
        t_obs,
        t_pred,
        ego_index: 0,
        n_agents,
        obs,
        obs_valid: vec![true; n_agents * t_obs],
        future: (0..t_pred * 2).map(|_| rng.gen_range(-2.0f32..2.0)).collect(),
        normalization_offset: [0.0, 0.0],
    }
}

fn grad_check_config(variant: FpsVariant) -> ModelConfig {
    let mut cfg = ModelConfig::with_dims(16, 21);
    cfg.n_modes = 2;
    cfg.max_t_obs = 4;
    cfg.max_t_pred = 3;
    cfg.e_p3 = 3;
    cfg.fps_variant = variant;
    cfg
}

#[test]
fn criterion_1_gradient_integrity() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for variant in FpsVariant::ALL {
        let cfg = grad_check_config(variant);
        let weights = ModelWeights::init(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sample = normalize(&toy_sample(&mut rng, 2, 4, 3, Some(3)));

        let loss_of = |w: &ModelWeights| -> f64 {
            let tape = GradTape::new();
            let mut l = Lifter::new(&tape);
            let vars = w.lift(&mut l);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let out = forward_traced(&tape, &vars, &sample, &cfg, Phase::Eval, &mut rng).unwrap();
            let gt: Vec<[f64; 2]> = (0..sample.t_pred)
                .map(|t| {
                    let p = sample.future_xy(t);
                    [p[0] as f64, p[1] as f64]
                })
                .collect();
            wta_l2_loss_traced(&out.positions, &gt, sample.t_pred)
                .unwrap()
                .value()
                .item()
        };

        // Analytic gradients for every parameter.
        let tape = GradTape::new();
        let mut lifter = Lifter::new(&tape);
        let vars = weights.lift(&mut lifter);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = forward_traced(&tape, &vars, &sample, &cfg, Phase::Eval, &mut rng).unwrap();
        let gt: Vec<[f64; 2]> = (0..sample.t_pred)
            .map(|t| {
                let p = sample.future_xy(t);
                [p[0] as f64, p[1] as f64]
            })
            .collect();
        let loss = wta_l2_loss_traced(&out.positions, &gt, sample.t_pred).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let analytic = lifter.grads(&grads);
        let params: Vec<Tensor> = weights.flat();

        let report = finite_diff_check(
            |p: &[Tensor]| {
                let mut w = weights.clone();
                w.assign_flat(p);
                loss_of(&w)
            },
            &params,
            &analytic,
            1e-5,
            2000,
            variant as u64,
        );
        assert!(
            report.max_rel_err < 1e-4,
            "criterion 1 FAILED for {variant:?}: rel err {}",
            report.max_rel_err
        );
        worst = worst.max(report.max_rel_err);
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "criterion 1 FAILED: runtime {elapsed:?} exceeds 2 min"
    );
    pass_line(
        1,
        "gradient integrity",
        format!(
            "max rel err {worst:.2e} < 1e-4 over all 5 rate-encoder variants, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..500 {
        let t = rng.gen_range(1..24);
        let gt: Vec<[f64; 2]> = (0..t)
            .map(|_| [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)])
            .collect();
        let modes: Vec<Vec<[f64; 2]>> = (0..20)
            .map(|_| {
                (0..t)
                    .map(|_| [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)])
                    .collect()
            })
            .collect();
        // Brute-force minima must match exactly.
        let brute_ade = modes.iter().map(|m| ade(m, &gt)).fold(f64::INFINITY, f64::min);
        let brute_fde = modes.iter().map(|m| fde(m, &gt)).fold(f64::INFINITY, f64::min);
        assert_eq!(min_ade_k(&modes, &gt), brute_ade, "criterion 2 FAILED: min_ade_k");
        assert_eq!(min_fde_k(&modes, &gt), brute_fde, "criterion 2 FAILED: min_fde_k");

        // Homogeneity and translation invariance to 1e-12.
        let s: f64 = rng.gen_range(0.1..5.0);
        let (tx, ty) = (rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0));
        let pred = &modes[0];
        let scale = |v: &[[f64; 2]]| -> Vec<[f64; 2]> {
            v.iter().map(|p| [p[0] * s, p[1] * s]).collect()
        };
        let shift = |v: &[[f64; 2]]| -> Vec<[f64; 2]> {
            v.iter().map(|p| [p[0] + tx, p[1] + ty]).collect()
        };
        let a0 = ade(pred, &gt);
        let f0 = fde(pred, &gt);
        assert!(
            (ade(&scale(pred), &scale(&gt)) - s * a0).abs() <= 1e-12 * (1.0 + s * a0),
            "criterion 2 FAILED: ade homogeneity"
        );
        assert!(
            (fde(&scale(pred), &scale(&gt)) - s * f0).abs() <= 1e-12 * (1.0 + s * f0),
            "criterion 2 FAILED: fde homogeneity"
        );
        assert!(
            (ade(&shift(pred), &shift(&gt)) - a0).abs() <= 1e-12 * (1.0 + a0),
            "criterion 2 FAILED: ade translation invariance"
        );
        assert!(
            (fde(&shift(pred), &shift(&gt)) - f0).abs() <= 1e-12 * (1.0 + f0),
            "criterion 2 FAILED: fde translation invariance"
        );
    }
    pass_line(
        2,
        "metric oracle",
        "500 random K=20 pairs: brute-force minima exact; homogeneity/translation within 1e-12".into(),
    );
}

#[test]
fn criterion_3_mask_soundness() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut total_dropped = 0usize;
    for case in 0..100 {
        let n_agents = rng.gen_range(1..4);
        let t_obs = rng.gen_range(4..11);
        let e = rng.gen_range(2..5);
        let mut cfg = ModelConfig::with_dims(16, case);
        cfg.cme_layers = 2;
        cfg.hie_layers = 1;
        cfg.pid_decoder_layers = 1;
        cfg.n_modes = 2;
        cfg.max_t_obs = t_obs;
        cfg.max_t_pred = 3;
        cfg.e_p3 = e;
        let weights = ModelWeights::init(&cfg);
        let sample = normalize(&toy_sample(&mut rng, n_agents, t_obs, 3, Some(e)));
        let mask_seed = 1000 + case;

        // Reference forward and the dropped-token set.
        let tape = GradTape::new();
        let mut l = Lifter::new(&tape);
        let vars = weights.lift(&mut l);
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let trace =
            forward_traced(&tape, &vars, &sample, &cfg, Phase::Pretrain, &mut mask_rng).unwrap();
        let baseline = trace.positions.value().clone();
        let meta = {
            let t2 = GradTape::new();
            let mut l2 = Lifter::new(&t2);
            let v2 = weights.lift(&mut l2);
            embed_cues(&t2, &v2, &sample, &cfg).unwrap().meta
        };

        // The ego's last two observed trajectory tokens are never dropped,
        // and the temporal drop count per fully-valid agent is exact.
        let mut temporal_drops = vec![0usize; n_agents];
        for &idx in &trace.dropped {
            let m = &meta[idx];
            let (a, t) = (m.agent.unwrap(), m.time.unwrap());
            if m.cue == Some(CueKind::T) {
                assert!(
                    !(a == sample.ego_index && t >= t_obs - 2),
                    "criterion 3 FAILED: ego last-two dropped (case {case})"
                );
                temporal_drops[a] += 1;
            }
        }
        let expected = (0.75 * (t_obs as f64 - 2.0)).round() as usize;
        for (a, drops) in temporal_drops.iter().enumerate() {
            assert_eq!(
                *drops, expected,
                "criterion 3 FAILED: agent {a} dropped {drops} frames, expected {expected} (case {case})"
            );
        }

        // Perturbing every dropped token's raw input changes nothing.
        let mut perturbed = sample.clone();
        for &idx in &trace.dropped {
            let m = &meta[idx];
            let win = perturbed.obs.get_mut(&m.cue.unwrap()).unwrap();
            let (e_c, f_c) = (win.elements, win.features);
            let off = ((m.agent.unwrap() * t_obs + m.time.unwrap()) * e_c + m.element.unwrap()) * f_c;
            for j in 0..f_c {
                win.data[off + j] = -777.5 + (idx + j) as f32;
            }
        }
        let mut mask_rng2 = ChaCha8Rng::seed_from_u64(mask_seed);
        let after = forward(&weights, &cfg, &perturbed, Phase::Pretrain, &mut mask_rng2).unwrap();
        let tape3 = GradTape::new();
        let mut l3 = Lifter::new(&tape3);
        let v3 = weights.lift(&mut l3);
        let mut mask_rng3 = ChaCha8Rng::seed_from_u64(mask_seed);
        let trace3 =
            forward_traced(&tape3, &v3, &perturbed, &cfg, Phase::Pretrain, &mut mask_rng3).unwrap();
        assert!(
            trace3.positions.value().bit_eq(&baseline),
            "criterion 3 FAILED: dropped-token perturbation changed outputs (case {case})"
        );
        let _ = after;
        total_dropped += trace.dropped.len();
    }
    pass_line(
        3,
        "mask soundness",
        format!("100 pretrain samples, {total_dropped} dropped tokens non-influential; last-two retention and round(0.75*(t_obs-2)) counts exact"),
    );
}

#[test]
fn criterion_4_fps_identity_at_init() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut cfg_none = ModelConfig::with_dims(16, 33);
    cfg_none.n_modes = 2;
    cfg_none.max_t_obs = 6;
    cfg_none.max_t_pred = 4;
    cfg_none.e_p3 = 3;
    cfg_none.fps_variant = FpsVariant::None;
    let w_none = ModelWeights::init(&cfg_none);

    for (label, variant) in [("zeroed mlp_sum", FpsVariant::MlpSum), ("film at init", FpsVariant::Film)] {
        let mut cfg_v = cfg_none.clone();
        cfg_v.fps_variant = variant;
        let mut w_v = w_none.clone();
        w_v.fps = {
            let mut f = ModelWeights::init(&cfg_v).fps;
            if variant == FpsVariant::MlpSum {
                f.zero_out();
            }
            f
        };
        for case in 0..10 {
            let sample = normalize(&toy_sample(&mut rng, 2, 5, 4, Some(3)));
            let mut r1 = ChaCha8Rng::seed_from_u64(case);
            let mut r2 = ChaCha8Rng::seed_from_u64(case);
            let a = forward(&w_none, &cfg_none, &sample, Phase::Eval, &mut r1).unwrap();
            let b = forward(&w_v, &cfg_v, &sample, Phase::Eval, &mut r2).unwrap();
            for (ma, mb) in a.modes.iter().zip(&b.modes) {
                for (pa, pb) in ma.iter().zip(mb) {
                    assert!(
                        pa[0].to_bits() == pb[0].to_bits() && pa[1].to_bits() == pb[1].to_bits(),
                        "criterion 4 FAILED: {label} differs from none-variant"
                    );
                }
            }
        }
    }
    pass_line(
        4,
        "fps-identity at init",
        "zeroed mlp_sum and film-at-init outputs bit-identical to the none variant".into(),
    );
}

/// Brute-force window count: enumerate (ego, start) pairs and check
/// eligibility directly against the track data.
fn brute_force_window_count(scene: &SceneRecord, t_obs: usize, t_pred: usize, stride: usize) -> usize {
    let Some((lo, hi)) = scene.frame_span() else {
        return 0;
    };
    let mut count = 0;
    for ego in &scene.agents {
        let mut start = lo;
        while start + (t_obs + t_pred) as i64 <= hi + 1 {
            let last_obs_ok = ego.valid_at(start + t_obs as i64 - 1);
            let future_ok = (0..t_pred).all(|t| ego.valid_at(start + (t_obs + t) as i64));
            if last_obs_ok && future_ok {
                count += 1;
            }
            start += stride as i64;
        }
    }
    count
}

fn random_scene(rng: &mut ChaCha8Rng, fully_present: bool) -> SceneRecord {
    let n_agents = rng.gen_range(1..4);
    let n_frames = rng.gen_range(8..51);
    let agents = (0..n_agents)
        .map(|a| {
            let present: Vec<bool> = (0..n_frames)
                .map(|_| fully_present || rng.gen_bool(0.85))
                .collect();
            let data: Vec<f64> = (0..n_frames * 2).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let mut cues = BTreeMap::new();
            cues.insert(
                CueKind::T,
                CueArray {
                    elements: 1,
                    features: 2,
                    data,
                },
            );
            AgentTrack {
                agent_id: format!("a{a}"),
                frames: (0..n_frames as i64).collect(),
                cues,
                present,
            }
        })
        .collect();
    SceneRecord {
        scene_id: "r".into(),
        base_fps: 20.0,
        agents,
        source_tag: "acceptance".into(),
    }
}

#[test]
fn criterion_9_data_layer_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    // Windowing counts vs brute force on 200 random small scenes.
    for case in 0..200 {
        let fully = case % 3 == 0;
        let scene = random_scene(&mut rng, fully);
        let t_obs = rng.gen_range(2..6);
        let t_pred = rng.gen_range(1..5);
        let stride = rng.gen_range(1..4);
        let got = extract_windows(&scene, t_obs, t_pred, stride).len();
        let expected = brute_force_window_count(&scene, t_obs, t_pred, stride);
        assert_eq!(got, expected, "criterion 9 FAILED: window count (case {case})");
        if fully {
            // Closed form per eligible ego on fully present scenes.
            let n = scene.n_frames();
            let per_ego = if n >= t_obs + t_pred {
                (n - t_obs - t_pred) / stride + 1
            } else {
                0
            };
            assert_eq!(
                got,
                per_ego * scene.agents.len(),
                "criterion 9 FAILED: closed-form count (case {case})"
            );
        }
        // Resampling: every k-th frame, values bit-identical.
        let k = rng.gen_range(1..4) as i64;
        let target = scene.base_fps / k as f64;
        let dec = resample(&scene, target).unwrap();
        for (orig, kept) in scene.agents.iter().zip(&dec.agents) {
            let src = &orig.cues[&CueKind::T];
            let dst = &kept.cues[&CueKind::T];
            let mut j = 0;
            for (i, &f) in orig.frames.iter().enumerate() {
                if f % k == 0 {
                    assert_eq!(kept.frames[j], f / k);
                    assert_eq!(
                        src.frame(i),
                        dst.frame(j),
                        "criterion 9 FAILED: decimation altered values"
                    );
                    j += 1;
                }
            }
            assert_eq!(j, kept.frames.len());
        }
    }

    // Cache round-trip bit-exact on 1,000 randomized samples.
    let samples: Vec<SampleWindow> = (0..1000)
        .map(|i| {
            let n_agents = rng.gen_range(1..4);
            let t_obs = rng.gen_range(2..9);
            let t_pred = rng.gen_range(1..6);
            let pose = if i % 2 == 0 { Some(rng.gen_range(2..6)) } else { None };
            toy_sample(&mut rng, n_agents, t_obs, t_pred, pose)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acceptance.uhm2");
    cache_write(&samples, &path).unwrap();
    let back = cache_read(&path).unwrap();
    assert_eq!(samples.len(), back.len());
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a, b, "criterion 9 FAILED: cache round-trip");
        for (x, y) in a.future.iter().zip(&b.future) {
            assert_eq!(x.to_bits(), y.to_bits(), "criterion 9 FAILED: future bits");
        }
        for (ka, kb) in a.obs.values().zip(b.obs.values()) {
            for (x, y) in ka.data.iter().zip(&kb.data) {
                assert_eq!(x.to_bits(), y.to_bits(), "criterion 9 FAILED: cue bits");
            }
        }
    }
    pass_line(
        9,
        "data-layer exactness",
        "200 scenes: window counts match brute force, decimation bit-identical; 1,000-sample cache round-trip bit-exact".into(),
    );
}

#[test]
fn criterion_10_cli_determinism() {
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_omnitraj");
    let dir = tempfile::tempdir().unwrap();
    let mut artifacts: Vec<Vec<u8>> = Vec::new();
    for run_idx in 0..2 {
        let out = dir.path().join(format!("run{run_idx}"));
        let cfg = serde_json::json!({
            "seed": 1234,
            "output_dir": out,
            "data": {
                "gen": {
                    "kind": "turning",
                    "n_scenes": 24,
                    "n_agents": 2,
                    "base_fps": 25.0,
                    "duration_s": 3.0,
                    "noise_std": 0.01
                },
                "ingest": {
                    "inputs": ["scenes.ndjson"],
                    "window": {"fps": 5.0, "t_obs": 6, "t_pred": 4, "stride": 5},
                    "cache_out": "samples.uhm2"
                },
                "train_sources": [{"name": "turn", "cache": "samples.uhm2"}],
                "eval_source": {"name": "turn", "cache": "samples.uhm2"}
            },
            "model": {
                "d_model": 16,
                "n_heads": 2,
                "cme_layers": 1,
                "hie_layers": 1,
                "pid_decoder_layers": 1,
                "n_modes": 2,
                "max_t_obs": 6,
                "max_t_pred": 4,
                "cues_enabled": ["T"],
                "fps_variant": "mlp_sum",
                "n_ctx_queries": 2
            },
            "train": {"epochs": 2, "batch_size": 8, "phase": "pretrain", "val_fraction": 0.2}
        });
        let cfg_path = dir.path().join(format!("cfg{run_idx}.json"));
        std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let c = cfg_path.to_str().unwrap();
        for step in ["gen", "ingest", "train"] {
            let res = Command::new(bin)
                .args([step, "--config", c])
                .output()
                .expect("spawn");
            assert!(
                res.status.success(),
                "criterion 10 FAILED at {step}: {}",
                String::from_utf8_lossy(&res.stderr)
            );
        }
        let res = Command::new(bin)
            .args([
                "eval",
                "--config",
                c,
                "--checkpoint",
                out.join("checkpoint.otck").to_str().unwrap(),
            ])
            .output()
            .expect("spawn");
        assert!(res.status.success());
        let mut blob = std::fs::read(out.join("metrics.csv")).unwrap();
        blob.extend(std::fs::read(out.join("eval_metrics.csv")).unwrap());
        blob.extend(std::fs::read(out.join("loss.csv")).unwrap());
        artifacts.push(blob);
    }
    assert_eq!(
        artifacts[0], artifacts[1],
        "criterion 10 FAILED: metrics CSVs differ between identical runs"
    );
    pass_line(
        10,
        "determinism",
        "train + eval artifacts byte-identical across two identical runs".into(),
    );
}

fn build_plan(
    sources: Vec<TrainSource>,
    epochs: usize,
    batch: usize,
    phase: Phase,
    seed: u64,
) -> TrainPlan {
    let mut plan = TrainPlan::new(sources);
    plan.epochs = epochs;
    plan.batch_size = batch;
    plan.phase = phase;
    plan.seed = seed;
    plan.val_fraction = 0.0;
    plan
}

// ---------------------------------------------------------------------------
// Training-based criteria 5-8: directional desk-scale reproductions of the
// reference ablation structure, 3-seed medians, corpora sized for two cores.
// ---------------------------------------------------------------------------

use omnitraj_core::protocol::{run_ablation_decoupled, two_frame_eval, zero_shot_eval, Budget};
use omnitraj_core::synth::{build_cross_setup_benchmark, generate, GenKind, GenSpec};
use omnitraj_core::train::train;

/// The cross-setup benchmark generator: turning agents, whose per-frame
/// rotation at an unseen rate is only recoverable with the rate signal.
fn c5_genspec() -> GenSpec {
    let mut spec = GenSpec::new(GenKind::Turning);
    spec.n_scenes = 3600; // 3000 train / 600 test scenes
    spec.n_agents = 1;
    spec.speed_range = [0.5, 2.0];
    spec.turn_rate_range = [-1.25, 1.25];
    spec.noise_std = 0.02;
    spec.seed = 500;
    spec
}

fn c5_model(variant: FpsVariant, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::with_dims(64, seed);
    cfg.cme_layers = 2;
    cfg.hie_layers = 2;
    cfg.pid_decoder_layers = 2;
    cfg.cues_enabled = [CueKind::T].into_iter().collect();
    cfg.fps_variant = variant;
    // Reference rate near the operating rates keeps the encoder input O(1);
    // r/25 starves the conditioning signal at desk scale (see ledger).
    cfg.fps_reference = 2.5;
    cfg
}

#[test]
fn criterion_5_zero_shot_fps_conditioning() {
    let started = Instant::now();
    let bench = build_cross_setup_benchmark(&c5_genspec(), 1.0 / 6.0).unwrap();
    assert!(bench.train_scene_ids.len() >= 3000);
    assert!(bench.test_scene_ids.len() >= 500);
    let s1: Vec<SampleWindow> = bench.train.iter().filter(|s| s.fps == 5.0).cloned().collect();
    let s2: Vec<SampleWindow> = bench.train.iter().filter(|s| s.fps == 2.5).cloned().collect();

    let mut medians = BTreeMap::new();
    for variant in [FpsVariant::None, FpsVariant::MlpSum] {
        let mut per_seed_min = Vec::new();
        let mut per_seed_ade = Vec::new();
        for seed in 0..3u64 {
            let run_started = Instant::now();
            let cfg = c5_model(variant, seed);
            let plan = build_plan(
                vec![
                    TrainSource::new("setup1", s1.clone()),
                    TrainSource::new("setup2", s2.clone()),
                ],
                12,
                16,
                Phase::Pretrain,
                seed,
            );
            let outcome = train(&plan, &cfg).unwrap();
            let report =
                zero_shot_eval(&outcome.weights, &cfg, &bench.test, "fps", "setup3", seed).unwrap();
            let elapsed = run_started.elapsed();
            println!(
                "  criterion 5 [{} seed {seed}]: setup3 ADE {:.4} minADE {:.4} ({:.0}s)",
                variant.as_str(),
                report.metrics.ade,
                report.metrics.min_ade_k,
                elapsed.as_secs_f64()
            );
            assert!(
                elapsed.as_secs() < 1800,
                "criterion 5 FAILED: variant-seed runtime {elapsed:?} exceeds 30 min"
            );
            per_seed_min.push(report.metrics.min_ade_k);
            per_seed_ade.push(report.metrics.ade);
        }
        medians.insert(
            variant.as_str(),
            (median(&per_seed_min), median(&per_seed_ade)),
        );
    }
    let (sum_min, sum_ade) = medians["mlp_sum"];
    let (none_min, none_ade) = medians["none"];
    let ratio = sum_min / none_min;
    assert!(
        sum_min <= 0.8 * none_min,
        "criterion 5 FAILED: mlp_sum median Setup-3 minADE {sum_min:.4} > 0.8 * none {none_min:.4} (ratio {ratio:.3})"
    );
    pass_line(
        5,
        "zero-shot fps conditioning",
        format!(
            "3-seed median Setup-3 minADE: mlp_sum {sum_min:.4} vs none {none_min:.4} (ratio {ratio:.3} <= 0.8; mean-mode ADE {sum_ade:.4} vs {none_ade:.4}); total {:.0}s",
            started.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_6_decoupled_module_ablation() {
    let started = Instant::now();
    let mut spec = GenSpec::new(GenKind::Social);
    spec.n_scenes = 450;
    spec.n_agents = 4;
    spec.duration_s = 5.0;
    spec.speed_range = [0.4, 1.6];
    spec.noise_std = 0.02;
    spec.seed = 600;
    let scenes = generate(&spec);
    let (train_scenes, test_scenes) = scenes.split_at(380);
    let window = |scenes: &[omnitraj_core::data::SceneRecord]| -> Vec<SampleWindow> {
        scenes
            .iter()
            .flat_map(|s| {
                let d = resample(s, 5.0).unwrap();
                extract_windows(&d, 8, 12, 25)
            })
            .collect()
    };
    let train_pool = window(train_scenes);
    let test_pool = window(test_scenes);

    let mut cfg = ModelConfig::with_dims(32, 0);
    cfg.cme_layers = 2;
    cfg.hie_layers = 2;
    cfg.pid_decoder_layers = 2;
    cfg.n_modes = 8;
    cfg.n_ctx_queries = 4;
    cfg.max_t_obs = 8;
    cfg.max_t_pred = 12;
    cfg.cues_enabled = [CueKind::T].into_iter().collect();
    let budget = Budget {
        epochs: 6,
        batch_size: 16,
        n_seeds: 3,
        base_seed: 0,
        phase: Phase::Pretrain,
    };
    let table = run_ablation_decoupled(&train_pool, &test_pool, &cfg, &budget).unwrap();
    for label in table.labels() {
        println!(
            "  criterion 6 [{label}]: median minADE {:.4} (seeds {:?})",
            table.median_of(&label, |m| m.min_ade_k),
            table.seed_values(&label, |m| m.min_ade_k)
        );
    }
    assert_eq!(table.labels().len(), 5, "criterion 6 FAILED: expected 5 rows");
    let full = table.median_of("full", |m| m.min_ade_k);
    let backbone = table.median_of("backbone", |m| m.min_ade_k);
    assert!(
        full <= backbone,
        "criterion 6 FAILED: full {full:.4} > backbone {backbone:.4}"
    );
    pass_line(
        6,
        "decoupled-module ablation",
        format!(
            "5 rows x 3 seeds on the social corpus; median minADE full {full:.4} <= backbone {backbone:.4}; total {:.0}s",
            started.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_7_two_frame_robustness() {
    let started = Instant::now();
    let mut spec = GenSpec::new(GenKind::Turning);
    spec.n_scenes = 900;
    spec.n_agents = 1;
    spec.speed_range = [0.5, 2.0];
    spec.turn_rate_range = [-1.25, 1.25];
    spec.noise_std = 0.02;
    spec.seed = 700;
    let scenes = generate(&spec);
    let (train_scenes, test_scenes) = scenes.split_at(780);
    let window = |scenes: &[omnitraj_core::data::SceneRecord]| -> Vec<SampleWindow> {
        scenes
            .iter()
            .flat_map(|s| {
                let d = resample(s, 5.0).unwrap();
                extract_windows(&d, 10, 10, 25)
            })
            .collect()
    };
    let train_pool = window(train_scenes);
    let test_pool = window(test_scenes);

    let mut degradations: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (label, temporal_ratio) in [("masked", 0.75), ("unmasked", 0.0)] {
        for seed in 0..3u64 {
            let mut cfg = ModelConfig::with_dims(32, seed);
            cfg.cme_layers = 2;
            cfg.hie_layers = 2;
            cfg.pid_decoder_layers = 2;
            cfg.n_modes = 8;
            cfg.n_ctx_queries = 4;
            cfg.max_t_obs = 10;
            cfg.max_t_pred = 10;
            cfg.cues_enabled = [CueKind::T].into_iter().collect();
            cfg.mask_ratios.temporal = temporal_ratio;
            let plan = build_plan(
                vec![TrainSource::new("turn", train_pool.clone())],
                8,
                16,
                Phase::Pretrain,
                seed,
            );
            let outcome = train(&plan, &cfg).unwrap();
            let report = two_frame_eval(&outcome.weights, &cfg, &test_pool, seed).unwrap();
            println!(
                "  criterion 7 [{label} seed {seed}]: full minADE {:.4}, two-frame minADE {:.4}, ADE degradation {:.1}%",
                report.full.metrics.min_ade_k,
                report.two_frame.metrics.min_ade_k,
                report.ade_degradation_pct
            );
            degradations.entry(label).or_default().push(report.ade_degradation_pct);
        }
    }
    let masked = median(&degradations["masked"]);
    let unmasked = median(&degradations["unmasked"]);
    assert!(
        masked < unmasked,
        "criterion 7 FAILED: masked degradation {masked:.1}% not strictly below unmasked {unmasked:.1}%"
    );
    pass_line(
        7,
        "two-frame robustness",
        format!(
            "3-seed median ADE degradation: masked-pretrained {masked:.1}% < unmasked {unmasked:.1}%; total {:.0}s",
            started.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_8_learnability_smoke_test() {
    let started = Instant::now();
    let mut spec = GenSpec::new(GenKind::ConstVelocity);
    spec.n_scenes = 1000;
    spec.n_agents = 1;
    spec.base_fps = 5.0;
    spec.duration_s = 3.4;
    spec.speed_range = [0.25, 2.0];
    spec.noise_std = 0.0;
    spec.seed = 800;
    let samples: Vec<SampleWindow> = generate(&spec)
        .iter()
        .flat_map(|s| extract_windows(s, 8, 8, 20))
        .collect();
    assert_eq!(samples.len(), 1000);

    let mut cfg = ModelConfig::with_dims(32, 1);
    cfg.cme_layers = 2;
    cfg.hie_layers = 1;
    cfg.pid_decoder_layers = 1;
    cfg.n_modes = 4;
    cfg.n_ctx_queries = 4;
    cfg.max_t_obs = 8;
    cfg.max_t_pred = 8;
    cfg.cues_enabled = [CueKind::T].into_iter().collect();
    let mut plan = build_plan(
        vec![TrainSource::new("cv", samples)],
        20,
        8,
        Phase::Finetune,
        3,
    );
    plan.val_fraction = 0.1;
    plan.eval_cadence = 20;
    let outcome = train(&plan, &cfg).unwrap();
    let elapsed = started.elapsed();

    let train_losses: Vec<f64> = outcome
        .curve
        .iter()
        .filter(|p| p.split == "train")
        .map(|p| p.loss)
        .collect();
    let first = train_losses.first().copied().unwrap();
    let last = train_losses.last().copied().unwrap();
    let (_, final_val) = outcome.val_metrics.last().cloned().unwrap();
    println!(
        "  criterion 8: loss {first:.4} -> {last:.4}, val minADE {:.4} (mean-mode ADE {:.4}), {:.0}s",
        final_val.min_ade_k, final_val.ade,
        elapsed.as_secs_f64()
    );
    assert!(
        train_losses.iter().all(|l| l.is_finite()),
        "criterion 8 FAILED: non-finite loss"
    );
    assert!(
        last <= 0.5 * first,
        "criterion 8 FAILED: loss fell only {first:.4} -> {last:.4} (< 50% drop)"
    );
    assert!(
        final_val.min_ade_k < 0.05,
        "criterion 8 FAILED: val minADE {:.4} >= 0.05 m",
        final_val.min_ade_k
    );
    assert!(
        elapsed.as_secs() < 300,
        "criterion 8 FAILED: runtime {elapsed:?} exceeds 5 min"
    );
    pass_line(
        8,
        "learnability smoke test",
        format!(
            "val minADE {:.4} m < 0.05 within 20 epochs; loss {first:.4} -> {last:.4}; {:.0}s",
            final_val.min_ade_k,
            elapsed.as_secs_f64()
        ),
    );
}
