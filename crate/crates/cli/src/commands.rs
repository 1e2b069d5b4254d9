//! Subcommand implementations.

use std::path::PathBuf;

use omnitraj_core::ckpt::{
    load_checkpoint, quantize_roundtrip, restore_weights, save_checkpoint,
};
use omnitraj_core::data::cache::{cache_read, cache_write};
use omnitraj_core::data::ingest::{ingest_ndjson_all, write_ndjson};
use omnitraj_core::data::{extract_windows, resample, SampleWindow, SceneRecord};
use omnitraj_core::metrics::median;
use omnitraj_core::model::{ModelConfig, ModelWeights, Phase};
use omnitraj_core::protocol::{
    few_shot_finetune, run_ablation_decoupled, run_ablation_fps, run_ablation_mask_ratio,
    two_frame_eval, zero_shot_eval, AblationTable, Budget,
};
use omnitraj_core::synth::{attach_synthetic_pose, build_cross_setup_benchmark, generate};
use omnitraj_core::train::{train_from, TrainPlan, TrainSource};

use crate::config::{RunConfig, SourceSection, WindowSection};
use crate::report::{
    metrics_row, write_loss_csv, write_metrics_csv, write_metrics_json, write_text,
};
use crate::svg;
use crate::CliError;

fn model_config(cfg: &RunConfig) -> Result<ModelConfig, CliError> {
    cfg.model
        .clone()
        .ok_or_else(|| CliError::config("missing `model` section".into()))
}

fn windows_from_scenes(
    scenes: &[SceneRecord],
    window: &WindowSection,
) -> Result<Vec<SampleWindow>, CliError> {
    let mut out = Vec::new();
    for scene in scenes {
        let decimated =
            resample(scene, window.fps).map_err(|e| CliError::runtime(e.to_string()))?;
        out.extend(extract_windows(
            &decimated,
            window.t_obs,
            window.t_pred,
            window.stride,
        ));
    }
    Ok(out)
}

fn load_source(cfg: &RunConfig, src: &SourceSection) -> Result<TrainSource, CliError> {
    let samples = if let Some(cache) = &src.cache {
        cache_read(&cfg.in_output_dir(&cache.to_string_lossy()))
            .map_err(|e| CliError::runtime(format!("source {}: {e}", src.name)))?
    } else {
        let path = cfg.in_output_dir(&src.ndjson.as_ref().unwrap().to_string_lossy());
        let scenes =
            ingest_ndjson_all(&path).map_err(|e| CliError::runtime(format!("source {}: {e}", src.name)))?;
        windows_from_scenes(&scenes, src.window.as_ref().unwrap())?
    };
    Ok(TrainSource {
        name: src.name.clone(),
        weight: src.weight,
        samples,
    })
}

fn generated_scenes(cfg: &RunConfig) -> Result<Vec<SceneRecord>, CliError> {
    let spec = cfg
        .data
        .gen
        .as_ref()
        .ok_or_else(|| CliError::config("missing `data.gen` section".into()))?;
    let mut scenes = generate(spec);
    if let Some(pose) = &cfg.data.pose {
        let seed = if pose.seed == 0 { cfg.seed ^ 0x9e3779b9 } else { pose.seed };
        scenes = scenes
            .iter()
            .map(|s| attach_synthetic_pose(s, pose.e_keypoints, seed))
            .collect();
    }
    Ok(scenes)
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let scenes = generated_scenes(cfg)?;
    let path = cfg.in_output_dir(&cfg.data.scenes_out);
    write_ndjson(&scenes, &path).map_err(|e| CliError::runtime(e.to_string()))?;
    println!("gen: wrote {} scenes to {}", scenes.len(), path.display());
    Ok(())
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let section = cfg
        .data
        .ingest
        .as_ref()
        .ok_or_else(|| CliError::config("missing `data.ingest` section".into()))?;
    let mut scenes = Vec::new();
    for input in &section.inputs {
        let path = cfg.in_output_dir(&input.to_string_lossy());
        scenes.extend(ingest_ndjson_all(&path).map_err(|e| CliError::runtime(e.to_string()))?);
    }
    let samples = windows_from_scenes(&scenes, &section.window)?;
    let out = cfg.in_output_dir(&section.cache_out);
    cache_write(&samples, &out).map_err(|e| CliError::runtime(e.to_string()))?;
    println!(
        "ingest: {} scenes -> {} samples -> {}",
        scenes.len(),
        samples.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let model_cfg = model_config(cfg)?;
    if cfg.data.train_sources.is_empty() {
        return Err(CliError::config("train needs `data.train_sources`".into()));
    }
    let sources = cfg
        .data
        .train_sources
        .iter()
        .map(|s| load_source(cfg, s))
        .collect::<Result<Vec<_>, _>>()?;

    let ckpt_path = cfg.output_dir.join("checkpoint.otck");
    let mut plan = TrainPlan::new(sources);
    plan.epochs = cfg.train.epochs;
    plan.batch_size = cfg.train.batch_size;
    plan.phase = cfg.train.phase;
    plan.seed = cfg.train_seed();
    plan.val_fraction = cfg.train.val_fraction;
    plan.eval_cadence = cfg.train.eval_cadence;

    let mut init: Option<ModelWeights> = None;
    if cfg.train.resume && ckpt_path.exists() {
        let ckpt = load_checkpoint(&ckpt_path).map_err(|e| CliError::runtime(e.to_string()))?;
        let weights =
            restore_weights(&model_cfg, &ckpt).map_err(|e| CliError::config(e.to_string()))?;
        let done = ckpt.epoch as usize;
        if done >= plan.epochs {
            return Err(CliError::config(format!(
                "checkpoint already covers {done} epochs; nothing to resume"
            )));
        }
        plan.epoch_offset = done;
        plan.epochs -= done;
        init = Some(weights);
        println!("train: resuming from epoch {done}");
    }

    let outcome =
        train_from(&plan, &model_cfg, init).map_err(|e| CliError::runtime(e.to_string()))?;
    let total_epochs = plan.epoch_offset + plan.epochs;
    save_checkpoint(&ckpt_path, &model_cfg, &outcome.weights, total_epochs as u32)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    write_loss_csv(&cfg.output_dir.join("loss.csv"), &outcome.curve)?;

    // Final metrics come from the quantized (checkpoint-identical) weights
    // so a later `eval` over the same data reproduces them byte-for-byte.
    let quantized = quantize_roundtrip(&outcome.weights);
    let all_samples: Vec<SampleWindow> = plan
        .sources
        .iter()
        .flat_map(|s| s.samples.iter().cloned())
        .collect();
    let report = zero_shot_eval(
        &quantized,
        &model_cfg,
        &all_samples,
        "train_final",
        "train",
        cfg.seed,
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;
    let variant = model_cfg.fps_variant.as_str();
    write_metrics_csv(
        &cfg.output_dir.join("metrics.csv"),
        &[metrics_row("train_final", "train", variant, cfg.seed, &report.metrics)],
    )?;
    write_metrics_json(&cfg.output_dir.join("metrics.json"), &[report.clone()])?;
    println!(
        "train: {} epochs, final train minADE {:.4} m, checkpoint {}",
        total_epochs,
        report.metrics.min_ade_k,
        ckpt_path.display()
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint_flag: Option<PathBuf>) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let model_cfg = model_config(cfg)?;
    let ckpt_path = checkpoint_flag
        .or_else(|| cfg.eval.checkpoint.clone())
        .map(|p| cfg.in_output_dir(&p.to_string_lossy()))
        .ok_or_else(|| CliError::config("eval needs a checkpoint (flag or `eval.checkpoint`)".into()))?;
    let ckpt = load_checkpoint(&ckpt_path).map_err(|e| CliError::runtime(e.to_string()))?;
    let weights = restore_weights(&model_cfg, &ckpt).map_err(|e| CliError::config(e.to_string()))?;

    let source = cfg
        .data
        .eval_source
        .as_ref()
        .ok_or_else(|| CliError::config("eval needs `data.eval_source`".into()))?;
    let samples = load_source(cfg, source)?.samples;
    let report = zero_shot_eval(
        &weights,
        &model_cfg,
        &samples,
        "zero_shot",
        &cfg.eval.setup,
        cfg.seed,
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;
    let variant = model_cfg.fps_variant.as_str();
    write_metrics_csv(
        &cfg.output_dir.join("eval_metrics.csv"),
        &[metrics_row("zero_shot", &cfg.eval.setup, variant, cfg.seed, &report.metrics)],
    )?;
    write_metrics_json(&cfg.output_dir.join("eval_metrics.json"), &[report.clone()])?;
    println!(
        "eval: {} samples, ADE {:.4} m, minADE {:.4} m",
        report.metrics.n_samples, report.metrics.ade, report.metrics.min_ade_k
    );
    Ok(())
}

fn budget(cfg: &RunConfig) -> Budget {
    Budget {
        epochs: cfg.ablate.epochs,
        batch_size: cfg.ablate.batch_size,
        n_seeds: cfg.ablate.n_seeds,
        base_seed: cfg.seed,
        phase: Phase::Pretrain,
    }
}

fn table_rows(table: &AblationTable, protocol: &str, setup: &str) -> Vec<String> {
    table
        .rows
        .iter()
        .map(|r| metrics_row(protocol, setup, &r.label, r.seed, &r.metrics))
        .collect()
}

fn table_chart(table: &AblationTable, title: &str) -> String {
    let labels = table.labels();
    let medians: Vec<f64> = labels
        .iter()
        .map(|l| table.median_of(l, |m| m.min_ade_k))
        .collect();
    let seeds: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| table.seed_values(l, |m| m.min_ade_k))
        .collect();
    svg::bar_chart(title, "minADE_K (m)", &labels, &medians, &seeds)
}

/// Train/test corpus for the corpus-based ablations.
fn ablation_corpus(cfg: &RunConfig) -> Result<(Vec<SampleWindow>, Vec<SampleWindow>), CliError> {
    let window = cfg
        .ablate
        .window
        .as_ref()
        .ok_or_else(|| CliError::config("this ablation needs `ablate.window`".into()))?;
    let scenes = generated_scenes(cfg)?;
    let n_test = ((scenes.len() as f64 * cfg.ablate.test_fraction).ceil() as usize)
        .max(1)
        .min(scenes.len().saturating_sub(1));
    let (train_scenes, test_scenes) = scenes.split_at(scenes.len() - n_test);
    Ok((
        windows_from_scenes(train_scenes, window)?,
        windows_from_scenes(test_scenes, window)?,
    ))
}

pub fn cmd_ablate(cfg: &RunConfig, which: &str) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let model_cfg = model_config(cfg)?;
    let budget = budget(cfg);
    match which {
        "fps" => {
            let spec = cfg
                .data
                .gen
                .as_ref()
                .ok_or_else(|| CliError::config("fps ablation needs `data.gen`".into()))?;
            let bench = build_cross_setup_benchmark(spec, cfg.ablate.test_fraction)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            println!(
                "fps ablation: {} train / {} test samples, {} seeds",
                bench.train.len(),
                bench.test.len(),
                budget.n_seeds
            );
            let table = run_ablation_fps(&bench, &model_cfg, &budget)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            write_metrics_csv(
                &cfg.output_dir.join("fps_ablation.csv"),
                &table_rows(&table, "fps_ablation", "setup3"),
            )?;
            write_text(
                &cfg.output_dir.join("fps_ablation.svg"),
                &table_chart(&table, "Zero-shot Setup-3 by rate encoder"),
            )?;
            print_table(&table);
        }
        "decoupled" => {
            let (train_pool, test_pool) = ablation_corpus(cfg)?;
            let table = run_ablation_decoupled(&train_pool, &test_pool, &model_cfg, &budget)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            write_metrics_csv(
                &cfg.output_dir.join("decoupled_ablation.csv"),
                &table_rows(&table, "decoupled_ablation", "test"),
            )?;
            write_text(
                &cfg.output_dir.join("decoupled_ablation.svg"),
                &table_chart(&table, "Decoupled interaction modules"),
            )?;
            print_table(&table);
        }
        "mask" => {
            let (train_pool, test_pool) = ablation_corpus(cfg)?;
            let table = run_ablation_mask_ratio(
                &train_pool,
                &test_pool,
                &cfg.ablate.ratios,
                &model_cfg,
                &budget,
            )
            .map_err(|e| CliError::runtime(e.to_string()))?;
            write_metrics_csv(
                &cfg.output_dir.join("mask_ablation.csv"),
                &table_rows(&table, "mask_ratio_ablation", "test"),
            )?;
            write_text(
                &cfg.output_dir.join("mask_ablation.svg"),
                &table_chart(&table, "Temporal masking ratio"),
            )?;
            print_table(&table);
        }
        "twoframe" => cmd_ablate_twoframe(cfg, &model_cfg, &budget)?,
        "fewshot" => cmd_ablate_fewshot(cfg, &model_cfg, &budget)?,
        other => return Err(CliError::config(format!("unknown ablation `{other}`"))),
    }
    Ok(())
}

fn cmd_ablate_twoframe(
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
    budget: &Budget,
) -> Result<(), CliError> {
    let (train_pool, test_pool) = ablation_corpus(cfg)?;
    let mut rows = Vec::new();
    let mut summary = String::from("variant,seed,ade_degradation_pct,fde_degradation_pct\n");
    let mut degr: Vec<(String, Vec<f64>)> = Vec::new();
    for (label, temporal) in [("masked", 0.75), ("unmasked", 0.0)] {
        let mut per_seed = Vec::new();
        for s in 0..budget.n_seeds {
            let seed = budget.base_seed + s as u64;
            let mut mc = model_cfg.clone();
            mc.mask_ratios.temporal = temporal;
            mc.seed = seed;
            let mut plan = TrainPlan::new(vec![TrainSource::new("corpus", train_pool.clone())]);
            plan.epochs = budget.epochs;
            plan.batch_size = budget.batch_size;
            plan.phase = Phase::Pretrain;
            plan.seed = seed;
            plan.val_fraction = 0.0;
            let outcome =
                train_from(&plan, &mc, None).map_err(|e| CliError::runtime(e.to_string()))?;
            let report = two_frame_eval(&outcome.weights, &mc, &test_pool, seed)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            rows.push(metrics_row("two_frame", "full", label, seed, &report.full.metrics));
            rows.push(metrics_row(
                "two_frame",
                "two_frame",
                label,
                seed,
                &report.two_frame.metrics,
            ));
            summary.push_str(&format!(
                "{label},{seed},{:.4},{:.4}\n",
                report.ade_degradation_pct, report.fde_degradation_pct
            ));
            per_seed.push(report.ade_degradation_pct);
        }
        degr.push((label.to_string(), per_seed));
    }
    write_metrics_csv(&cfg.output_dir.join("twoframe_ablation.csv"), &rows)?;
    write_text(&cfg.output_dir.join("twoframe_summary.csv"), &summary)?;
    let labels: Vec<String> = degr.iter().map(|(l, _)| l.clone()).collect();
    let medians: Vec<f64> = degr.iter().map(|(_, v)| median(v)).collect();
    let seeds: Vec<Vec<f64>> = degr.iter().map(|(_, v)| v.clone()).collect();
    write_text(
        &cfg.output_dir.join("twoframe_ablation.svg"),
        &svg::bar_chart(
            "Two-frame ADE degradation",
            "degradation (%)",
            &labels,
            &medians,
            &seeds,
        ),
    )?;
    for (label, vals) in &degr {
        println!("twoframe {label}: median ADE degradation {:.2}%", median(vals));
    }
    Ok(())
}

fn cmd_ablate_fewshot(
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
    budget: &Budget,
) -> Result<(), CliError> {
    let (pretrain_pool, _) = ablation_corpus(cfg)?;
    let target_spec = cfg
        .ablate
        .target_gen
        .as_ref()
        .ok_or_else(|| CliError::config("fewshot needs `ablate.target_gen`".into()))?;
    let window = cfg.ablate.window.as_ref().unwrap();
    let target_scenes = generate(target_spec);
    let n_test = ((target_scenes.len() as f64 * cfg.ablate.test_fraction).ceil() as usize)
        .max(1)
        .min(target_scenes.len().saturating_sub(1));
    let (tr, te) = target_scenes.split_at(target_scenes.len() - n_test);
    let target_train = windows_from_scenes(tr, window)?;
    let target_test = windows_from_scenes(te, window)?;

    let mut rows = Vec::new();
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for init_label in ["pretrained", "scratch"] {
        let mut per_n: Vec<Vec<f64>> = vec![Vec::new(); cfg.ablate.fewshot_ns.len()];
        for s in 0..budget.n_seeds {
            let seed = budget.base_seed + s as u64;
            let mut mc = model_cfg.clone();
            mc.seed = seed;
            let init = if init_label == "pretrained" {
                let mut plan = TrainPlan::new(vec![TrainSource::new("pretrain", pretrain_pool.clone())]);
                plan.epochs = budget.epochs;
                plan.batch_size = budget.batch_size;
                plan.phase = Phase::Pretrain;
                plan.seed = seed;
                plan.val_fraction = 0.0;
                train_from(&plan, &mc, None)
                    .map_err(|e| CliError::runtime(e.to_string()))?
                    .weights
            } else {
                ModelWeights::init(&mc)
            };
            let mut ft_budget = budget.clone();
            ft_budget.base_seed = seed;
            ft_budget.phase = Phase::Finetune;
            let points = few_shot_finetune(
                &init,
                &mc,
                &target_train,
                &target_test,
                &cfg.ablate.fewshot_ns,
                &ft_budget,
            )
            .map_err(|e| CliError::runtime(e.to_string()))?;
            for (i, p) in points.iter().enumerate() {
                per_n[i].push(p.min_ade_k);
                let m = omnitraj_core::metrics::SetupMetrics {
                    ade: p.ade,
                    fde: 0.0,
                    min_ade_k: p.min_ade_k,
                    min_fde_k: 0.0,
                    n_samples: target_test.len(),
                };
                rows.push(metrics_row(
                    "few_shot",
                    &format!("n{}", p.n),
                    init_label,
                    seed,
                    &m,
                ));
            }
        }
        let pts: Vec<(f64, f64)> = cfg
            .ablate
            .fewshot_ns
            .iter()
            .zip(&per_n)
            .map(|(&n, vals)| (n as f64, median(vals)))
            .collect();
        series.push((init_label.to_string(), pts));
    }
    write_metrics_csv(&cfg.output_dir.join("fewshot.csv"), &rows)?;
    write_text(
        &cfg.output_dir.join("fewshot.svg"),
        &svg::line_chart("Few-shot fine-tuning", "minADE_K (m)", &series),
    )?;
    for (label, pts) in &series {
        let txt: Vec<String> = pts.iter().map(|(n, v)| format!("n={n}: {v:.4}")).collect();
        println!("fewshot {label}: {}", txt.join("  "));
    }
    Ok(())
}

fn print_table(table: &AblationTable) {
    for label in table.labels() {
        println!(
            "{} {}: median minADE {:.4} m (seeds: {})",
            table.name,
            label,
            table.median_of(&label, |m| m.min_ade_k),
            table
                .seed_values(&label, |m| m.min_ade_k)
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
}

