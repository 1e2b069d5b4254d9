//! Run configuration: one JSON document drives every subcommand. Unknown
//! keys are rejected; the resolved document (defaults filled, seeds
//! propagated) is written to the output directory before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use omnitraj_core::model::ModelConfig;
use omnitraj_core::synth::GenSpec;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ablate: AblateSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Scene generator for `gen` and for ablation corpora.
    #[serde(default)]
    pub gen: Option<GenSpec>,
    /// Attach a synthetic 3D pose cue to generated scenes.
    #[serde(default)]
    pub pose: Option<PoseSection>,
    /// NDJSON output name for `gen` (relative to output_dir).
    #[serde(default = "default_scenes_out")]
    pub scenes_out: String,
    /// Inputs for `ingest`.
    #[serde(default)]
    pub ingest: Option<IngestSection>,
    /// Sample sources for `train`.
    #[serde(default)]
    pub train_sources: Vec<SourceSection>,
    /// Sample source for `eval`.
    #[serde(default)]
    pub eval_source: Option<SourceSection>,
}

fn default_scenes_out() -> String {
    "scenes.ndjson".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSection {
    #[serde(default = "default_keypoints")]
    pub e_keypoints: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_keypoints() -> usize {
    17
}

/// Frame-rate / horizon window applied when turning scenes into samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub fps: f64,
    pub t_obs: usize,
    pub t_pred: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub inputs: Vec<PathBuf>,
    pub window: WindowSection,
    /// Cache output path (relative to output_dir unless absolute).
    #[serde(default = "default_cache_out")]
    pub cache_out: String,
}

fn default_cache_out() -> String {
    "samples.uhm2".into()
}

/// One sample source: either a binary cache or NDJSON scenes plus a window.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub name: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub ndjson: Option<PathBuf>,
    #[serde(default)]
    pub window: Option<WindowSection>,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_phase")]
    pub phase: omnitraj_core::model::Phase,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_cadence")]
    pub eval_cadence: usize,
    /// Continue from output_dir/checkpoint.otck when present.
    #[serde(default)]
    pub resume: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            phase: default_phase(),
            val_fraction: default_val_fraction(),
            eval_cadence: default_cadence(),
            resume: false,
        }
    }
}

fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    32
}
fn default_phase() -> omnitraj_core::model::Phase {
    omnitraj_core::model::Phase::Pretrain
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_cadence() -> usize {
    1
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_setup_name")]
    pub setup: String,
}

fn default_setup_name() -> String {
    "eval".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    #[serde(default = "default_ablate_epochs")]
    pub epochs: usize,
    #[serde(default = "default_ablate_batch")]
    pub batch_size: usize,
    #[serde(default = "default_seeds")]
    pub n_seeds: usize,
    /// Scene fraction held out as the test split.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Window for corpus-based ablations (decoupled, mask, twoframe).
    #[serde(default)]
    pub window: Option<WindowSection>,
    /// Temporal masking ratios for `ablate mask`.
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    /// Sample counts for `ablate fewshot`.
    #[serde(default = "default_ns")]
    pub fewshot_ns: Vec<usize>,
    /// Target-domain generator for `ablate fewshot`.
    #[serde(default)]
    pub target_gen: Option<GenSpec>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            epochs: default_ablate_epochs(),
            batch_size: default_ablate_batch(),
            n_seeds: default_seeds(),
            test_fraction: default_test_fraction(),
            window: None,
            ratios: default_ratios(),
            fewshot_ns: default_ns(),
            target_gen: None,
        }
    }
}

fn default_ablate_epochs() -> usize {
    8
}
fn default_ablate_batch() -> usize {
    16
}
fn default_seeds() -> usize {
    3
}
fn default_test_fraction() -> f64 {
    1.0 / 7.0
}
fn default_ratios() -> Vec<f64> {
    vec![0.10, 0.25, 0.50, 0.75, 0.90]
}
fn default_ns() -> Vec<usize> {
    vec![2, 8, 32, 128, 200]
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn load(path: &Path, seed_override: Option<u64>, out_override: Option<PathBuf>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        if let Some(out) = out_override {
            cfg.output_dir = out;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Fills derived defaults: sub-seeds left at 0 draw from the master seed.
    fn resolve(&mut self) -> Result<(), CliError> {
        if let Some(gen) = &mut self.data.gen {
            if gen.seed == 0 {
                gen.seed = self.seed;
            }
            gen.validate()
                .map_err(|e| CliError::config(format!("data.gen: {e}")))?;
        }
        if let Some(model) = &mut self.model {
            if model.seed == 0 {
                model.seed = mix(self.seed, 1);
            }
            model
                .validate()
                .map_err(|e| CliError::config(format!("model: {e}")))?;
        }
        if let Some(target) = &mut self.ablate.target_gen {
            if target.seed == 0 {
                target.seed = mix(self.seed, 2);
            }
            target
                .validate()
                .map_err(|e| CliError::config(format!("ablate.target_gen: {e}")))?;
        }
        for src in &self.data.train_sources {
            src.check()?;
        }
        if let Some(src) = &self.data.eval_source {
            src.check()?;
        }
        Ok(())
    }

    /// Seed for the training loop's shuffling and masking draws.
    pub fn train_seed(&self) -> u64 {
        mix(self.seed, 3)
    }

    /// Writes the resolved config verbatim into the output directory.
    pub fn write_resolved(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.output_dir)
            .map_err(|e| CliError::runtime(format!("cannot create output_dir: {e}")))?;
        let path = self.output_dir.join("resolved.json");
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(&path, json)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn in_output_dir(&self, name: &str) -> PathBuf {
        let p = Path::new(name);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.output_dir.join(p)
        }
    }
}

impl SourceSection {
    fn check(&self) -> Result<(), CliError> {
        match (&self.cache, &self.ndjson) {
            (Some(_), None) => Ok(()),
            (None, Some(_)) if self.window.is_some() => Ok(()),
            (None, Some(_)) => Err(CliError::config(format!(
                "source {}: ndjson input needs a window",
                self.name
            ))),
            (Some(_), Some(_)) => Err(CliError::config(format!(
                "source {}: give either cache or ndjson, not both",
                self.name
            ))),
            (None, None) => Err(CliError::config(format!(
                "source {}: needs cache or ndjson",
                self.name
            ))),
        }
    }
}
