//! Shared fixtures for the criterion benches.

use omnitraj_core::data::{normalize, SampleWindow};
use omnitraj_core::model::ModelConfig;
use omnitraj_core::synth::{build_cross_setup_benchmark, GenKind, GenSpec};

/// A small turning-corpus sample at Setup-1 geometry, normalized.
pub fn bench_sample() -> SampleWindow {
    let mut spec = GenSpec::new(GenKind::Turning);
    spec.n_scenes = 8;
    spec.n_agents = 2;
    spec.seed = 42;
    let bench = build_cross_setup_benchmark(&spec, 0.25).expect("benchmark");
    normalize(&bench.train[0])
}

/// The tiny-config model used throughout the benches.
pub fn bench_config() -> ModelConfig {
    let mut cfg = ModelConfig::with_dims(64, 7);
    cfg.cues_enabled = [omnitraj_core::data::CueKind::T].into_iter().collect();
    cfg
}
