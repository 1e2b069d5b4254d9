use criterion::{criterion_group, criterion_main, Criterion};

use omnitraj_core::data::cache::{cache_read, cache_write};
use omnitraj_core::data::{extract_windows, resample};
use omnitraj_core::synth::{generate, GenKind, GenSpec};

fn bench_generate(c: &mut Criterion) {
    let mut spec = GenSpec::new(GenKind::Social);
    spec.n_scenes = 20;
    spec.n_agents = 6;
    c.bench_function("generate_20_social_scenes", |b| {
        b.iter(|| generate(std::hint::black_box(&spec)))
    });
}

fn bench_windowing(c: &mut Criterion) {
    let mut spec = GenSpec::new(GenKind::Turning);
    spec.n_scenes = 10;
    spec.n_agents = 3;
    let scenes = generate(&spec);
    c.bench_function("resample_and_window", |b| {
        b.iter(|| {
            scenes
                .iter()
                .flat_map(|s| {
                    let d = resample(s, 5.0).unwrap();
                    extract_windows(&d, 10, 20, 5)
                })
                .count()
        })
    });
}

fn bench_cache(c: &mut Criterion) {
    let mut spec = GenSpec::new(GenKind::Turning);
    spec.n_scenes = 10;
    spec.n_agents = 3;
    let samples: Vec<_> = generate(&spec)
        .iter()
        .flat_map(|s| {
            let d = resample(s, 5.0).unwrap();
            extract_windows(&d, 10, 20, 5)
        })
        .collect();
    let dir = tempfile_dir();
    let path = dir.join("bench.uhm2");
    c.bench_function("cache_roundtrip", |b| {
        b.iter(|| {
            cache_write(&samples, &path).unwrap();
            cache_read(&path).unwrap()
        })
    });
    let _ = std::fs::remove_dir_all(&dir);
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("omnitraj-bench-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

criterion_group!(benches, bench_generate, bench_windowing, bench_cache);
criterion_main!(benches);
