//! Deterministic synthetic scene generators and the cross-setup zero-shot
//! benchmark builder.
//!
//! Scenes are generated at a base rate of 25 fps so the three canonical
//! setups (5 / 2.5 / 1 fps) are exact decimations. Constant-velocity and
//! turning agents are evaluated in closed form at `t = frame / fps`, which
//! makes "generate at 25 fps then decimate" bit-identical to "generate on
//! the coarser grid directly" when noise is off. The social generator
//! integrates capped inverse-square repulsion with explicit Euler at the
//! base rate.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    extract_windows, resample, AgentTrack, CueArray, CueKind, SampleWindow, SceneRecord,
};
use crate::error::DataError;
use crate::threads;

/// Scenario family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    ConstVelocity,
    Turning,
    Social,
}

impl GenKind {
    fn tag(&self) -> &'static str {
        match self {
            GenKind::ConstVelocity => "cv",
            GenKind::Turning => "turn",
            GenKind::Social => "soc",
        }
    }
}

/// Generator specification. Identical specs (seed included) produce
/// bit-identical output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub kind: GenKind,
    #[serde(default = "default_n_scenes")]
    pub n_scenes: usize,
    #[serde(default = "default_n_agents")]
    pub n_agents: usize,
    #[serde(default = "default_base_fps")]
    pub base_fps: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_speed_range")]
    pub speed_range: [f64; 2],
    #[serde(default = "default_turn_rate_range")]
    pub turn_rate_range: [f64; 2],
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_scenes() -> usize {
    100
}
fn default_n_agents() -> usize {
    2
}
fn default_base_fps() -> f64 {
    25.0
}
fn default_duration() -> f64 {
    6.4
}
fn default_speed_range() -> [f64; 2] {
    [0.5, 2.0]
}
fn default_turn_rate_range() -> [f64; 2] {
    [-1.25, 1.25]
}

impl GenSpec {
    pub fn new(kind: GenKind) -> Self {
        Self {
            kind,
            n_scenes: default_n_scenes(),
            n_agents: default_n_agents(),
            base_fps: default_base_fps(),
            duration_s: default_duration(),
            speed_range: default_speed_range(),
            turn_rate_range: default_turn_rate_range(),
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_scenes < 1 {
            return Err(DataError::Invalid("n_scenes must be >= 1".into()));
        }
        if self.n_agents < 1 {
            return Err(DataError::Invalid("n_agents must be >= 1".into()));
        }
        if self.base_fps <= 0.0 {
            return Err(DataError::Invalid("base_fps must be positive".into()));
        }
        if self.duration_s <= 0.0 {
            return Err(DataError::Invalid("duration_s must be positive".into()));
        }
        if self.speed_range[0] < 0.0 || self.speed_range[0] > self.speed_range[1] {
            return Err(DataError::Invalid("speed_range must be 0 <= v_min <= v_max".into()));
        }
        if self.turn_rate_range[0] > self.turn_rate_range[1] {
            return Err(DataError::Invalid("turn_rate_range must be ordered".into()));
        }
        if self.noise_std < 0.0 {
            return Err(DataError::Invalid("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    fn n_frames(&self) -> usize {
        (self.duration_s * self.base_fps).floor() as usize
    }
}

/// Kinematic parameters of one generated agent.
#[derive(Debug, Clone, Copy)]
pub struct AgentParams {
    pub start: [f64; 2],
    pub speed: f64,
    pub heading: f64,
    pub turn_rate: f64,
}

/// Closed-form straight-line position at time `t` seconds.
pub fn eval_const_velocity(p: &AgentParams, t: f64) -> [f64; 2] {
    [
        p.start[0] + p.speed * t * p.heading.cos(),
        p.start[1] + p.speed * t * p.heading.sin(),
    ]
}

/// Closed-form constant-turn-rate position at time `t` seconds; the path is
/// a circle of radius `speed / turn_rate`. Near-zero rates fall back to the
/// straight line.
pub fn eval_turning(p: &AgentParams, t: f64) -> [f64; 2] {
    if p.turn_rate.abs() < 1e-9 {
        return eval_const_velocity(p, t);
    }
    let r = p.speed / p.turn_rate;
    let theta = p.heading + p.turn_rate * t;
    [
        p.start[0] + r * (theta.sin() - p.heading.sin()),
        p.start[1] - r * (theta.cos() - p.heading.cos()),
    ]
}

const START_BOX_HALF: f64 = 10.0;
const REPULSION_GAIN: f64 = 1.0; // m^3/s^2
const REPULSION_CAP: f64 = 2.0; // m/s^2, keeps Euler stable at 25 fps

fn sample_params(rng: &mut ChaCha8Rng, spec: &GenSpec) -> AgentParams {
    AgentParams {
        start: [
            rng.gen_range(-START_BOX_HALF..START_BOX_HALF),
            rng.gen_range(-START_BOX_HALF..START_BOX_HALF),
        ],
        speed: sample_range(rng, spec.speed_range),
        heading: rng.gen_range(0.0..std::f64::consts::TAU),
        turn_rate: sample_range(rng, spec.turn_rate_range),
    }
}

fn sample_range(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Explicit-Euler integration of capped inverse-square repulsion.
/// Returns positions per agent per frame. A gain of zero gives the
/// force-free reference paths.
pub fn integrate_social(
    starts: &[[f64; 2]],
    velocities: &[[f64; 2]],
    fps: f64,
    n_frames: usize,
    gain: f64,
    cap: f64,
) -> Vec<Vec<[f64; 2]>> {
    let n = starts.len();
    let dt = 1.0 / fps;
    let mut pos = starts.to_vec();
    let mut vel = velocities.to_vec();
    let mut out: Vec<Vec<[f64; 2]>> = vec![Vec::with_capacity(n_frames); n];
    for _ in 0..n_frames {
        for (i, p) in pos.iter().enumerate() {
            out[i].push(*p);
        }
        let mut acc = vec![[0.0f64; 2]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dx = pos[i][0] - pos[j][0];
                let dy = pos[i][1] - pos[j][1];
                let d2 = dx * dx + dy * dy;
                let d = d2.sqrt();
                if d < 1e-9 {
                    continue;
                }
                let mag = (gain / d2).min(cap);
                acc[i][0] += mag * dx / d;
                acc[i][1] += mag * dy / d;
            }
        }
        for i in 0..n {
            vel[i][0] += acc[i][0] * dt;
            vel[i][1] += acc[i][1] * dt;
            pos[i][0] += vel[i][0] * dt;
            pos[i][1] += vel[i][1] * dt;
        }
    }
    out
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates `spec.n_scenes` scenes; per-scene seeds derive as
/// `seed XOR scene_index`, so scenes are independent of generation order.
pub fn generate(spec: &GenSpec) -> Vec<SceneRecord> {
    spec.validate().expect("GenSpec validated at construction");
    threads::run(|| {
        (0..spec.n_scenes)
            .into_par_iter()
            .map(|i| generate_scene(spec, i))
            .collect()
    })
}

fn generate_scene(spec: &GenSpec, index: usize) -> SceneRecord {
    let scene_seed = spec.seed ^ index as u64;
    let n_frames = spec.n_frames();
    let params: Vec<AgentParams> = (0..spec.n_agents)
        .map(|a| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(scene_seed, 1000 + a as u64));
            sample_params(&mut rng, spec)
        })
        .collect();

    let mut tracks: Vec<Vec<[f64; 2]>> = match spec.kind {
        GenKind::ConstVelocity => params
            .iter()
            .map(|p| {
                (0..n_frames)
                    .map(|f| eval_const_velocity(p, f as f64 / spec.base_fps))
                    .collect()
            })
            .collect(),
        GenKind::Turning => params
            .iter()
            .map(|p| {
                (0..n_frames)
                    .map(|f| eval_turning(p, f as f64 / spec.base_fps))
                    .collect()
            })
            .collect(),
        GenKind::Social => {
            let starts: Vec<[f64; 2]> = params.iter().map(|p| p.start).collect();
            let vels: Vec<[f64; 2]> = params
                .iter()
                .map(|p| [p.speed * p.heading.cos(), p.speed * p.heading.sin()])
                .collect();
            integrate_social(
                &starts,
                &vels,
                spec.base_fps,
                n_frames,
                REPULSION_GAIN,
                REPULSION_CAP,
            )
        }
    };

    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).expect("noise std");
        for (a, track) in tracks.iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(scene_seed, 2000 + a as u64));
            for p in track.iter_mut() {
                p[0] += normal.sample(&mut rng);
                p[1] += normal.sample(&mut rng);
            }
        }
    }

    let agents = tracks
        .into_iter()
        .enumerate()
        .map(|(a, track)| {
            let mut cues = BTreeMap::new();
            cues.insert(
                CueKind::T,
                CueArray {
                    elements: 1,
                    features: 2,
                    data: track.iter().flat_map(|p| [p[0], p[1]]).collect(),
                },
            );
            AgentTrack {
                agent_id: format!("a{a}"),
                frames: (0..n_frames as i64).collect(),
                cues,
                present: vec![true; n_frames],
            }
        })
        .collect();

    SceneRecord {
        scene_id: format!("{}-{:06}", spec.kind.tag(), index),
        base_fps: spec.base_fps,
        agents,
        source_tag: format!("synth:{}", spec.kind.tag()),
    }
}

/// Adds a synthetic 3D pose cue: a zero-centroid skeleton template rotated
/// to the heading, with a small gait oscillation phase-locked to distance
/// traveled. Keypoints are stored as offsets from the trajectory point and
/// re-centered per frame, so they average to it exactly.
pub fn attach_synthetic_pose(scene: &SceneRecord, e_keypoints: usize, seed: u64) -> SceneRecord {
    let template = skeleton_template(e_keypoints);
    let mut out = scene.clone();
    for (ai, agent) in out.agents.iter_mut().enumerate() {
        let n = agent.frames.len();
        let t_cue = agent.cues[&CueKind::T].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3000 + ai as u64));
        let phase0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

        let mut data = Vec::with_capacity(n * e_keypoints * 3);
        let mut dist_traveled = 0.0;
        let mut prev_heading = 0.0;
        for f in 0..n {
            let here = t_cue.frame(f);
            let next = t_cue.frame(if f + 1 < n { f + 1 } else { f });
            let (dx, dy) = (next[0] - here[0], next[1] - here[1]);
            let step = (dx * dx + dy * dy).sqrt();
            let speed = step * scene.base_fps;
            let heading = if speed > 1e-9 {
                prev_heading = dy.atan2(dx);
                prev_heading
            } else {
                prev_heading
            };
            if f > 0 {
                let prev = t_cue.frame(f - 1);
                let (pdx, pdy) = (here[0] - prev[0], here[1] - prev[1]);
                dist_traveled += (pdx * pdx + pdy * pdy).sqrt();
            }
            let phase = phase0 + std::f64::consts::TAU * dist_traveled / 0.7;
            let amp = 0.04 * speed.min(2.0);
            let (ch, sh) = (heading.cos(), heading.sin());

            let mut frame_kps = Vec::with_capacity(e_keypoints);
            let mut centroid = [0.0f64; 3];
            for (k, kp) in template.iter().enumerate() {
                // template frame: +x forward, +y left; rotate into world
                let swing = if k % 2 == 0 { 1.0 } else { -1.0 };
                let fx = kp[0] + amp * swing * phase.sin();
                let wx = ch * fx - sh * kp[1];
                let wy = sh * fx + ch * kp[1];
                let wz = kp[2];
                centroid[0] += wx;
                centroid[1] += wy;
                centroid[2] += wz;
                frame_kps.push([wx, wy, wz]);
            }
            for c in centroid.iter_mut() {
                *c /= e_keypoints as f64;
            }
            for kp in frame_kps {
                data.push(kp[0] - centroid[0]);
                data.push(kp[1] - centroid[1]);
                data.push(kp[2] - centroid[2]);
            }
        }
        agent.cues.insert(
            CueKind::P3,
            CueArray {
                elements: e_keypoints,
                features: 3,
                data,
            },
        );
    }
    out
}

/// Zero-centroid skeleton template. 17 keypoints follow a rough human
/// layout; other counts fall back to a deterministic spherical spiral.
pub fn skeleton_template(e: usize) -> Vec<[f64; 3]> {
    let mut kps: Vec<[f64; 3]> = if e == 17 {
        vec![
            [0.05, 0.00, 0.70],  // nose
            [0.04, 0.03, 0.73],  // left eye
            [0.04, -0.03, 0.73], // right eye
            [0.00, 0.07, 0.70],  // left ear
            [0.00, -0.07, 0.70], // right ear
            [0.00, 0.20, 0.50],  // left shoulder
            [0.00, -0.20, 0.50], // right shoulder
            [0.02, 0.25, 0.25],  // left elbow
            [0.02, -0.25, 0.25], // right elbow
            [0.05, 0.27, 0.00],  // left wrist
            [0.05, -0.27, 0.00], // right wrist
            [0.00, 0.13, 0.00],  // left hip
            [0.00, -0.13, 0.00], // right hip
            [0.02, 0.15, -0.45], // left knee
            [0.02, -0.15, -0.45],// right knee
            [0.00, 0.16, -0.85], // left ankle
            [0.00, -0.16, -0.85],// right ankle
        ]
    } else {
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        (0..e)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / e as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                [0.5 * r * th.cos(), 0.5 * r * th.sin(), 0.5 * z]
            })
            .collect()
    };
    let mut c = [0.0f64; 3];
    for kp in &kps {
        for d in 0..3 {
            c[d] += kp[d];
        }
    }
    for d in 0..3 {
        c[d] /= kps.len() as f64;
    }
    for kp in kps.iter_mut() {
        for d in 0..3 {
            kp[d] -= c[d];
        }
    }
    kps
}

/// One temporal evaluation setup.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchmarkSetup {
    pub name: String,
    pub fps: f64,
    pub t_obs: usize,
    pub t_pred: usize,
}

impl BenchmarkSetup {
    pub fn new(name: &str, fps: f64, t_obs: usize, t_pred: usize) -> Self {
        Self {
            name: name.to_string(),
            fps,
            t_obs,
            t_pred,
        }
    }
}

/// The three canonical setups: (5 fps, 10 obs, 20 pred),
/// (2.5 fps, 4 obs, 8 pred), (1 fps, 3 obs, 3 pred).
pub fn canonical_setups() -> [BenchmarkSetup; 3] {
    [
        BenchmarkSetup::new("setup1", 5.0, 10, 20),
        BenchmarkSetup::new("setup2", 2.5, 4, 8),
        BenchmarkSetup::new("setup3", 1.0, 3, 3),
    ]
}

/// Train/test sample sets for the cross-setup zero-shot study. Training
/// holds Setup 1 and Setup 2 windows; test holds Setup 3 windows from a
/// disjoint set of scenes.
#[derive(Debug, Clone)]
pub struct CrossSetupBenchmark {
    pub train: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
    pub train_scene_ids: Vec<String>,
    pub test_scene_ids: Vec<String>,
}

/// Builds the benchmark. The last `ceil(n_scenes * test_fraction)` scenes
/// form the test split. Divisibility failures propagate as resample errors.
pub fn build_cross_setup_benchmark(
    spec: &GenSpec,
    test_fraction: f64,
) -> Result<CrossSetupBenchmark, DataError> {
    assert!(
        (0.0..1.0).contains(&test_fraction),
        "test_fraction must be in [0, 1)"
    );
    let scenes = generate(spec);
    let n_test = ((scenes.len() as f64 * test_fraction).ceil() as usize)
        .max(1)
        .min(scenes.len().saturating_sub(1));
    let split_at = scenes.len() - n_test;
    let (train_scenes, test_scenes) = scenes.split_at(split_at);
    let [s1, s2, s3] = canonical_setups();

    let mut train = Vec::new();
    for setup in [&s1, &s2] {
        for scene in train_scenes {
            let decimated = resample(scene, setup.fps)?;
            train.extend(extract_windows(
                &decimated,
                setup.t_obs,
                setup.t_pred,
                setup.t_obs + setup.t_pred,
            ));
        }
    }
    let mut test = Vec::new();
    for scene in test_scenes {
        let decimated = resample(scene, s3.fps)?;
        test.extend(extract_windows(
            &decimated,
            s3.t_obs,
            s3.t_pred,
            s3.t_obs + s3.t_pred,
        ));
    }
    Ok(CrossSetupBenchmark {
        train,
        test,
        train_scene_ids: train_scenes.iter().map(|s| s.scene_id.clone()).collect(),
        test_scene_ids: test_scenes.iter().map(|s| s.scene_id.clone()).collect(),
    })
}
