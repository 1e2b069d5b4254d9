//! Frame-rate- and horizon-agnostic data container.
//!
//! Scenes live on a single integer frame grid at `base_fps`; agent tracks
//! carry per-frame cue channels (trajectory, pose, boxes). Resampling is
//! integer decimation only — ground truth stays exact and non-integer
//! ratios are rejected. Windows are extracted per (ego, start frame) and
//! quantize to f32 storage, which is also the cache precision, so the
//! binary cache round-trips bit-exactly.
//!
//! All operations are pure; records are immutable after construction and
//! safe to share across threads.

pub mod cache;
pub mod ingest;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// One input channel per agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CueKind {
    /// Planar trajectory, e = 1, f = 2 (meters).
    T,
    /// 3D pose keypoints stored as offsets from the trajectory point, f = 3.
    P3,
    /// 2D pose keypoints, f = 2.
    P2,
    /// 3D bounding box, e = 1, f = 6.
    B3,
    /// 2D bounding box, e = 1, f = 4.
    B2,
}

impl CueKind {
    pub const ALL: [CueKind; 5] = [CueKind::T, CueKind::P3, CueKind::P2, CueKind::B3, CueKind::B2];

    pub fn as_str(&self) -> &'static str {
        match self {
            CueKind::T => "T",
            CueKind::P3 => "P3",
            CueKind::P2 => "P2",
            CueKind::B3 => "B3",
            CueKind::B2 => "B2",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            CueKind::T => 0,
            CueKind::P3 => 1,
            CueKind::P2 => 2,
            CueKind::B3 => 3,
            CueKind::B2 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<CueKind> {
        CueKind::ALL.iter().copied().find(|c| c.code() == code)
    }
}

impl std::fmt::Display for CueKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-track cue payload: `n_frames * elements * features` values aligned
/// with the track's frame list.
#[derive(Debug, Clone, PartialEq)]
pub struct CueArray {
    pub elements: usize,
    pub features: usize,
    pub data: Vec<f64>,
}

impl CueArray {
    pub fn frame_stride(&self) -> usize {
        self.elements * self.features
    }

    /// Values for one frame index (track-local).
    pub fn frame(&self, idx: usize) -> &[f64] {
        let s = self.frame_stride();
        &self.data[idx * s..(idx + 1) * s]
    }
}

/// One agent's track on the scene's frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: String,
    /// Sorted global frame indices this track spans.
    pub frames: Vec<i64>,
    pub cues: BTreeMap<CueKind, CueArray>,
    /// Per-frame validity aligned with `frames`.
    pub present: Vec<bool>,
}

impl AgentTrack {
    /// Track-local index of a global frame, if the track covers it.
    pub fn frame_pos(&self, frame: i64) -> Option<usize> {
        self.frames.binary_search(&frame).ok()
    }

    pub fn valid_at(&self, frame: i64) -> bool {
        self.frame_pos(frame).map(|i| self.present[i]).unwrap_or(false)
    }

    /// Planar position at a global frame (trajectory cue), if valid.
    pub fn xy_at(&self, frame: i64) -> Option<[f64; 2]> {
        let pos = self.frame_pos(frame)?;
        if !self.present[pos] {
            return None;
        }
        let t = self.cues.get(&CueKind::T)?;
        let v = t.frame(pos);
        Some([v[0], v[1]])
    }
}

/// A timestamped multi-agent scene at a base frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    pub base_fps: f64,
    pub agents: Vec<AgentTrack>,
    pub source_tag: String,
}

impl SceneRecord {
    /// Inclusive global frame span over all agents.
    pub fn frame_span(&self) -> Option<(i64, i64)> {
        let lo = self.agents.iter().filter_map(|a| a.frames.first()).min()?;
        let hi = self.agents.iter().filter_map(|a| a.frames.last()).max()?;
        Some((*lo, *hi))
    }

    pub fn n_frames(&self) -> usize {
        match self.frame_span() {
            Some((lo, hi)) => (hi - lo + 1) as usize,
            None => 0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.base_fps <= 0.0 {
            return Err(DataError::Invalid("base_fps must be positive".into()));
        }
        if self.agents.is_empty() {
            return Err(DataError::Invalid("scene must hold at least one agent".into()));
        }
        for agent in &self.agents {
            if agent.frames.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DataError::Invalid(format!(
                    "agent {}: frames must be strictly increasing",
                    agent.agent_id
                )));
            }
            if agent.present.len() != agent.frames.len() {
                return Err(DataError::Invalid(format!(
                    "agent {}: present mask length mismatch",
                    agent.agent_id
                )));
            }
            for (kind, cue) in &agent.cues {
                if cue.data.len() != agent.frames.len() * cue.frame_stride() {
                    return Err(DataError::Invalid(format!(
                        "agent {}: cue {kind} length mismatch",
                        agent.agent_id
                    )));
                }
            }
            match agent.cues.get(&CueKind::T) {
                Some(t) if t.elements == 1 && t.features == 2 => {}
                Some(_) => {
                    return Err(DataError::Invalid(format!(
                        "agent {}: trajectory cue must have e=1, f=2",
                        agent.agent_id
                    )))
                }
                None => {
                    return Err(DataError::Invalid(format!(
                        "agent {}: trajectory cue missing",
                        agent.agent_id
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Keeps every k-th frame starting from global frame 0; cue values at kept
/// frames are bit-identical to the input. The fps ratio must be an integer
/// within relative tolerance 1e-9.
pub fn resample(scene: &SceneRecord, target_fps: f64) -> Result<SceneRecord, DataError> {
    if target_fps <= 0.0 {
        return Err(DataError::Invalid("target_fps must be positive".into()));
    }
    let ratio = scene.base_fps / target_fps;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
        return Err(DataError::NonIntegerRatio {
            base_fps: scene.base_fps,
            target_fps,
        });
    }
    let k = k as i64;
    let agents = scene
        .agents
        .iter()
        .map(|agent| {
            let kept: Vec<usize> = agent
                .frames
                .iter()
                .enumerate()
                .filter(|(_, &f)| f.rem_euclid(k) == 0)
                .map(|(i, _)| i)
                .collect();
            let frames: Vec<i64> = kept.iter().map(|&i| agent.frames[i] / k).collect();
            let present: Vec<bool> = kept.iter().map(|&i| agent.present[i]).collect();
            let cues = agent
                .cues
                .iter()
                .map(|(kind, cue)| {
                    let mut data = Vec::with_capacity(kept.len() * cue.frame_stride());
                    for &i in &kept {
                        data.extend_from_slice(cue.frame(i));
                    }
                    (
                        *kind,
                        CueArray {
                            elements: cue.elements,
                            features: cue.features,
                            data,
                        },
                    )
                })
                .collect();
            AgentTrack {
                agent_id: agent.agent_id.clone(),
                frames,
                cues,
                present,
            }
        })
        .collect();
    Ok(SceneRecord {
        scene_id: scene.scene_id.clone(),
        base_fps: target_fps,
        agents,
        source_tag: scene.source_tag.clone(),
    })
}

/// Cue payload of one extracted window: `n_agents * t_obs * e * f` f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct CueWindow {
    pub elements: usize,
    pub features: usize,
    pub data: Vec<f32>,
}

impl CueWindow {
    pub fn frame_stride(&self) -> usize {
        self.elements * self.features
    }
}

/// One training/eval example. Observation tensors are quantized to f32 at
/// extraction; this is also the cache storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub fps: f32,
    pub t_obs: usize,
    pub t_pred: usize,
    pub ego_index: usize,
    pub n_agents: usize,
    pub obs: BTreeMap<CueKind, CueWindow>,
    /// Row-major [n_agents, t_obs] validity.
    pub obs_valid: Vec<bool>,
    /// Ego future positions, row-major [t_pred, 2].
    pub future: Vec<f32>,
    pub normalization_offset: [f32; 2],
}

impl SampleWindow {
    pub fn valid(&self, agent: usize, t: usize) -> bool {
        self.obs_valid[agent * self.t_obs + t]
    }

    /// Observed planar position of an agent at local time t.
    pub fn obs_xy(&self, agent: usize, t: usize) -> [f32; 2] {
        let tr = &self.obs[&CueKind::T];
        let s = tr.frame_stride();
        let off = (agent * self.t_obs + t) * s;
        [tr.data[off], tr.data[off + 1]]
    }

    pub fn future_xy(&self, t: usize) -> [f32; 2] {
        [self.future[2 * t], self.future[2 * t + 1]]
    }
}

/// Extracts every eligible window: the ego must be valid at its last
/// observed frame and present for the full future; neighbors with no valid
/// observed frame are dropped, gaps stay masked in `obs_valid`.
/// A scene shorter than `t_obs + t_pred` yields an empty list.
pub fn extract_windows(
    scene: &SceneRecord,
    t_obs: usize,
    t_pred: usize,
    stride: usize,
) -> Vec<SampleWindow> {
    assert!(t_obs >= 2, "t_obs must be >= 2");
    assert!(t_pred >= 1, "t_pred must be >= 1");
    assert!(stride >= 1, "stride must be >= 1");
    let mut out = Vec::new();
    let Some((lo, hi)) = scene.frame_span() else {
        return out;
    };
    let window = (t_obs + t_pred) as i64;
    if hi - lo + 1 < window {
        return out;
    }
    // Union of cue kinds with their dims; agents lacking a cue contribute zeros.
    let mut cue_dims: BTreeMap<CueKind, (usize, usize)> = BTreeMap::new();
    for agent in &scene.agents {
        for (kind, cue) in &agent.cues {
            cue_dims.entry(*kind).or_insert((cue.elements, cue.features));
        }
    }

    for (ego_idx, _) in scene.agents.iter().enumerate() {
        let mut start = lo;
        while start + window <= hi + 1 {
            if let Some(w) = try_window(scene, &cue_dims, ego_idx, start, t_obs, t_pred) {
                out.push(w);
            }
            start += stride as i64;
        }
    }
    out
}

fn try_window(
    scene: &SceneRecord,
    cue_dims: &BTreeMap<CueKind, (usize, usize)>,
    ego_idx: usize,
    start: i64,
    t_obs: usize,
    t_pred: usize,
) -> Option<SampleWindow> {
    let ego = &scene.agents[ego_idx];
    let last_obs = start + t_obs as i64 - 1;
    if !ego.valid_at(last_obs) {
        return None;
    }
    for t in 0..t_pred {
        if !ego.valid_at(start + (t_obs + t) as i64) {
            return None;
        }
    }
    // Included agents: ego plus neighbors with any valid observed frame,
    // in original scene order.
    let included: Vec<usize> = scene
        .agents
        .iter()
        .enumerate()
        .filter(|(i, a)| {
            *i == ego_idx || (0..t_obs).any(|t| a.valid_at(start + t as i64))
        })
        .map(|(i, _)| i)
        .collect();
    let n_agents = included.len();
    let ego_slot = included.iter().position(|&i| i == ego_idx).unwrap();

    let mut obs_valid = vec![false; n_agents * t_obs];
    let mut obs: BTreeMap<CueKind, CueWindow> = cue_dims
        .iter()
        .map(|(kind, &(e, f))| {
            (
                *kind,
                CueWindow {
                    elements: e,
                    features: f,
                    data: vec![0.0f32; n_agents * t_obs * e * f],
                },
            )
        })
        .collect();

    for (slot, &ai) in included.iter().enumerate() {
        let agent = &scene.agents[ai];
        for t in 0..t_obs {
            let frame = start + t as i64;
            let Some(pos) = agent.frame_pos(frame) else {
                continue;
            };
            if !agent.present[pos] {
                continue;
            }
            obs_valid[slot * t_obs + t] = true;
            for (kind, cue) in &agent.cues {
                let win = obs.get_mut(kind).unwrap();
                let stride = win.frame_stride();
                let dst = (slot * t_obs + t) * stride;
                for (j, &v) in cue.frame(pos).iter().enumerate() {
                    win.data[dst + j] = v as f32;
                }
            }
        }
    }

    let mut future = Vec::with_capacity(t_pred * 2);
    for t in 0..t_pred {
        let xy = ego.xy_at(start + (t_obs + t) as i64)?;
        future.push(xy[0] as f32);
        future.push(xy[1] as f32);
    }

    Some(SampleWindow {
        fps: scene.base_fps as f32,
        t_obs,
        t_pred,
        ego_index: ego_slot,
        n_agents,
        obs,
        obs_valid,
        future,
        normalization_offset: [0.0, 0.0],
    })
}

/// Translates all trajectory coordinates so the ego's last observed position
/// is the origin; the offset accumulates in `normalization_offset`. Pose
/// keypoints are stored relative to the trajectory point, so translation
/// leaves them unchanged.
pub fn normalize(sample: &SampleWindow) -> SampleWindow {
    let [ox, oy] = sample.obs_xy(sample.ego_index, sample.t_obs - 1);
    debug_assert!(
        sample.valid(sample.ego_index, sample.t_obs - 1),
        "ego last observed frame must be valid"
    );
    let mut out = sample.clone();
    if let Some(tr) = out.obs.get_mut(&CueKind::T) {
        for chunk in tr.data.chunks_mut(2) {
            chunk[0] -= ox;
            chunk[1] -= oy;
        }
    }
    for chunk in out.future.chunks_mut(2) {
        chunk[0] -= ox;
        chunk[1] -= oy;
    }
    out.normalization_offset = [
        sample.normalization_offset[0] + ox,
        sample.normalization_offset[1] + oy,
    ];
    out
}

/// Maps a predicted trajectory back into the raw scene frame.
pub fn denormalize_track(track: &[[f64; 2]], offset: [f32; 2]) -> Vec<[f64; 2]> {
    track
        .iter()
        .map(|p| [p[0] + offset[0] as f64, p[1] + offset[1] as f64])
        .collect()
}
