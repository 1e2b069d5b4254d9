//! NDJSON scene ingestion and emission.
//!
//! One scene per line:
//! `{"scene_id": str, "fps": number, "agents": [{"id": str, "frames": [int],
//!   "xy": [[x, y]], "pose3d": [[[x, y, z], ...]], ...}]}`
//!
//! Positions are meters on the base-fps integer frame grid. An `xy` entry
//! of `null` marks an absent frame. Optional cue keys: `pose3d`, `pose2d`,
//! `box3d`, `box2d`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentTrack, CueArray, CueKind, SceneRecord};
use crate::error::DataError;

#[derive(Debug, Serialize, Deserialize)]
struct RawScene {
    scene_id: String,
    fps: f64,
    #[serde(default)]
    source: String,
    agents: Vec<RawAgent>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawAgent {
    id: String,
    frames: Vec<i64>,
    xy: Vec<Option<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose3d: Option<Vec<Vec<[f64; 3]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose2d: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    box3d: Option<Vec<[f64; 6]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    box2d: Option<Vec<[f64; 4]>>,
}

/// Streams scenes from an NDJSON file; every well-formed line yields one
/// `SceneRecord` preserving all numeric values exactly.
pub fn ingest_ndjson(
    path: &Path,
) -> Result<impl Iterator<Item = Result<SceneRecord, DataError>>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line_no = i + 1;
            match line {
                Ok(text) if text.trim().is_empty() => None,
                Ok(text) => Some(parse_scene_line(&text, line_no)),
                Err(e) => Some(Err(DataError::Malformed {
                    line: line_no,
                    msg: e.to_string(),
                })),
            }
        }))
}

/// Collects a whole file, failing on the first bad line.
pub fn ingest_ndjson_all(path: &Path) -> Result<Vec<SceneRecord>, DataError> {
    ingest_ndjson(path)?.collect()
}

pub fn parse_scene_line(text: &str, line_no: usize) -> Result<SceneRecord, DataError> {
    let raw: RawScene = serde_json::from_str(text).map_err(|e| {
        if e.is_syntax() || e.is_eof() {
            DataError::Malformed {
                line: line_no,
                msg: e.to_string(),
            }
        } else {
            DataError::Schema {
                line: line_no,
                msg: e.to_string(),
            }
        }
    })?;
    raw_to_scene(raw, line_no)
}

fn raw_to_scene(raw: RawScene, line_no: usize) -> Result<SceneRecord, DataError> {
    let schema = |msg: String| DataError::Schema { line: line_no, msg };
    if raw.fps <= 0.0 {
        return Err(schema("base_fps must be positive".into()));
    }
    if raw.agents.is_empty() {
        return Err(schema("scene must hold at least one agent".into()));
    }
    let mut agents = Vec::with_capacity(raw.agents.len());
    for a in raw.agents {
        let n = a.frames.len();
        if a.xy.len() != n {
            return Err(schema(format!(
                "agent {}: xy has {} entries for {} frames",
                a.id,
                a.xy.len(),
                n
            )));
        }
        if a.frames.windows(2).any(|w| w[0] >= w[1]) {
            return Err(schema(format!(
                "agent {}: frames must be strictly increasing",
                a.id
            )));
        }
        let mut present = Vec::with_capacity(n);
        let mut xy_data = Vec::with_capacity(n * 2);
        for entry in &a.xy {
            match entry {
                Some([x, y]) => {
                    present.push(true);
                    xy_data.push(*x);
                    xy_data.push(*y);
                }
                None => {
                    present.push(false);
                    xy_data.push(0.0);
                    xy_data.push(0.0);
                }
            }
        }
        let mut cues = BTreeMap::new();
        cues.insert(
            CueKind::T,
            CueArray {
                elements: 1,
                features: 2,
                data: xy_data,
            },
        );
        if let Some(pose) = a.pose3d {
            cues.insert(CueKind::P3, nested_cue(&a.id, "pose3d", n, pose, 3, line_no)?);
        }
        if let Some(pose) = a.pose2d {
            cues.insert(CueKind::P2, nested_cue(&a.id, "pose2d", n, pose, 2, line_no)?);
        }
        if let Some(boxes) = a.box3d {
            cues.insert(CueKind::B3, flat_cue(&a.id, "box3d", n, boxes, 6, line_no)?);
        }
        if let Some(boxes) = a.box2d {
            cues.insert(CueKind::B2, flat_cue(&a.id, "box2d", n, boxes, 4, line_no)?);
        }
        agents.push(AgentTrack {
            agent_id: a.id,
            frames: a.frames,
            cues,
            present,
        });
    }
    let scene = SceneRecord {
        scene_id: raw.scene_id,
        base_fps: raw.fps,
        agents,
        source_tag: raw.source,
    };
    scene.validate().map_err(|e| DataError::Schema {
        line: line_no,
        msg: e.to_string(),
    })?;
    Ok(scene)
}

fn nested_cue<const F: usize>(
    agent: &str,
    key: &str,
    n_frames: usize,
    frames: Vec<Vec<[f64; F]>>,
    features: usize,
    line_no: usize,
) -> Result<CueArray, DataError> {
    if frames.len() != n_frames {
        return Err(DataError::Schema {
            line: line_no,
            msg: format!("agent {agent}: {key} has {} entries for {n_frames} frames", frames.len()),
        });
    }
    let elements = frames.first().map(|f| f.len()).unwrap_or(0);
    let mut data = Vec::with_capacity(n_frames * elements * features);
    for (i, frame) in frames.iter().enumerate() {
        if frame.len() != elements {
            return Err(DataError::Schema {
                line: line_no,
                msg: format!("agent {agent}: {key} frame {i} has {} keypoints, expected {elements}", frame.len()),
            });
        }
        for kp in frame {
            data.extend_from_slice(kp);
        }
    }
    Ok(CueArray {
        elements,
        features,
        data,
    })
}

fn flat_cue<const F: usize>(
    agent: &str,
    key: &str,
    n_frames: usize,
    frames: Vec<[f64; F]>,
    features: usize,
    line_no: usize,
) -> Result<CueArray, DataError> {
    if frames.len() != n_frames {
        return Err(DataError::Schema {
            line: line_no,
            msg: format!("agent {agent}: {key} has {} entries for {n_frames} frames", frames.len()),
        });
    }
    let mut data = Vec::with_capacity(n_frames * features);
    for frame in &frames {
        data.extend_from_slice(frame);
    }
    Ok(CueArray {
        elements: 1,
        features,
        data,
    })
}

/// Serializes one scene to its NDJSON line.
pub fn scene_to_json(scene: &SceneRecord) -> String {
    let agents: Vec<RawAgent> = scene
        .agents
        .iter()
        .map(|a| {
            let t = &a.cues[&CueKind::T];
            let xy: Vec<Option<[f64; 2]>> = (0..a.frames.len())
                .map(|i| {
                    if a.present[i] {
                        let v = t.frame(i);
                        Some([v[0], v[1]])
                    } else {
                        None
                    }
                })
                .collect();
            RawAgent {
                id: a.agent_id.clone(),
                frames: a.frames.clone(),
                xy,
                pose3d: a.cues.get(&CueKind::P3).map(|c| nested_out::<3>(a, c)),
                pose2d: a.cues.get(&CueKind::P2).map(|c| nested_out::<2>(a, c)),
                box3d: a.cues.get(&CueKind::B3).map(|c| flat_out::<6>(a, c)),
                box2d: a.cues.get(&CueKind::B2).map(|c| flat_out::<4>(a, c)),
            }
        })
        .collect();
    let raw = RawScene {
        scene_id: scene.scene_id.clone(),
        fps: scene.base_fps,
        source: scene.source_tag.clone(),
        agents,
    };
    serde_json::to_string(&raw).expect("scene serialization")
}

fn nested_out<const F: usize>(agent: &AgentTrack, cue: &CueArray) -> Vec<Vec<[f64; F]>> {
    (0..agent.frames.len())
        .map(|i| {
            cue.frame(i)
                .chunks(F)
                .map(|c| {
                    let mut kp = [0.0; F];
                    kp.copy_from_slice(c);
                    kp
                })
                .collect()
        })
        .collect()
}

fn flat_out<const F: usize>(agent: &AgentTrack, cue: &CueArray) -> Vec<[f64; F]> {
    (0..agent.frames.len())
        .map(|i| {
            let mut v = [0.0; F];
            v.copy_from_slice(cue.frame(i));
            v
        })
        .collect()
}

/// Writes scenes as NDJSON, one per line.
pub fn write_ndjson(scenes: &[SceneRecord], path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for scene in scenes {
        writeln!(w, "{}", scene_to_json(scene))?;
    }
    w.flush()?;
    Ok(())
}
