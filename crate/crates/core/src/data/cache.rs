//! Binary sample cache: little-endian, 32-bit floats, with a magic+version
//! header and length-prefixed sample records. Because samples already store
//! f32, `cache_read(cache_write(x)) == x` bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{CueKind, CueWindow, SampleWindow};
use crate::error::DataError;

pub const CACHE_MAGIC: &[u8; 4] = b"UHM2";
pub const CACHE_VERSION: u32 = 1;

pub fn cache_write(samples: &[SampleWindow], path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_u32::<LittleEndian>(CACHE_VERSION)?;
    w.write_u32::<LittleEndian>(samples.len() as u32)?;
    for sample in samples {
        let payload = encode_sample(sample);
        w.write_u32::<LittleEndian>(payload.len() as u32)?;
        w.write_all(&payload)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cache_read(path: &Path) -> Result<Vec<SampleWindow>, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| DataError::CacheCorrupt("file shorter than header".into()))?;
    if &magic != CACHE_MAGIC {
        return Err(DataError::CacheIncompatible(format!(
            "bad magic {magic:?}, expected {CACHE_MAGIC:?}"
        )));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| DataError::CacheCorrupt("truncated header".into()))?;
    if version != CACHE_VERSION {
        return Err(DataError::CacheIncompatible(format!(
            "version mismatch: file has {version}, reader supports {CACHE_VERSION}"
        )));
    }
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| DataError::CacheCorrupt("truncated header".into()))?;
    let mut samples = Vec::with_capacity(count as usize);
    for i in 0..count {
        let len = r
            .read_u32::<LittleEndian>()
            .map_err(|_| DataError::CacheCorrupt(format!("truncated at sample {i}")))?;
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)
            .map_err(|_| DataError::CacheCorrupt(format!("truncated at sample {i}")))?;
        samples.push(decode_sample(&payload, i)?);
    }
    Ok(samples)
}

fn encode_sample(s: &SampleWindow) -> Vec<u8> {
    let mut b = Vec::new();
    b.write_f32::<LittleEndian>(s.fps).unwrap();
    b.write_u32::<LittleEndian>(s.t_obs as u32).unwrap();
    b.write_u32::<LittleEndian>(s.t_pred as u32).unwrap();
    b.write_u32::<LittleEndian>(s.ego_index as u32).unwrap();
    b.write_u32::<LittleEndian>(s.n_agents as u32).unwrap();
    b.push(s.obs.len() as u8);
    for (kind, cue) in &s.obs {
        b.push(kind.code());
        b.write_u32::<LittleEndian>(cue.elements as u32).unwrap();
        b.write_u32::<LittleEndian>(cue.features as u32).unwrap();
        for &v in &cue.data {
            b.write_f32::<LittleEndian>(v).unwrap();
        }
    }
    for &v in &s.obs_valid {
        b.push(v as u8);
    }
    for &v in &s.future {
        b.write_f32::<LittleEndian>(v).unwrap();
    }
    b.write_f32::<LittleEndian>(s.normalization_offset[0]).unwrap();
    b.write_f32::<LittleEndian>(s.normalization_offset[1]).unwrap();
    b
}

fn decode_sample(payload: &[u8], idx: u32) -> Result<SampleWindow, DataError> {
    let corrupt = |msg: &str| DataError::CacheCorrupt(format!("sample {idx}: {msg}"));
    let mut r = payload;
    let fps = r.read_f32::<LittleEndian>().map_err(|_| corrupt("fps"))?;
    let t_obs = r.read_u32::<LittleEndian>().map_err(|_| corrupt("t_obs"))? as usize;
    let t_pred = r.read_u32::<LittleEndian>().map_err(|_| corrupt("t_pred"))? as usize;
    let ego_index = r.read_u32::<LittleEndian>().map_err(|_| corrupt("ego_index"))? as usize;
    let n_agents = r.read_u32::<LittleEndian>().map_err(|_| corrupt("n_agents"))? as usize;
    let n_cues = r.read_u8().map_err(|_| corrupt("cue count"))? as usize;
    let mut obs = BTreeMap::new();
    for _ in 0..n_cues {
        let code = r.read_u8().map_err(|_| corrupt("cue kind"))?;
        let kind = CueKind::from_code(code)
            .ok_or_else(|| corrupt(&format!("unknown cue code {code}")))?;
        let elements = r.read_u32::<LittleEndian>().map_err(|_| corrupt("cue e"))? as usize;
        let features = r.read_u32::<LittleEndian>().map_err(|_| corrupt("cue f"))? as usize;
        let len = n_agents * t_obs * elements * features;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.read_f32::<LittleEndian>().map_err(|_| corrupt("cue data"))?);
        }
        obs.insert(
            kind,
            CueWindow {
                elements,
                features,
                data,
            },
        );
    }
    let mut obs_valid = Vec::with_capacity(n_agents * t_obs);
    for _ in 0..n_agents * t_obs {
        obs_valid.push(r.read_u8().map_err(|_| corrupt("obs_valid"))? != 0);
    }
    let mut future = Vec::with_capacity(t_pred * 2);
    for _ in 0..t_pred * 2 {
        future.push(r.read_f32::<LittleEndian>().map_err(|_| corrupt("future"))?);
    }
    let ox = r.read_f32::<LittleEndian>().map_err(|_| corrupt("offset"))?;
    let oy = r.read_f32::<LittleEndian>().map_err(|_| corrupt("offset"))?;
    if !r.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(SampleWindow {
        fps,
        t_obs,
        t_pred,
        ego_index,
        n_agents,
        obs,
        obs_valid,
        future,
        normalization_offset: [ox, oy],
    })
}
