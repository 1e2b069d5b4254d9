//! Weight checkpoints: a magic+version header, the config digest, and named
//! parameter blobs stored as 32-bit floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::DataError;
use crate::model::{ModelConfig, ModelWeights};
use crate::nn::ParamTree;
use crate::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 4] = b"OTCK";
pub const CKPT_VERSION: u32 = 1;

/// SHA-256 hex digest of the serialized config; checkpoints carry it and
/// evaluation refuses to run against a different one.
pub fn config_digest(cfg: &ModelConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

/// SHA-256 hex digest over every parameter's bytes in visit order; used to
/// prove evaluation mutates nothing.
pub fn weights_digest(weights: &ModelWeights) -> String {
    let mut hasher = Sha256::new();
    weights.visit("", &mut |name, t| {
        hasher.update(name.as_bytes());
        for v in t.data() {
            hasher.update(v.to_le_bytes());
        }
    });
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Quantizes every parameter through f32 and back, reproducing exactly what
/// a checkpoint round-trip does to the weights.
pub fn quantize_roundtrip(weights: &ModelWeights) -> ModelWeights {
    let mut out = weights.clone();
    out.visit_mut("", &mut |_, t| {
        let data: Vec<f64> = t.data().iter().map(|&v| v as f32 as f64).collect();
        *t = Tensor::from_vec(t.shape(), data);
    });
    out
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    weights: &ModelWeights,
    epoch: u32,
) -> Result<(), DataError> {
    let digest = config_digest(cfg);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_u32::<LittleEndian>(CKPT_VERSION)?;
    w.write_u32::<LittleEndian>(epoch)?;
    w.write_u16::<LittleEndian>(digest.len() as u16)?;
    w.write_all(digest.as_bytes())?;
    let named = weights.named_params();
    w.write_u32::<LittleEndian>(named.len() as u32)?;
    for (name, t) in named {
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(t.shape().len() as u8)?;
        for &d in t.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in t.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A loaded checkpoint: the stored config digest, epoch counter, and
/// parameters (upcast to f64).
pub struct Checkpoint {
    pub config_digest: String,
    pub epoch: u32,
    pub params: Vec<(String, Tensor)>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    let corrupt = |msg: &str| DataError::CacheCorrupt(format!("checkpoint: {msg}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| corrupt("short header"))?;
    if &magic != CKPT_MAGIC {
        return Err(DataError::CacheIncompatible(format!(
            "bad checkpoint magic {magic:?}"
        )));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| corrupt("version"))?;
    if version != CKPT_VERSION {
        return Err(DataError::CacheIncompatible(format!(
            "checkpoint version mismatch: file has {version}, reader supports {CKPT_VERSION}"
        )));
    }
    let epoch = r.read_u32::<LittleEndian>().map_err(|_| corrupt("epoch"))?;
    let digest_len = r.read_u16::<LittleEndian>().map_err(|_| corrupt("digest len"))?;
    let mut digest = vec![0u8; digest_len as usize];
    r.read_exact(&mut digest).map_err(|_| corrupt("digest"))?;
    let n_params = r.read_u32::<LittleEndian>().map_err(|_| corrupt("param count"))?;
    let mut params = Vec::with_capacity(n_params as usize);
    for i in 0..n_params {
        let name_len = r
            .read_u16::<LittleEndian>()
            .map_err(|_| corrupt(&format!("param {i} name len")))?;
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)
            .map_err(|_| corrupt(&format!("param {i} name")))?;
        let ndim = r.read_u8().map_err(|_| corrupt("ndim"))?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>().map_err(|_| corrupt("dim"))? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.read_f32::<LittleEndian>().map_err(|_| corrupt("data"))? as f64);
        }
        params.push((
            String::from_utf8(name).map_err(|_| corrupt("name utf8"))?,
            Tensor::from_vec(&shape, data),
        ));
    }
    Ok(Checkpoint {
        config_digest: String::from_utf8(digest).map_err(|_| corrupt("digest utf8"))?,
        epoch,
        params,
    })
}

/// Rebuilds weights for `cfg` from a checkpoint, verifying the digest and
/// every parameter name and shape.
pub fn restore_weights(cfg: &ModelConfig, ckpt: &Checkpoint) -> Result<ModelWeights, DataError> {
    let expected = config_digest(cfg);
    if ckpt.config_digest != expected {
        return Err(DataError::Invalid(format!(
            "config digest mismatch: checkpoint has {}, config is {expected}",
            ckpt.config_digest
        )));
    }
    let mut weights = ModelWeights::init(cfg);
    let mut idx = 0;
    let mut err: Option<String> = None;
    weights.visit_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match ckpt.params.get(idx) {
            Some((stored_name, stored)) if stored_name == name => {
                if stored.shape() != t.shape() {
                    err = Some(format!(
                        "parameter {name}: shape {:?} vs stored {:?}",
                        t.shape(),
                        stored.shape()
                    ));
                } else {
                    *t = stored.clone();
                }
            }
            Some((stored_name, _)) => {
                err = Some(format!("parameter order mismatch: {name} vs stored {stored_name}"))
            }
            None => err = Some(format!("checkpoint missing parameter {name}")),
        }
        idx += 1;
    });
    if let Some(msg) = err {
        return Err(DataError::Invalid(msg));
    }
    if idx != ckpt.params.len() {
        return Err(DataError::Invalid(format!(
            "checkpoint holds {} parameters, config expects {idx}",
            ckpt.params.len()
        )));
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FpsVariant;

    #[test]
    fn checkpoint_roundtrip_preserves_f32_values() {
        let mut cfg = ModelConfig::with_dims(16, 5);
        cfg.fps_variant = FpsVariant::Film;
        let weights = ModelWeights::init(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.otck");
        save_checkpoint(&path, &cfg, &weights, 7).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.epoch, 7);
        let restored = restore_weights(&cfg, &ckpt).unwrap();
        let expected = quantize_roundtrip(&weights);
        for (a, b) in restored.flat().iter().zip(expected.flat()) {
            assert!(a.bit_eq(&b));
        }
        // A second save/load is lossless (already f32-clean).
        save_checkpoint(&path, &cfg, &restored, 8).unwrap();
        let again = restore_weights(&cfg, &load_checkpoint(&path).unwrap()).unwrap();
        for (a, b) in again.flat().iter().zip(restored.flat()) {
            assert!(a.bit_eq(&b));
        }
    }

    #[test]
    fn digest_mismatch_is_refused() {
        let cfg_a = ModelConfig::with_dims(16, 5);
        let mut cfg_b = cfg_a.clone();
        cfg_b.n_modes = 7;
        let weights = ModelWeights::init(&cfg_a);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.otck");
        save_checkpoint(&path, &cfg_a, &weights, 0).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        let err = restore_weights(&cfg_b, &ckpt).unwrap_err().to_string();
        assert!(err.contains("digest mismatch"), "{err}");
        assert!(err.contains(&ckpt.config_digest), "{err}");
    }

    #[test]
    fn config_digest_is_stable_and_sensitive() {
        let cfg = ModelConfig::with_dims(16, 5);
        assert_eq!(config_digest(&cfg), config_digest(&cfg.clone()));
        let mut other = cfg.clone();
        other.d_model = 32;
        assert_ne!(config_digest(&cfg), config_digest(&other));
    }

    #[test]
    fn weights_digest_tracks_mutation() {
        let cfg = ModelConfig::with_dims(16, 5);
        let w = ModelWeights::init(&cfg);
        let d1 = weights_digest(&w);
        assert_eq!(d1, weights_digest(&w.clone()));
        let mut w2 = w.clone();
        w2.ident_emb = w2.ident_emb.scale(1.0000001);
        assert_ne!(d1, weights_digest(&w2));
    }
}
