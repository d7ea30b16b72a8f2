//! Self-describing checkpoint files.
//!
//! Layout: one magic line (`coglink-checkpoint v1`), one JSON header line
//! (config, optional clustering threshold, optional vocabulary in id
//! order, and the ordered tensor manifest), then the flat little-endian
//! 32-bit float payloads in manifest order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ModelConfig, ParameterStore};

const MAGIC: &str = "coglink-checkpoint v1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    threshold: Option<f64>,
    vocab: Option<Vec<String>>,
    tensors: Vec<(String, Vec<usize>)>,
}

/// Everything a checkpoint carries.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub threshold: Option<f64>,
    pub vocab_tokens: Option<Vec<String>>,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ParameterStore,
    config: &ModelConfig,
    threshold: Option<f64>,
    vocab_tokens: Option<&[String]>,
) -> Result<()> {
    if !params.matches_config(config) {
        return Err(Error::checkpoint(
            "parameter store does not match the config being saved",
        ));
    }
    let manifest = ParameterStore::parameter_shapes(config);
    let header = Header {
        config: config.clone(),
        threshold,
        vocab: vocab_tokens.map(<[String]>::to_vec),
        tensors: manifest.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::checkpoint(format!("header serialization failed: {e}")))?;
    writeln!(w, "{header_json}")?;
    for (name, _) in &manifest {
        for &v in params.get(name).data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut contents = Vec::new();
    r.read_to_end(&mut contents)?;

    let mut lines = contents.splitn(3, |&b| b == b'\n');
    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC.as_bytes() {
        return Err(Error::checkpoint(format!(
            "bad magic line (expected {MAGIC:?})"
        )));
    }
    let header_bytes = lines
        .next()
        .ok_or_else(|| Error::checkpoint("missing header line"))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::checkpoint(format!("corrupt header: {e}")))?;
    header.config.validate()?;

    let expected = ParameterStore::parameter_shapes(&header.config);
    if header.tensors != expected {
        return Err(Error::checkpoint(
            "tensor manifest does not match the stored config (version or shape mismatch)",
        ));
    }

    let payload = lines.next().unwrap_or_default();
    let want_floats: usize = expected
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    if payload.len() != want_floats * 4 {
        return Err(Error::checkpoint(format!(
            "payload has {} bytes, manifest wants {}",
            payload.len(),
            want_floats * 4
        )));
    }

    let mut tensors = BTreeMap::new();
    let mut off = 0usize;
    for (name, shape) in expected {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let bytes: [u8; 4] = payload[off..off + 4].try_into().unwrap();
            data.push(f32::from_le_bytes(bytes) as f64);
            off += 4;
        }
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    Ok(Checkpoint {
        config: header.config,
        params: ParameterStore::from_tensors(tensors),
        threshold: header.threshold,
        vocab_tokens: header.vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (ModelConfig, ParameterStore) {
        let cfg = ModelConfig::toy(8);
        let params = ParameterStore::init(&cfg, 42).unwrap();
        (cfg, params)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (cfg, params) = toy();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let vocab: Vec<String> = ["[pad]", "-", "[unk]", "[deu]"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        save_checkpoint(&p1, &params, &cfg, Some(0.6), Some(&vocab)).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded.config, cfg);
        assert_eq!(loaded.threshold, Some(0.6));
        assert_eq!(loaded.vocab_tokens.as_deref(), Some(&vocab[..]));
        // saving the loaded store reproduces the file byte for byte
        save_checkpoint(&p2, &loaded.params, &cfg, Some(0.6), Some(&vocab)).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        // and a second load round-trips the store exactly
        let again = load_checkpoint(&p2).unwrap();
        assert_eq!(again.params, loaded.params);
    }

    #[test]
    fn corrupted_header_is_an_error() {
        let (cfg, params) = toy();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&p, &params, &cfg, None, None).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_checkpoint(&p).is_err());

        save_checkpoint(&p, &params, &cfg, None, None).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let header_start = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        bytes[header_start] = b'!';
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let (cfg, params) = toy();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ckpt");
        save_checkpoint(&p, &params, &cfg, None, None).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn cross_config_load_is_an_error() {
        // store saved under one config cannot masquerade as another:
        // the manifest in the header must match the header's own config,
        // and a mismatching store is rejected at save time.
        let (cfg, params) = toy();
        let other = ModelConfig::toy(12); // different vocab -> shapes differ
        assert!(save_checkpoint("/dev/null", &params, &other, None, None).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.ckpt");
        save_checkpoint(&p, &params, &cfg, None, None).unwrap();
        // tamper: rewrite the header config without fixing the manifest
        let bytes = std::fs::read(&p).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        let tampered = text.replacen("\"vocab_size\":8", "\"vocab_size\":12", 1);
        std::fs::write(&p, tampered.as_bytes()).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
