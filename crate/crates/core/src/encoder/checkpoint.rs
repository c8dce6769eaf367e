//! Versioned checkpoint container.
//!
//! Layout: the 8-byte magic `COMIRCKP`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then every
//! tensor listed in the header as little-endian `f32` values, model by model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{EncoderConfig, TrainConfig};
use super::train::{LossHistory, TrainedModels};
use super::unet::{build_encoder, DenseUNet};
use crate::error::{ComirError, Result};
use crate::loss::CriticSpec;

const MAGIC: &[u8; 8] = b"COMIRCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    id: String,
    modalities: Vec<String>,
    encoders: Vec<EncoderConfig>,
    train: Option<TrainConfig>,
    seed: u64,
    critic: CriticSpec,
    history: LossHistory,
    /// Realized layer names per model.
    layers: Vec<Vec<String>>,
    tensors: Vec<Vec<TensorEntry>>,
}

/// Trained encoders plus everything needed to rebuild and audit them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub modalities: Vec<String>,
    pub encoders: Vec<EncoderConfig>,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub critic: CriticSpec,
    pub history: LossHistory,
    pub layers: Vec<Vec<String>>,
    tensors: Vec<Vec<(String, Vec<f32>)>>,
    id: String,
}

impl Checkpoint {
    pub fn new(
        models: &mut [DenseUNet],
        modalities: Vec<String>,
        critic: CriticSpec,
        history: LossHistory,
        train: Option<TrainConfig>,
        seed: u64,
    ) -> Result<Self> {
        if models.len() != modalities.len() || models.is_empty() {
            return Err(ComirError::Checkpoint(format!(
                "{} models for {} modalities",
                models.len(),
                modalities.len()
            )));
        }
        let encoders = models.iter().map(|m| m.config().clone()).collect();
        let layers = models.iter_mut().map(|m| m.layer_list()).collect();
        let tensors: Vec<_> = models.iter_mut().map(|m| m.named_tensors()).collect();
        let id = content_id(&tensors);
        Ok(Checkpoint {
            modalities,
            encoders,
            train,
            seed,
            critic,
            history,
            layers,
            tensors,
            id,
        })
    }

    pub fn from_trained(trained: &mut TrainedModels, cfg: &TrainConfig) -> Result<Self> {
        Checkpoint::new(
            &mut trained.models,
            trained.modalities.clone(),
            trained.critic.clone(),
            trained.history.clone(),
            Some(cfg.clone()),
            cfg.seed,
        )
    }

    /// Hex prefix of the SHA-256 over all stored tensor values.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn modality_index(&self, name: &str) -> Result<usize> {
        self.modalities
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| ComirError::ModalityMismatch {
                expected: self.modalities.clone(),
                got: name.to_string(),
            })
    }

    /// Rebuilds the encoder of modality index `m` with its stored weights.
    pub fn encoder(&self, m: usize) -> Result<DenseUNet> {
        let cfg = self
            .encoders
            .get(m)
            .ok_or_else(|| ComirError::Checkpoint(format!("no encoder {m}")))?;
        let mut net = build_encoder(cfg, 0)?;
        net.load_named_tensors(&self.tensors[m])?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            id: self.id.clone(),
            modalities: self.modalities.clone(),
            encoders: self.encoders.clone(),
            train: self.train.clone(),
            seed: self.seed,
            critic: self.critic.clone(),
            history: self.history.clone(),
            layers: self.layers.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|ts| {
                    ts.iter()
                        .map(|(name, v)| TensorEntry {
                            name: name.clone(),
                            len: v.len(),
                        })
                        .collect()
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| ComirError::Checkpoint(e.to_string()))?;
        let total: usize = self.tensors.iter().flatten().map(|(_, v)| v.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 4 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, values) in self.tensors.iter().flatten() {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| ComirError::Checkpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(ComirError::Checkpoint(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if header_len > body.len() {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| ComirError::Checkpoint(e.to_string()))?;
        let mut blob = &body[header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entries in &header.tensors {
            let mut model = Vec::with_capacity(entries.len());
            for e in entries {
                let n = e.len * 4;
                if blob.len() < n {
                    return Err(ComirError::Checkpoint(format!("truncated tensor `{}`", e.name)));
                }
                let values = blob[..n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                blob = &blob[n..];
                model.push((e.name.clone(), values));
            }
            tensors.push(model);
        }
        if !blob.is_empty() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        let n = header.modalities.len();
        if header.encoders.len() != n || tensors.len() != n || header.layers.len() != n {
            return Err(bad("header lists disagree on the number of modalities"));
        }
        if content_id(&tensors) != header.id {
            return Err(bad("content hash does not match the stored id"));
        }
        Ok(Checkpoint {
            modalities: header.modalities,
            encoders: header.encoders,
            train: header.train,
            seed: header.seed,
            critic: header.critic,
            history: header.history,
            layers: header.layers,
            tensors,
            id: header.id,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| ComirError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| ComirError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn content_id(tensors: &[Vec<(String, Vec<f32>)>]) -> String {
    let mut h = Sha256::new();
    for (name, values) in tensors.iter().flatten() {
        h.update(name.as_bytes());
        for v in values {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_scene;

    fn tiny(out: usize) -> EncoderConfig {
        EncoderConfig {
            in_channels: 1,
            out_channels: out,
            first_conv_filters: 4,
            growth_rate: 3,
            down_blocks: vec![1, 2],
            up_blocks: vec![2, 1],
            bottleneck_layers: 1,
            compression: 0.75,
            dropout: 0.2,
        }
    }

    fn sample() -> Checkpoint {
        let mut models = vec![build_encoder(&tiny(2), 1).unwrap(), build_encoder(&tiny(2), 2).unwrap()];
        for net in &mut models {
            // non-default running statistics must survive the round trip
            net.visit(&mut |name, slot| {
                if let (true, crate::encoder::Slot::Buffer(b)) = (name.ends_with("running_mean"), slot) {
                    b.iter_mut().enumerate().for_each(|(i, v)| *v = 0.01 * i as f32);
                }
            });
        }
        Checkpoint::new(
            &mut models,
            vec!["a".into(), "b".into()],
            CriticSpec::mse(),
            LossHistory::default(),
            Some(TrainConfig::biomedical(3)),
            3,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_reproduces_forward_bit_exactly() {
        let ckpt = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.id(), ckpt.id());
        assert_eq!(back.modalities, ckpt.modalities);
        assert_eq!(back.train, ckpt.train);
        assert_eq!(back.layers, ckpt.layers);
        let img = synthetic_scene(20, 24, 0);
        for m in 0..2 {
            let before = ckpt.encoder(m).unwrap().forward_image(&img).unwrap();
            let after = back.encoder(m).unwrap().forward_image(&img).unwrap();
            assert_eq!(before.data(), after.data());
        }
    }

    #[test]
    fn ids_track_content() {
        let a = sample();
        let mut other = vec![build_encoder(&tiny(2), 9).unwrap(), build_encoder(&tiny(2), 2).unwrap()];
        let b = Checkpoint::new(&mut other, a.modalities.clone(), CriticSpec::mse(), LossHistory::default(), None, 9)
            .unwrap();
        assert_eq!(a.id().len(), 16);
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
        let mut version = bytes.clone();
        version[8] = 99;
        assert!(Checkpoint::from_bytes(&version).is_err());
        assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
    }

    #[test]
    fn unknown_modality_is_a_mismatch() {
        let ckpt = sample();
        assert_eq!(ckpt.modality_index("b").unwrap(), 1);
        assert!(matches!(ckpt.modality_index("c"), Err(ComirError::ModalityMismatch { .. })));
    }
}
