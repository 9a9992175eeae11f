//! Checkpoint persistence.
//!
//! Little-endian layout: `"PDEWBCK1"` | `u32` version = 1 | payload | `u32`
//! CRC32 of the payload. The payload is a `u32`-length-prefixed JSON header
//! (config, channel layout, normalization statistics, training provenance)
//! followed by the learnable tensors as raw `f32` in declaration order:
//! lift weight and bias, then per block the two retained-quadrant spectral
//! tensors (mode-major `(m, m, w, w)`, each complex entry as re then im),
//! the pointwise weight and bias, then the two projection layers.

use std::path::Path;

use ndarray::{Array1, Array2, Array4};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::{ChannelLayout, FnoConfig, FnoParams};

pub const MAGIC: &[u8; 8] = b"PDEWBCK1";
pub const VERSION: u32 = 1;

/// How a parameter set came to be; recorded for reproducibility.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub loss_mode: Option<String>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub best_val_loss: Option<f64>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub dataset_plan: Option<String>,
    #[serde(default)]
    pub pretrained_from: Option<String>,
    #[serde(default)]
    pub n_shot: Option<usize>,
    #[serde(default)]
    pub noise_sigma: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: FnoConfig,
    layout: ChannelLayout,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: FnoConfig,
    pub layout: ChannelLayout,
    pub params: FnoParams<f32>,
    pub provenance: Provenance,
}

/// Tensor names and real-component counts in declaration order.
fn tensor_plan(config: &FnoConfig) -> Vec<(String, usize)> {
    let (c, w, m) = (config.in_channels, config.width, config.modes);
    let mut plan = vec![("lift_w".to_string(), w * c), ("lift_b".to_string(), w)];
    for k in 0..config.n_blocks {
        plan.push((format!("block{k}.spectral_q0"), m * m * w * w * 2));
        plan.push((format!("block{k}.spectral_q1"), m * m * w * w * 2));
        plan.push((format!("block{k}.point_w"), w * w));
        plan.push((format!("block{k}.point_b"), w));
    }
    plan.push(("proj_w1".to_string(), w * w));
    plan.push(("proj_b1".to_string(), w));
    plan.push(("proj_w2".to_string(), w));
    plan.push(("proj_b2".to_string(), 1));
    plan
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.layout.in_channels() != self.config.in_channels {
            return Err(CoreError::Shape(format!(
                "layout has {} channels, config expects {}",
                self.layout.in_channels(),
                self.config.in_channels
            )));
        }
        let header = Header {
            config: self.config,
            layout: self.layout.clone(),
            norm_mean: self.params.norm_mean.iter().map(|&v| v as f64).collect(),
            norm_std: self.params.norm_std.iter().map(|&v| v as f64).collect(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let flat = self.params.flatten();
        let mut payload = Vec::with_capacity(json.len() + flat.len() * 4 + 8);
        payload.extend_from_slice(&(json.len() as u32).to_le_bytes());
        payload.extend_from_slice(&json);
        for v in flat {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&payload);
        let mut out = Vec::with_capacity(payload.len() + 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(CoreError::Format("checkpoint too short".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(CoreError::Format("bad magic; not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(CoreError::Format(format!("unsupported checkpoint version {version}")));
        }
        let payload = &bytes[12..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(CoreError::Checksum { stored, computed });
        }
        if payload.len() < 4 {
            return Err(CoreError::Format("truncated header".into()));
        }
        let json_len = u32::from_le_bytes(payload[..4].try_into().unwrap()) as usize;
        if payload.len() < 4 + json_len {
            return Err(CoreError::Format("truncated header JSON".into()));
        }
        let header: Header = serde_json::from_slice(&payload[4..4 + json_len])?;
        header.config.validate()?;
        if header.layout.in_channels() != header.config.in_channels {
            return Err(CoreError::Shape(format!(
                "layout has {} channels, config expects {}",
                header.layout.in_channels(),
                header.config.in_channels
            )));
        }

        let tensor_bytes = &payload[4 + json_len..];
        let plan = tensor_plan(&header.config);
        let expected: usize = plan.iter().map(|(_, n)| n).sum();
        if tensor_bytes.len() != expected * 4 {
            // name the first tensor the byte stream cannot fill
            let mut have = tensor_bytes.len() / 4;
            for (name, n) in &plan {
                if have < *n {
                    return Err(CoreError::Shape(format!(
                        "tensor '{name}' expects {n} values, file provides {have} \
                         (config/file mismatch)"
                    )));
                }
                have -= n;
            }
            return Err(CoreError::Shape(format!(
                "tensor section holds {have} values beyond the declared shapes"
            )));
        }
        let mut flat = Vec::with_capacity(expected);
        for chunk in tensor_bytes.chunks_exact(4) {
            flat.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }

        let mut params = empty_params(&header.config);
        params.unflatten_from(&flat)?;
        if header.norm_mean.len() != header.config.in_channels
            || header.norm_std.len() != header.config.in_channels
        {
            return Err(CoreError::Shape("norm_stats length mismatch".into()));
        }
        params.norm_mean = Array1::from_iter(header.norm_mean.iter().map(|&v| v as f32));
        params.norm_std = Array1::from_iter(header.norm_std.iter().map(|&v| v as f32));
        Ok(Checkpoint {
            config: header.config,
            layout: header.layout,
            params,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// CRC of the encoded checkpoint, used as a compact identity in reports.
    pub fn id(&self) -> Result<u32> {
        Ok(crc32fast::hash(&self.encode()?))
    }
}

fn empty_params(config: &FnoConfig) -> FnoParams<f32> {
    let (c, w, m) = (config.in_channels, config.width, config.modes);
    FnoParams {
        lift_w: Array2::zeros((w, c)),
        lift_b: Array1::zeros(w),
        blocks: (0..config.n_blocks)
            .map(|_| super::BlockParams {
                spec_w: [
                    Array4::<Complex<f32>>::zeros((m, m, w, w)),
                    Array4::<Complex<f32>>::zeros((m, m, w, w)),
                ],
                point_w: Array2::zeros((w, w)),
                point_b: Array1::zeros(w),
            })
            .collect(),
        proj_w1: Array2::zeros((w, w)),
        proj_b1: Array1::zeros(w),
        proj_w2: Array2::zeros((1, w)),
        proj_b2: Array1::zeros(1),
        norm_mean: Array1::zeros(c),
        norm_std: Array1::ones(c),
    }
}
