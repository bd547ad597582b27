//! Checkpoint layout: one line of JSON manifest, a newline, then every
//! parameter as little-endian `f32` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::policy::{Normalizer, Policy, PolicyConfig};

pub const CHECKPOINT_FORMAT: &str = "mtdp-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub policy: PolicyConfig,
    pub diffusion: DiffusionConfig,
    pub normalizer: Normalizer,
    pub params: Vec<ParamEntry>,
}

impl Policy {
    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let params = self
            .store
            .iter()
            .map(|p| {
                let e = ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    offset,
                };
                offset += 4 * p.value.len();
                e
            })
            .collect();
        Manifest {
            format: CHECKPOINT_FORMAT.into(),
            policy: self.config.clone(),
            diffusion: self.diffusion.clone(),
            normalizer: self.normalizer.clone(),
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.manifest())?;
        out.push(b'\n');
        out.reserve(4 * self.num_params());
        for p in self.store.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing manifest terminator".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..nl])?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", manifest.format)));
        }
        let payload = &bytes[nl + 1..];
        let mut policy = Policy::skeleton(manifest.policy, manifest.diffusion, manifest.normalizer)
            .map_err(|e| Error::Checkpoint(format!("embedded config rejected: {e}")))?;
        if manifest.params.len() != policy.store.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters in checkpoint, config expects {}",
                manifest.params.len(),
                policy.store.len()
            )));
        }
        let ids: Vec<_> = policy.store.ids().collect();
        let mut expect_offset = 0;
        for (entry, id) in manifest.params.iter().zip(ids) {
            let param = policy.store.get(id);
            if entry.name != param.name || entry.shape != param.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match config ({} {:?})",
                    entry.name,
                    entry.shape,
                    param.name,
                    param.value.shape()
                )));
            }
            if entry.offset != expect_offset {
                return Err(Error::Checkpoint(format!(
                    "parameter {} at unexpected offset {}",
                    entry.name, entry.offset
                )));
            }
            let n = param.value.len();
            let end = entry.offset + 4 * n;
            let raw = payload
                .get(entry.offset..end)
                .ok_or_else(|| Error::Checkpoint(format!("payload truncated in {}", entry.name)))?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            *policy.store.value_mut(id) = Tensor::new(entry.shape.clone(), data)?;
            expect_offset = end;
        }
        if expect_offset != payload.len() {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, manifest describes {expect_offset}",
                payload.len()
            )));
        }
        Ok(policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
