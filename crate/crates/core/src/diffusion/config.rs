use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Ddpm,
    Ddim,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddpm" => Ok(Self::Ddpm),
            "ddim" => Ok(Self::Ddim),
            other => Err(Error::Config(format!("unknown sampler {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub t_train: usize,
    pub sampler: SamplerKind,
    /// Reverse steps per generated trajectory. DDPM always uses `t_train`.
    pub t_sample: usize,
    pub schedule: ScheduleKind,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self::ddpm(100)
    }
}

impl DiffusionConfig {
    pub fn ddpm(t_train: usize) -> Self {
        Self {
            t_train,
            sampler: SamplerKind::Ddpm,
            t_sample: t_train,
            schedule: ScheduleKind::Cosine,
        }
    }

    pub fn ddim(t_train: usize, t_sample: usize) -> Self {
        Self {
            t_train,
            sampler: SamplerKind::Ddim,
            t_sample,
            schedule: ScheduleKind::Cosine,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_train < 1 {
            return Err(Error::Config("t_train must be at least 1".into()));
        }
        if self.t_sample < 1 || self.t_sample > self.t_train {
            return Err(Error::Config(format!(
                "t_sample {} must lie in 1..={}",
                self.t_sample, self.t_train
            )));
        }
        if self.sampler == SamplerKind::Ddpm && self.t_sample != self.t_train {
            return Err(Error::Config(format!(
                "DDPM samples every training step: t_sample {} != t_train {}",
                self.t_sample, self.t_train
            )));
        }
        Ok(())
    }

    /// Same training setup, different sampler.
    pub fn with_sampler(&self, sampler: SamplerKind, t_sample: usize) -> Self {
        Self {
            sampler,
            t_sample: if sampler == SamplerKind::Ddpm {
                self.t_train
            } else {
                t_sample
            },
            ..self.clone()
        }
    }
}
