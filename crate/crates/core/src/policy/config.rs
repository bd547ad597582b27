use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::BlockVariant;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    /// Transformer encoder with a modulated-attention decoder.
    #[default]
    #[serde(rename = "MTDP")]
    Mtdp,
    /// 1-D temporal UNet with a modulated-attention block per stage.
    #[serde(rename = "MUDP")]
    Mudp,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mtdp => "MTDP",
            Self::Mudp => "MUDP",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mtdp" => Ok(Self::Mtdp),
            "mudp" => Ok(Self::Mudp),
            _ => Err(Error::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub arch: Arch,
    pub variant: BlockVariant,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ffn_mult: usize,
    /// Predicted trajectory length `T_p`.
    pub horizon: usize,
    /// Observation steps `T_o`.
    pub obs_horizon: usize,
    /// Executed steps per replan `T_a`.
    pub action_horizon: usize,
    pub action_dim: usize,
    pub obs_dim: usize,
    /// Channel width per UNet stage (MUDP only).
    pub unet_channels: Vec<usize>,
    pub kernel_size: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Mtdp,
            variant: BlockVariant::MSelfAttention,
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 4,
            ffn_mult: 4,
            horizon: 16,
            obs_horizon: 2,
            action_horizon: 8,
            action_dim: 2,
            obs_dim: 2,
            unet_channels: vec![32, 64],
            kernel_size: 5,
        }
    }
}

impl PolicyConfig {
    pub fn mudp() -> Self {
        Self {
            arch: Arch::Mudp,
            variant: BlockVariant::DitSelfAttention,
            ..Self::default()
        }
    }

    /// Number of halvings of the time axis in the UNet.
    pub fn down_stages(&self) -> usize {
        self.unet_channels.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return fail(format!(
                "d_model {} must be even for the timestep embedding",
                self.d_model
            ));
        }
        if self.horizon == 0 || self.action_horizon == 0 || self.action_horizon > self.horizon {
            return fail(format!(
                "need 1 <= action_horizon ({}) <= horizon ({})",
                self.action_horizon, self.horizon
            ));
        }
        if self.obs_horizon == 0 {
            return fail("obs_horizon must be at least 1".into());
        }
        if self.action_dim == 0 || self.obs_dim == 0 || self.ffn_mult == 0 {
            return fail("action_dim, obs_dim and ffn_mult must be positive".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return fail(format!("kernel_size {} must be odd", self.kernel_size));
        }
        match self.arch {
            Arch::Mtdp => {
                if self.n_decoder_layers == 0 {
                    return fail("MTDP needs at least one decoder layer".into());
                }
            }
            Arch::Mudp => {
                if self.unet_channels.is_empty() || self.unet_channels.contains(&0) {
                    return fail("MUDP needs nonempty positive unet_channels".into());
                }
                if let Some(c) = self.unet_channels.iter().find(|&&c| c % self.n_heads != 0) {
                    return fail(format!("UNet width {c} not divisible by n_heads {}", self.n_heads));
                }
                let div = 1usize << self.down_stages();
                if !self.horizon.is_multiple_of(div) {
                    return fail(format!("horizon {} not divisible by {div}", self.horizon));
                }
            }
        }
        Ok(())
    }
}
