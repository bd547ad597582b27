//! The MTDP and MUDP noise-prediction networks, their condition encoders,
//! data normalization and checkpoints.

mod checkpoint;
mod config;
mod embedding;
mod model;
mod mtdp;
mod mudp;
mod net;
mod normalizer;

pub use checkpoint::{Manifest, ParamEntry, CHECKPOINT_FORMAT};
pub use config::{Arch, PolicyConfig};
pub use embedding::{condition_tokens, sinusoidal, ObsEncoder, TimestepEmbedding};
pub use model::{Plan, Policy};
pub use mtdp::Mtdp;
pub use mudp::{downsample, upsample, FilmResBlock, Mudp, Stage};
pub use net::{ConditionedDenoiser, PolicyNet};
pub use normalizer::{MinMax, Normalizer, RANGE_EPS};
