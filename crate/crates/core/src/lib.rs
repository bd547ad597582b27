//! Diffusion policy with modulated-attention noise predictors.
//!
//! The crate is organised bottom-up:
//! - [`autodiff`]: tensors, reverse-mode tape, finite-difference checks
//! - [`nn`]: small layers built on the tape
//! - [`diffusion`]: noise schedules, forward noising, DDPM/DDIM samplers
//! - [`attention`]: multi-head attention, encoder block, modulated decoder blocks
//! - [`policy`]: the MTDP transformer and MUDP UNet noise predictors
//! - [`envs`]: the two planar tasks, scripted experts, demonstrations
//! - [`harness`]: training, evaluation, ablation and timestep sweeps

pub mod attention;
pub mod autodiff;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
