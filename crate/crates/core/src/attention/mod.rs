//! Multi-head attention, the encoder layer, and the four modulated decoder
//! layer arrangements.

mod blocks;
mod mha;
mod modulation;

pub use blocks::{BlockVariant, DecoderBlock, EncoderBlock};
pub use mha::MultiHeadAttention;
pub use modulation::{gate_residual, modulate, pool_condition, Modulation, ModulationParams};

#[cfg(test)]
mod tests;
