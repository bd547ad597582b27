use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{gate_residual, modulate, Modulation, MultiHeadAttention};
use crate::autodiff::{Graph, ParamStore, Scalar, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Mlp};

/// Where the pooled condition enters a decoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum BlockVariant {
    /// Modulated self-attention and FFN, plain cross-attention in between.
    #[default]
    #[serde(rename = "M-SelfAttention")]
    MSelfAttention,
    /// Plain self-attention, modulated cross-attention and FFN.
    #[serde(rename = "M-CrossAttention")]
    MCrossAttention,
    /// Modulated self-attention and FFN, no cross-attention.
    #[serde(rename = "DIT-SelfAttention")]
    DitSelfAttention,
    /// Modulated cross-attention and FFN, no self-attention.
    #[serde(rename = "DIT-CrossAttention")]
    DitCrossAttention,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 4] = [
        BlockVariant::MSelfAttention,
        BlockVariant::MCrossAttention,
        BlockVariant::DitSelfAttention,
        BlockVariant::DitCrossAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::MSelfAttention => "M-SelfAttention",
            Self::MCrossAttention => "M-CrossAttention",
            Self::DitSelfAttention => "DIT-SelfAttention",
            Self::DitCrossAttention => "DIT-CrossAttention",
        }
    }

    fn has_self_attention(self) -> bool {
        !matches!(self, Self::DitCrossAttention)
    }

    fn has_cross_attention(self) -> bool {
        !matches!(self, Self::DitSelfAttention)
    }
}

impl std::fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BlockVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "mselfattention" => Ok(Self::MSelfAttention),
            "mcrossattention" => Ok(Self::MCrossAttention),
            "ditselfattention" => Ok(Self::DitSelfAttention),
            "ditcrossattention" => Ok(Self::DitCrossAttention),
            _ => Err(Error::Config(format!("unknown block variant {s:?}"))),
        }
    }
}

/// Pre-LN transformer encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: Mlp,
}

impl EncoderBlock {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        d_model: usize,
        n_heads: usize,
        ffn_mult: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d_model)?,
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.self_attn"), d_model, n_heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d_model)?,
            ffn: Mlp::new(store, rng, &format!("{name}.ffn"), d_model, ffn_mult * d_model, d_model)?,
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let a = self.attn.forward(g, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm2.forward(g, x)?;
        let f = self.ffn.forward(g, h)?;
        g.add(x, f)
    }
}

/// One decoder layer in any of the four modulated arrangements. All
/// sublayers are pre-layer-norm and residual; modulated sublayers use a
/// parameter-free layer norm followed by shift/scale and a gated residual.
/// Sublayer order is self-attention, cross-attention, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub variant: BlockVariant,
    pub self_attn: Option<MultiHeadAttention>,
    pub cross_attn: Option<MultiHeadAttention>,
    /// Affine norm for whichever attention sublayer is left unmodulated.
    pub plain_norm: Option<LayerNorm>,
    pub ffn: Mlp,
    pub modulation: Modulation,
}

impl DecoderBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        variant: BlockVariant,
        d_model: usize,
        d_cond: usize,
        n_heads: usize,
        ffn_mult: usize,
    ) -> Result<Self> {
        let self_attn = variant
            .has_self_attention()
            .then(|| MultiHeadAttention::new(store, rng, &format!("{name}.self_attn"), d_model, n_heads))
            .transpose()?;
        let cross_attn = variant
            .has_cross_attention()
            .then(|| MultiHeadAttention::new(store, rng, &format!("{name}.cross_attn"), d_model, n_heads))
            .transpose()?;
        let plain_norm = match variant {
            BlockVariant::MSelfAttention => Some(LayerNorm::new(store, &format!("{name}.cross_norm"), d_model)?),
            BlockVariant::MCrossAttention => Some(LayerNorm::new(store, &format!("{name}.self_norm"), d_model)?),
            _ => None,
        };
        let ffn = Mlp::new(store, rng, &format!("{name}.ffn"), d_model, ffn_mult * d_model, d_model)?;
        // Every variant modulates exactly two sublayers.
        let modulation = Modulation::new(store, rng, &format!("{name}.modulation"), d_cond, d_model, 2)?;
        Ok(Self {
            variant,
            self_attn,
            cross_attn,
            plain_norm,
            ffn,
            modulation,
        })
    }

    fn modulated<F: Scalar>(
        g: &mut Graph<'_, F>,
        x: Var,
        m: &crate::attention::ModulationParams,
        branch: impl FnOnce(&mut Graph<'_, F>, Var) -> Result<Var>,
    ) -> Result<Var> {
        let h = g.layer_norm(x)?;
        let h = modulate(g, h, m.shift, m.scale)?;
        let b = branch(g, h)?;
        gate_residual(g, x, b, m.gate)
    }

    /// `x + CrossAttn(LN(x), enc)`: the unmodulated cross-attention sublayer
    /// of the M-SelfAttention arrangement.
    pub fn cross_sublayer<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var, enc: Var) -> Result<Var> {
        let (Some(norm), Some(attn)) = (&self.plain_norm, &self.cross_attn) else {
            return Err(Error::Config(format!(
                "{} has no plain cross-attention sublayer",
                self.variant
            )));
        };
        let h = norm.forward(g, x)?;
        let a = attn.forward(g, h, enc)?;
        g.add(x, a)
    }

    fn self_sublayer<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let (Some(norm), Some(attn)) = (&self.plain_norm, &self.self_attn) else {
            return Err(Error::Config(format!(
                "{} has no plain self-attention sublayer",
                self.variant
            )));
        };
        let h = norm.forward(g, x)?;
        let a = attn.forward(g, h, h)?;
        g.add(x, a)
    }

    /// `x`: decoder tokens `[B, N, D]`; `enc`: encoder tokens `[B, N_c, D]`
    /// (unused by DIT-SelfAttention); `cond`: pooled condition `[B, d_cond]`.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var, enc: Option<Var>, cond: Var) -> Result<Var> {
        let mods = self.modulation.forward(g, cond)?;
        let need_enc = || enc.ok_or(Error::Empty("encoder tokens for cross-attention"));
        let x = match self.variant {
            BlockVariant::MSelfAttention => {
                let sa = self.self_attn.as_ref().expect("variant has self-attention");
                let x = Self::modulated(g, x, &mods[0], |g, h| sa.forward(g, h, h))?;
                self.cross_sublayer(g, x, need_enc()?)?
            }
            BlockVariant::MCrossAttention => {
                let enc = need_enc()?;
                let x = self.self_sublayer(g, x)?;
                let ca = self.cross_attn.as_ref().expect("variant has cross-attention");
                Self::modulated(g, x, &mods[0], |g, h| ca.forward(g, h, enc))?
            }
            BlockVariant::DitSelfAttention => {
                let sa = self.self_attn.as_ref().expect("variant has self-attention");
                Self::modulated(g, x, &mods[0], |g, h| sa.forward(g, h, h))?
            }
            BlockVariant::DitCrossAttention => {
                let enc = need_enc()?;
                let ca = self.cross_attn.as_ref().expect("variant has cross-attention");
                Self::modulated(g, x, &mods[0], |g, h| ca.forward(g, h, enc))?
            }
        };
        Self::modulated(g, x, &mods[1], |g, h| self.ffn.forward(g, h))
    }
}
