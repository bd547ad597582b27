use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Scalar, Var};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear};

/// Scaled dot-product attention with per-head projections. No masking:
/// every query attends to every key.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q_proj: Linear,
    pub k_proj: Linear,
    pub v_proj: Linear,
    pub out_proj: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        d_model: usize,
        n_heads: usize,
    ) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "{name}: d_model {d_model} is not divisible by {n_heads} heads"
            )));
        }
        let lin = |store: &mut ParamStore<F>, rng: &mut R, part: &str| {
            Linear::new(store, rng, &format!("{name}.{part}"), d_model, d_model, Init::FanIn)
        };
        Ok(Self {
            q_proj: lin(store, rng, "q_proj")?,
            k_proj: lin(store, rng, "k_proj")?,
            v_proj: lin(store, rng, "v_proj")?,
            out_proj: lin(store, rng, "out_proj")?,
            n_heads,
            d_model,
        })
    }

    /// `[B, N, D] → [B, H, N, D/H]`
    fn split_heads<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let x = g.reshape(x, &[s[0], s[1], self.n_heads, self.d_model / self.n_heads])?;
        g.permute(x, &[0, 2, 1, 3])
    }

    /// Attention weights `[B, H, N_q, N_k]` (exposed for inspection).
    pub fn weights<F: Scalar>(&self, g: &mut Graph<'_, F>, queries: Var, keys_values: Var) -> Result<Var> {
        let q = self.q_proj.forward(g, queries)?;
        let k = self.k_proj.forward(g, keys_values)?;
        let q = self.split_heads(g, q)?;
        let k = self.split_heads(g, k)?;
        let scores = g.matmul_nt(q, k)?;
        let dh = (self.d_model / self.n_heads) as f64;
        let scores = g.scale(scores, 1.0 / dh.sqrt());
        g.softmax(scores)
    }

    /// `queries`: `[B, N_q, D]`, `keys_values`: `[B, N_k, D]`. Self-attention
    /// when both are the same tensor.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, queries: Var, keys_values: Var) -> Result<Var> {
        let qs = g.shape(queries).to_vec();
        let ks = g.shape(keys_values).to_vec();
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.d_model || ks[2] != self.d_model {
            return Err(Error::Shape {
                op: "attention",
                lhs: qs,
                rhs: ks,
            });
        }
        let attn = self.weights(g, queries, keys_values)?;
        let v = self.v_proj.forward(g, keys_values)?;
        let v = self.split_heads(g, v)?;
        let ctx = g.matmul(attn, v)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[qs[0], qs[1], self.d_model])?;
        self.out_proj.forward(g, ctx)
    }
}
