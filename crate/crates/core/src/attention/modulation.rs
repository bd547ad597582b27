use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Scalar, Var};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear};

/// Shift, scale and gate for one modulated sublayer, each `[B, 1, D]`.
#[derive(Clone, Copy, Debug)]
pub struct ModulationParams {
    pub shift: Var,
    pub scale: Var,
    pub gate: Var,
}

/// Maps a pooled condition vector to per-sublayer modulation triples:
/// GELU followed by a linear layer whose weights start at zero, so every
/// triple is exactly zero at construction.
#[derive(Clone, Debug)]
pub struct Modulation {
    pub proj: Linear,
    pub sublayers: usize,
    pub d_model: usize,
}

impl Modulation {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        d_cond: usize,
        d_model: usize,
        sublayers: usize,
    ) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(
                store,
                rng,
                &format!("{name}.proj"),
                d_cond,
                3 * sublayers * d_model,
                Init::Zero,
            )?,
            sublayers,
            d_model,
        })
    }

    /// `cond`: `[B, d_cond]`.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, cond: Var) -> Result<Vec<ModulationParams>> {
        let s = g.shape(cond).to_vec();
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "modulation condition",
                lhs: s,
                rhs: vec![self.proj.in_dim],
            });
        }
        let h = g.gelu(cond);
        let m = self.proj.forward(g, h)?;
        let m = g.reshape(m, &[s[0], 1, 3 * self.sublayers * self.d_model])?;
        let d = self.d_model;
        let mut out = Vec::with_capacity(self.sublayers);
        for i in 0..self.sublayers {
            let base = 3 * i * d;
            out.push(ModulationParams {
                shift: g.slice(m, 2, base, d)?,
                scale: g.slice(m, 2, base + d, d)?,
                gate: g.slice(m, 2, base + 2 * d, d)?,
            });
        }
        Ok(out)
    }
}

/// `x·(1 + scale) + shift`, broadcast along the token axis.
pub fn modulate<F: Scalar>(g: &mut Graph<'_, F>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let s1 = g.add_scalar(scale, 1.0);
    let y = g.mul(x, s1)?;
    g.add(y, shift)
}

/// `x + gate ⊙ branch`.
pub fn gate_residual<F: Scalar>(g: &mut Graph<'_, F>, x: Var, branch: Var, gate: Var) -> Result<Var> {
    let gb = g.mul(branch, gate)?;
    g.add(x, gb)
}

/// Mean over the token axis: `[B, N, D] → [B, D]`.
pub fn pool_condition<F: Scalar>(g: &mut Graph<'_, F>, tokens: Var) -> Result<Var> {
    let s = g.shape(tokens);
    if s.len() != 3 {
        return Err(Error::Shape {
            op: "pool_condition",
            lhs: s.to_vec(),
            rhs: vec![],
        });
    }
    if s[1] == 0 {
        return Err(Error::Empty("condition token sequence"));
    }
    g.mean(tokens, 1)
}
