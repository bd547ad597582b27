use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranges narrower than this are treated as this wide, so constant
/// dimensions map to −1 instead of dividing by zero.
pub const RANGE_EPS: f64 = 1e-6;

/// Per-dimension min–max scaling to `[−1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    /// Leaves values in `[−1, 1]` unchanged.
    pub fn identity(dim: usize) -> Self {
        Self {
            min: vec![-1.0; dim],
            max: vec![1.0; dim],
        }
    }

    /// Statistics over row-major rows of width `dim`.
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        let mut seen = false;
        for row in rows {
            if row.len() != dim {
                return Err(Error::Shape {
                    op: "normalizer fit",
                    lhs: vec![dim],
                    rhs: vec![row.len()],
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteInput(format!("normalizer fit, dimension {j}")));
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
            seen = true;
        }
        if !seen {
            return Err(Error::Empty("normalizer statistics"));
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn range(&self, j: usize) -> f64 {
        (self.max[j] - self.min[j]).max(RANGE_EPS)
    }

    fn check(&self, len: usize) -> Result<()> {
        if self.dim() == 0 || !len.is_multiple_of(self.dim()) {
            return Err(Error::Shape {
                op: "normalizer",
                lhs: vec![self.dim()],
                rhs: vec![len],
            });
        }
        Ok(())
    }

    /// In place over row-major rows of width `dim`.
    pub fn normalize(&self, x: &mut [f64]) -> Result<()> {
        self.check(x.len())?;
        let d = self.dim();
        for (i, v) in x.iter_mut().enumerate() {
            let j = i % d;
            *v = 2.0 * (*v - self.min[j]) / self.range(j) - 1.0;
        }
        Ok(())
    }

    pub fn denormalize(&self, x: &mut [f64]) -> Result<()> {
        self.check(x.len())?;
        let d = self.dim();
        for (i, v) in x.iter_mut().enumerate() {
            let j = i % d;
            *v = (*v + 1.0) / 2.0 * self.range(j) + self.min[j];
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs: MinMax,
    pub action: MinMax,
}

impl Normalizer {
    pub fn identity(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs: MinMax::identity(obs_dim),
            action: MinMax::identity(action_dim),
        }
    }
}
