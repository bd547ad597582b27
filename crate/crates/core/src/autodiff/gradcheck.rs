//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::Result;

/// Central difference stencil. `FivePoint` cancels the cubic truncation term
/// at the same step size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Stencil {
    ThreePoint,
    #[default]
    FivePoint,
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub stencil: Stencil,
    pub tolerance: f64,
    /// Minimum number of coordinates sampled across all parameters.
    pub min_coords: usize,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// numerically zero are compared in absolute terms.
    pub scale_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            stencil: Stencil::default(),
            tolerance: 1e-5,
            min_coords: 100,
            scale_floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of `f` against central differences on a
/// random subset of parameter coordinates. `f` must be deterministic.
pub fn grad_check<R, L>(
    store: &mut ParamStore<f64>,
    f: L,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    R: Rng + ?Sized,
    L: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::inference(store);
        let loss = f(&mut g)?;
        Ok(g.value(loss).item())
    };

    let total: usize = store.iter().map(|p| p.value.len()).sum();
    let ids: Vec<_> = store.ids().collect();
    let mut report = GradCheckReport {
        params: Vec::new(),
        coords_checked: 0,
        max_rel_error: 0.0,
        tolerance: cfg.tolerance,
    };
    for id in ids {
        let size = store.value(id).len();
        if size == 0 {
            continue;
        }
        let want = (cfg.min_coords * size).div_ceil(total.max(1)).max(1).min(size);
        let coords = sample(rng, size, want).into_vec();
        let zeros = vec![0.0; size];
        let analytic = grads.param(id).unwrap_or(&zeros).to_vec();
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            coords: coords.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for j in coords {
            let orig = store.value(id).data()[j];
            let mut at = |offset: f64| -> Result<f64> {
                store.value_mut(id).data_mut()[j] = orig + offset;
                let v = eval(store);
                store.value_mut(id).data_mut()[j] = orig;
                v
            };
            let h = cfg.step;
            let d1 = at(h)? - at(-h)?;
            let numeric = match cfg.stencil {
                Stencil::ThreePoint => d1 / (2.0 * h),
                Stencil::FivePoint => {
                    let d2 = at(2.0 * h)? - at(-2.0 * h)?;
                    (8.0 * d1 - d2) / (12.0 * h)
                }
            };
            let abs = (analytic[j] - numeric).abs();
            let rel = relative_error(analytic[j], numeric, cfg.scale_floor);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(rel);
        }
        report.coords_checked += check.coords;
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.params.push(check);
    }
    Ok(report)
}
