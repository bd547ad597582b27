use crate::autodiff::{Gradients, ParamStore};
use crate::harness::OptimConfig;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl AdamW {
    pub fn new(store: &ParamStore<f32>, cfg: &OptimConfig) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.len()]).collect::<Vec<_>>();
        Self {
            beta1: cfg.beta1 as f32,
            beta2: cfg.beta2 as f32,
            eps: cfg.eps as f32,
            weight_decay: cfg.weight_decay as f32,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update at step size `lr`. Parameters without a gradient only decay.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &Gradients<f32>, lr: f64) {
        self.t += 1;
        let lr = lr as f32;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.param(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.value_mut(id).data_mut();
            for j in 0..p.len() {
                p[j] -= lr * self.weight_decay * p[j];
                let Some(g) = g else { continue };
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Half-cosine decay from `peak` at step 0 to 0 at `total`.
pub fn cosine_lr(peak: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return peak;
    }
    let p = (step as f64 / total as f64).min(1.0);
    0.5 * peak * (1.0 + (std::f64::consts::PI * p).cos())
}
