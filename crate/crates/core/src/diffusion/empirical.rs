use crate::autodiff::{Scalar, Tensor};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{Error, Result};

/// The exact minimum-MSE noise predictor when the data distribution is the
/// uniform mixture over a finite set of trajectories. Sampling with it
/// reproduces (a noisy neighbourhood of) the stored trajectories, so it
/// serves as a training-free stand-in for a learned network.
#[derive(Clone, Debug)]
pub struct EmpiricalDenoiser {
    data: Vec<Vec<f64>>,
    sched: NoiseSchedule,
}

impl EmpiricalDenoiser {
    /// Every trajectory is flattened and must have the same length.
    pub fn new(data: Vec<Vec<f64>>, sched: NoiseSchedule) -> Result<Self> {
        let Some(first) = data.first() else {
            return Err(Error::Empty("empirical denoiser data"));
        };
        if let Some(bad) = data.iter().find(|d| d.len() != first.len()) {
            return Err(Error::Shape {
                op: "empirical denoiser data",
                lhs: vec![first.len()],
                rhs: vec![bad.len()],
            });
        }
        Ok(Self { data, sched })
    }

    /// Posterior mean `E[x₀ | x_t]` for one flattened trajectory.
    pub fn posterior_mean(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        let ab = self.sched.alpha_bar(t)?;
        let (a, var) = (ab.sqrt(), 1.0 - ab);
        let logits: Vec<f64> = self
            .data
            .iter()
            .map(|x0| {
                let d2: f64 = x_t.iter().zip(x0).map(|(x, y)| (x - a * y).powi(2)).sum();
                -d2 / (2.0 * var)
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        let mut mean = vec![0.0; x_t.len()];
        for (wi, x0) in w.iter().zip(&self.data) {
            for (m, y) in mean.iter_mut().zip(x0) {
                *m += wi / z * y;
            }
        }
        Ok(mean)
    }
}

impl<F: Scalar> Denoiser<F> for EmpiricalDenoiser {
    fn predict_noise(&self, x_t: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
        let per = self.data[0].len();
        if !x_t.len().is_multiple_of(per.max(1)) {
            return Err(Error::Shape {
                op: "empirical denoiser input",
                lhs: vec![per],
                rhs: x_t.shape().to_vec(),
            });
        }
        let ab = self.sched.alpha_bar(t)?;
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut out = Vec::with_capacity(x_t.len());
        for row in x_t.to_f64_vec().chunks(per) {
            let x0 = self.posterior_mean(row, t)?;
            out.extend(row.iter().zip(&x0).map(|(x, m)| F::from_f64((x - a * m) / s)));
        }
        Tensor::new(x_t.shape().to_vec(), out)
    }
}
