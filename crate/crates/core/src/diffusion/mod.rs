//! Noise schedules, forward noising, the ε-prediction loss and the DDPM/DDIM samplers.

mod config;
mod empirical;
mod loss;
mod sampler;
mod schedule;

pub use config::{DiffusionConfig, SamplerKind};
pub use empirical::EmpiricalDenoiser;
pub use loss::{noise_batch, noise_loss, training_loss, NoisePredictor, NoisedBatch};
pub use sampler::{
    ddim_step, ddpm_step, ddpm_step_with_noise, make_subsequence, q_sample, sample, standard_normal, Denoiser,
    SampleOutput,
};
pub use schedule::{NoiseSchedule, ScheduleKind};

#[cfg(test)]
mod tests;
