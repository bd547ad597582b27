//! Training, evaluation rollouts, the decoder ablation and the sampling-step
//! sweep, plus run configuration and result files.

mod config;
mod eval;
mod optim;
mod run;
mod train;

pub use config::{DataConfig, EvalConfig, OptimConfig, RunConfig};
pub use eval::{
    evaluate, mean_std, Controller, EvalOutput, EvalSummary, EvalTiming, ExpertController, ModeCounts, WithSampler,
};
pub use optim::{cosine_lr, AdamW};
pub use run::{
    ablate, load_or_generate, run, sweep_timesteps, timing_path, write_csv, write_json, AblationRow, RunOutput,
    RunRecord, RunTiming, SweepRow, SweepTimingRow, ABLATION_HEADER, CHECKPOINT_FILE, CONFIG_FILE, DEFAULT_SWEEP_STEPS,
    DEMOS_FILE, RECORD_FILE, SWEEP_HEADER, TIMING_FILE,
};
pub use train::{train, TrainOutput};
