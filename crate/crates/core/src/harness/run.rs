use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::BlockVariant;
use crate::diffusion::{DiffusionConfig, SamplerKind};
use crate::envs::{Dataset, Task};
use crate::error::{Error, Result};
use crate::harness::{evaluate, train, EvalSummary, EvalTiming, RunConfig, WithSampler};
use crate::policy::{Arch, Policy};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RECORD_FILE: &str = "record.json";
pub const TIMING_FILE: &str = "timing.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const DEMOS_FILE: &str = "demos.jsonl";

/// Deterministic summary of a training run and its evaluation. Wall-clock
/// measurements live in [`RunTiming`] so that this record is reproducible
/// byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub task: Task,
    pub arch: Arch,
    pub variant: BlockVariant,
    pub num_params: usize,
    pub sampler: SamplerKind,
    pub t_sample: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub eval: EvalSummary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub train_seconds: f64,
    pub eval: EvalTiming,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub policy: Policy,
    pub record: RunRecord,
    pub timing: RunTiming,
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// The configured dataset file, or freshly generated expert demonstrations.
pub fn load_or_generate(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.path {
        Some(p) => {
            let d = Dataset::load(p)?;
            if let Some(e) = d.episodes.iter().find(|e| e.task != cfg.task) {
                return Err(Error::Dataset(format!(
                    "{} contains a {} episode, run is {}",
                    p.display(),
                    e.task,
                    cfg.task
                )));
            }
            Ok(d)
        }
        None => Dataset::generate(cfg.task, cfg.data.demos, cfg.data.seed),
    }
}

/// Trains, evaluates and, when `out` is given, writes the checkpoint, record,
/// timing and resolved config there.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let data = load_or_generate(cfg)?;
    let start = Instant::now();
    let trained = train(cfg, &data)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let eval = evaluate(&trained.policy, cfg.task, cfg.eval.episodes, &cfg.eval.seeds)?;
    let record = RunRecord {
        config_hash: cfg.hash()?,
        task: cfg.task,
        arch: cfg.policy.arch,
        variant: cfg.policy.variant,
        num_params: trained.policy.num_params(),
        sampler: cfg.diffusion.sampler,
        t_sample: cfg.diffusion.t_sample,
        initial_loss: trained.initial_loss,
        final_loss: trained.final_loss,
        epoch_losses: trained.epoch_losses,
        eval: eval.summary,
    };
    let timing = RunTiming {
        train_seconds,
        eval: eval.timing,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        trained.policy.save(dir.join(CHECKPOINT_FILE))?;
        write_json(dir.join(RECORD_FILE), &record)?;
        write_json(dir.join(TIMING_FILE), &timing)?;
        let mut resolved = cfg.clone();
        resolved.out_dir = dir.to_path_buf();
        fs::write(dir.join(CONFIG_FILE), resolved.to_toml()?)?;
        if cfg.data.path.is_none() {
            data.save(dir.join(DEMOS_FILE))?;
        }
    }
    Ok(RunOutput {
        policy: trained.policy,
        record,
        timing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: BlockVariant,
    pub task: Task,
    pub mean_success: f64,
    pub std_success: f64,
    pub final_loss: f64,
}

pub const ABLATION_HEADER: &str = "variant,task,mean_success,std_success,final_loss";

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains and evaluates every `(variant, task)` pair with the budget, seeds
/// and data settings of `base`. Runs go to `out/<variant>-<task>/` and the
/// table to `out/ablation.csv`.
pub fn ablate(
    base: &RunConfig,
    tasks: &[Task],
    variants: &[BlockVariant],
    out: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    if base.policy.arch != Arch::Mtdp {
        return Err(Error::Config(
            "the decoder ablation applies to the MTDP architecture".into(),
        ));
    }
    if tasks.is_empty() || variants.is_empty() {
        return Err(Error::Config("ablation needs at least one task and one variant".into()));
    }
    let mut rows = Vec::with_capacity(tasks.len() * variants.len());
    for &variant in variants {
        for &task in tasks {
            let mut cfg = base.clone();
            cfg.task = task;
            cfg.policy.variant = variant;
            let dir = out.map(|o| o.join(format!("{}-{}", variant.name(), task.name())));
            let r = run(&cfg, dir.as_deref())?;
            rows.push(AblationRow {
                variant,
                task,
                mean_success: r.record.eval.mean,
                std_success: r.record.eval.std,
                final_loss: r.record.final_loss,
            });
        }
    }
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        write_csv(o.join("ablation.csv"), &rows)?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t_sample: usize,
    pub network_evals: usize,
    pub mean_success: f64,
    pub std_success: f64,
}

pub const SWEEP_HEADER: &str = "t_sample,network_evals,mean_success,std_success";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTimingRow {
    pub t_sample: usize,
    pub seconds_per_trajectory: f64,
    pub seconds_per_call: f64,
}

pub const DEFAULT_SWEEP_STEPS: [usize; 5] = [20, 40, 60, 80, 100];

/// Evaluates one checkpoint with the DDIM sampler at each step count.
pub fn sweep_timesteps(
    policy: &Policy,
    task: Task,
    steps: &[usize],
    episodes: usize,
    seeds: &[u64],
) -> Result<(Vec<SweepRow>, Vec<SweepTimingRow>)> {
    let mut rows = Vec::with_capacity(steps.len());
    let mut timing = Vec::with_capacity(steps.len());
    for &s in steps {
        let mut diffusion = DiffusionConfig::ddim(policy.diffusion.t_train, s);
        diffusion.schedule = policy.diffusion.schedule;
        diffusion.validate()?;
        let ctrl = WithSampler { policy, diffusion };
        let e = evaluate(&ctrl, task, episodes, seeds)?;
        rows.push(SweepRow {
            t_sample: s,
            network_evals: e.summary.network_evals_per_trajectory,
            mean_success: e.summary.mean,
            std_success: e.summary.std,
        });
        timing.push(SweepTimingRow {
            t_sample: s,
            seconds_per_trajectory: e.timing.seconds_per_trajectory,
            seconds_per_call: e.timing.seconds_per_call,
        });
    }
    Ok((rows, timing))
}

/// `sweep.csv` → `sweep.timing.csv`.
pub fn timing_path(path: &Path) -> PathBuf {
    path.with_extension("timing.csv")
}
