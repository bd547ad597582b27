use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mtdp::attention::BlockVariant;
use mtdp::envs::{Dataset, Task};
use mtdp::harness::{self, RunConfig, DEFAULT_SWEEP_STEPS};
use mtdp::policy::Policy;

#[derive(Parser)]
#[command(
    name = "mtdp",
    version,
    about = "Diffusion policies with modulated-attention denoisers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations as JSON lines plus a stats file.
    DemoGen {
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy from a TOML run config, evaluate it and write the results.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with receding-horizon rollouts; prints JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
        seeds: Vec<u64>,
        /// Also write the summary to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate all four decoder variants on each task.
    Ablate {
        #[arg(long, value_delimiter = ',', default_values_t = vec![Task::Reach, Task::Avoid])]
        tasks: Vec<Task>,
        /// Base run config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<BlockVariant>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with DDIM at several step counts; writes CSV.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_STEPS.to_vec())]
        steps: Vec<usize>,
        #[arg(long, default_value_t = Task::Reach)]
        task: Task,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DemoGen { task, n, seed, out } => {
            let d = Dataset::generate(task, n, seed)?;
            d.save(&out).with_context(|| format!("writing {}", out.display()))?;
            let (l, r) = d.mode_counts();
            let steps: usize = d.episodes.iter().map(|e| e.len()).sum();
            println!(
                "wrote {n} {task} episodes ({steps} steps, modes left={l} right={r}) to {}",
                out.display()
            );
        }
        Command::Train { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            let r = harness::run(&cfg, Some(&dir))?;
            println!(
                "{} {} on {}: loss {:.4} -> {:.4}, success {:.3} ± {:.3}, {:.1}s training; results in {}",
                r.record.arch,
                r.record.variant,
                r.record.task,
                r.record.initial_loss,
                r.record.final_loss,
                r.record.eval.mean,
                r.record.eval.std,
                r.timing.train_seconds,
                dir.display()
            );
        }
        Command::Eval {
            checkpoint,
            task,
            episodes,
            seeds,
            out,
        } => {
            let policy =
                Policy::load(&checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let e = harness::evaluate(&policy, task, episodes, &seeds)?;
            let json = serde_json::to_string_pretty(&e.summary)?;
            println!("{json}");
            eprintln!(
                "{:.4}s per sampling call, {:.5}s per trajectory",
                e.timing.seconds_per_call, e.timing.seconds_per_trajectory
            );
            if let Some(p) = out {
                ensure_parent(&p)?;
                fs::write(&p, json + "\n")?;
            }
        }
        Command::Ablate {
            tasks,
            config,
            variants,
            out,
        } => {
            let base = load_config(config.as_deref())?;
            let variants = variants.unwrap_or_else(|| BlockVariant::ALL.to_vec());
            let rows = harness::ablate(&base, &tasks, &variants, Some(&out))?;
            for r in &rows {
                println!(
                    "{:<20} {:<6} {:.3} ± {:.3}",
                    r.variant.name(),
                    r.task,
                    r.mean_success,
                    r.std_success
                );
            }
            println!("wrote {}", out.join("ablation.csv").display());
        }
        Command::Sweep {
            checkpoint,
            steps,
            task,
            episodes,
            seeds,
            out,
        } => {
            if steps.is_empty() {
                bail!("--steps must list at least one step count");
            }
            let policy =
                Policy::load(&checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let (rows, timing) = harness::sweep_timesteps(&policy, task, &steps, episodes, &seeds)?;
            ensure_parent(&out)?;
            harness::write_csv(&out, &rows)?;
            harness::write_csv(harness::timing_path(&out), &timing)?;
            for (r, t) in rows.iter().zip(&timing) {
                println!(
                    "T_sample={:<4} evals={:<4} success={:.3} ± {:.3} {:.5}s/trajectory",
                    r.t_sample, r.network_evals, r.mean_success, r.std_success, t.seconds_per_trajectory
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
