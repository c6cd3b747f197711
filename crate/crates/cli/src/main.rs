use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use commgrad::autodiff::Checkpoint;
use commgrad::gradsuite;
use commgrad::harness::{
    baseline_random, evaluate, run_training, Observer, TraceEvent, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "commgrad",
    about = "Two-agent actor-critic training with learned, bandwidth-accounted messages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config; omitted keys take their defaults.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory for config, metrics and checkpoints.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the `config.json` of the run that wrote the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Uniform random actuator commands.
    Baseline {
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene and network sizes; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient checks; exits nonzero on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

struct Progress {
    every: u64,
    start: Instant,
    episodes: u64,
    successes: u64,
}

impl Observer for Progress {
    fn observe(&mut self, event: &TraceEvent<'_>) {
        match event {
            TraceEvent::EpisodeEnd { success, .. } => {
                self.episodes += 1;
                self.successes += *success as u64;
            }
            TraceEvent::Schedule { step, .. } if (step + 1) % self.every == 0 => {
                eprintln!(
                    "step {:>8}  episodes {:>6}  successes {:>5}  {:.0}s",
                    step + 1,
                    self.episodes,
                    self.successes,
                    self.start.elapsed().as_secs_f64()
                );
            }
            _ => {}
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(TrainConfig::default()),
    }
}

/// `run/checkpoints/x.ckpt` -> `run/config.json`, if present.
fn run_config_for(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint
        .ancestors()
        .skip(1)
        .take(2)
        .map(|d| d.join("config.json"))
        .find(|p| p.is_file())
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Train { config, seed, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            if let Some(p) = &config {
                std::fs::copy(p, out.join("config.input.json")).context("echoing config")?;
            }
            let mut progress = Progress {
                every: 10_000,
                start: Instant::now(),
                episodes: 0,
                successes: 0,
            };
            let s = run_training(&cfg, &out, &mut progress)?;
            println!(
                "steps {}  episodes {}  reward_ma100 {:.3}  success_ma100 {:.3}  bytes up {} down {}",
                s.steps,
                s.episodes.len(),
                s.final_reward_ma,
                s.final_success_ma,
                s.bytes_up,
                s.bytes_down
            );
            println!("checkpoint {}", s.final_checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            config,
        } => {
            let cfg_path = config.or_else(|| run_config_for(&checkpoint));
            let cfg = load_config(cfg_path.as_deref())?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let r = evaluate(&cfg, &ckpt, episodes, seed)?;
            println!(
                "episodes {}  mean_reward {:.4}  success_rate {:.4}",
                r.episodes, r.mean_reward, r.success_rate
            );
        }
        Command::Baseline {
            episodes,
            seed,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let r = baseline_random(&cfg, episodes, seed)?;
            println!(
                "episodes {}  mean_reward {:.4}  success_rate {:.4}",
                r.episodes, r.mean_reward, r.success_rate
            );
        }
        Command::Gradcheck { seeds } => {
            if seeds == 0 {
                bail!("need at least one seed");
            }
            let mut ok = true;
            for r in gradsuite::run(seeds)? {
                println!(
                    "{:<6} {:<16} max_rel_error {:.3e}  checked {}  skipped {}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.report.max_rel_error,
                    r.report.checked,
                    r.report.skipped
                );
                ok &= r.passed();
            }
            return Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
    }
    Ok(ExitCode::SUCCESS)
}
