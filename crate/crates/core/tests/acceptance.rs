//! Acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.
//!
//! `COMMGRAD_ACCEPTANCE_STEPS` shortens the main training run for local
//! iteration. A shortened run cannot pass the end-to-end learning criterion.

mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use commgrad::commnet::Kind;
use commgrad::harness::trace::{
    DelayAudit, OrderAudit, RawImageAudit, ScheduleAudit, SchemaAudit, TraceEvent,
};
use commgrad::harness::{
    baseline_random, run_training, wire_schemas, EpisodeSummary, Observer, TrainConfig,
};
use commgrad::replay::{memory_bytes, Schema};
use statrs::statistics::Statistics;

const BASELINE_EPISODES: usize = 1000;
const BASELINE_SEED: u64 = 1;
const DETERMINISM_STEPS: u64 = 3000;

struct Verdict {
    id: usize,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, pass, detail };
    println!("{}", line(&v));
    v
}

fn line(v: &Verdict) -> String {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    format!("criterion {:>2}: {tag}  {}", v.id, v.detail)
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let cases = match commgrad::gradsuite::run(20) {
        Ok(c) => c,
        Err(e) => return verdict(1, false, format!("suite error: {e}")),
    };
    let elapsed = start.elapsed();
    let worst = cases
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .expect("suite has cases");
    let failed: Vec<_> = cases
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.name)
        .collect();
    let in_time = elapsed < Duration::from_secs(60);
    verdict(
        1,
        failed.is_empty() && in_time,
        format!(
            "{} cases x 20 seeds, worst {} at {:.2e}, failed {failed:?}, {}",
            cases.len(),
            worst.name,
            worst.report.max_rel_error,
            secs(elapsed)
        ),
    )
}

fn td_convergence() -> Verdict {
    let start = Instant::now();
    let (updates, err) = common::td_chain(0.9, 1e-2, 5000);
    let elapsed = start.elapsed();
    verdict(
        2,
        err <= 1e-2 && elapsed < Duration::from_secs(60),
        format!(
            "max |Q - 10| = {err:.2e} after {updates} updates, {}",
            secs(elapsed)
        ),
    )
}

fn actor_ascent() -> Verdict {
    let mut worst = (0.0f32, 0usize, 0.0f32);
    for a_star in [0.5, -0.3, 0.0, 0.9] {
        let (updates, err) = common::quadratic_ascent(a_star, 1e-3, 2000);
        if err >= worst.2 {
            worst = (a_star, updates, err);
        }
    }
    let (a_star, updates, err) = worst;
    verdict(
        3,
        err <= 1e-3,
        format!("worst a* = {a_star}: |mu - a*| = {err:.2e} after {updates} updates"),
    )
}

fn autoencoder_learning() -> Verdict {
    let start = Instant::now();
    let runs = common::ae_training(500);
    let elapsed = start.elapsed();
    let ratios = runs.map(|(initial, last)| last / initial);
    verdict(
        4,
        ratios.iter().all(|&r| r <= 0.5) && elapsed < Duration::from_secs(120),
        format!(
            "MSE ratio agent1 {:.3} ({:.4} -> {:.4}), agent2 {:.3} ({:.4} -> {:.4}), {}",
            ratios[0],
            runs[0].0,
            runs[0].1,
            ratios[1],
            runs[1].0,
            runs[1].1,
            secs(elapsed)
        ),
    )
}

fn memory_accounting() -> Verdict {
    let raw = memory_bytes(1_000_000, &Schema::raw_image([3, 200, 200]));
    let feature = memory_bytes(1_000_000, &Schema::new(&[("feature", 32)], &[]));
    verdict(
        5,
        raw == 480_000_000_000 && feature == 128_000_000,
        format!("raw {raw} bytes, compressed {feature} bytes"),
    )
}

fn determinism(root: &Path) -> Verdict {
    let cfg = TrainConfig {
        total_steps: DETERMINISM_STEPS,
        ..TrainConfig::default()
    };
    let runs: Result<Vec<_>, _> = ["a", "b"]
        .iter()
        .map(|tag| run_training(&cfg, &root.join(format!("determinism_{tag}")), &mut ()))
        .collect();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return verdict(9, false, format!("run error: {e}")),
    };
    let same = |name: &Path| -> bool {
        let read = |dir: &Path| std::fs::read(dir.join(name)).ok();
        match (read(&runs[0].run_dir), read(&runs[1].run_dir)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    };
    let csv = same(Path::new("metrics.csv"));
    let ckpt = same(Path::new("checkpoints/final.ckpt"));
    verdict(
        9,
        csv && ckpt,
        format!(
            "two {DETERMINISM_STEPS}-step runs: metrics.csv identical {csv}, final checkpoint identical {ckpt}"
        ),
    )
}

/// Raw widths of the desk-scale images and of the full-size originals.
fn raw_shapes(cfg: &TrainConfig) -> Vec<[usize; 3]> {
    vec![
        cfg.scene.front_shape(),
        cfg.scene.top_shape(),
        [3, 100, 200],
        [3, 200, 200],
    ]
}

/// Declared envelope and replay schemas carry no field as wide as an image.
fn schema_violations(cfg: &TrainConfig) -> Vec<String> {
    let raw: Vec<usize> = raw_shapes(cfg).iter().map(|s| s.iter().product()).collect();
    let narrowest = *raw.iter().min().expect("shapes");
    let mut declared = match wire_schemas(cfg) {
        Ok(d) => d
            .into_iter()
            .map(|(k, s)| (format!("{k:?}"), k == Kind::CriticParams, s))
            .collect::<Vec<_>>(),
        Err(e) => return vec![format!("schema error: {e}")],
    };
    let specs = commgrad::harness::agent_specs(cfg);
    let layout = commgrad::critic::ObsLayout::new(specs[0], specs[1]);
    declared.push(("replay".into(), false, layout.transition_widths().schema()));
    let mut out = Vec::new();
    for (name, parameters, schema) in &declared {
        for (field, w) in &schema.floats {
            if raw.contains(w) || (!parameters && *w >= narrowest) {
                out.push(format!("{name}.{field} has width {w}"));
            }
        }
    }
    out
}

/// Episode rewards binned into the first and final tenth of training.
fn decile_margin(episodes: &[EpisodeSummary], total: u64) -> (f64, f64, f64, usize, usize) {
    let first: Vec<f64> = episodes
        .iter()
        .filter(|e| e.end_step <= total / 10)
        .map(|e| e.reward)
        .collect();
    let last: Vec<f64> = episodes
        .iter()
        .filter(|e| e.end_step > total - total / 10)
        .map(|e| e.reward)
        .collect();
    let (m1, m2) = (first.iter().mean(), last.iter().mean());
    let se = (first.iter().variance() / first.len() as f64
        + last.iter().variance() / last.len() as f64)
        .sqrt();
    (m1, m2, se, first.len(), last.len())
}

struct Progress {
    every: u64,
    start: Instant,
}

impl Observer for Progress {
    fn observe(&mut self, event: &TraceEvent<'_>) {
        if let TraceEvent::Schedule { step, .. } = event {
            if (step + 1) % self.every == 0 {
                eprintln!(
                    "  main run: step {} ({})",
                    step + 1,
                    secs(self.start.elapsed())
                );
            }
        }
    }
}

fn main() -> ExitCode {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    if let Err(e) = std::fs::create_dir_all(&root) {
        eprintln!("cannot create {}: {e}", root.display());
        return ExitCode::FAILURE;
    }

    let mut verdicts = vec![
        gradient_suite(),
        td_convergence(),
        actor_ascent(),
        autoencoder_learning(),
        memory_accounting(),
    ];

    let default_steps = TrainConfig::default().total_steps;
    let mut cfg = TrainConfig::default();
    if let Some(steps) = std::env::var("COMMGRAD_ACCEPTANCE_STEPS")
        .ok()
        .and_then(|s| s.parse().ok())
    {
        cfg.total_steps = steps;
    }
    let shortened = cfg.total_steps != default_steps;

    // Oracle first: the random-policy baseline.
    let baseline = baseline_random(&cfg, BASELINE_EPISODES, BASELINE_SEED);
    match &baseline {
        Ok(b) => println!(
            "baseline: random policy over {} episodes, success {:.4}, mean reward {:.2}",
            b.episodes, b.success_rate, b.mean_reward
        ),
        Err(e) => println!("baseline: error {e}"),
    }

    let shapes = [cfg.scene.front_shape(), cfg.scene.top_shape()];
    let mut order = OrderAudit::default();
    let mut delay = DelayAudit::default();
    let mut sched = ScheduleAudit::default();
    let mut raw = RawImageAudit::new(&raw_shapes(&cfg));
    let declared = wire_schemas(&cfg).unwrap_or_default();
    let mut schema = SchemaAudit::new(&declared);
    let mut progress = Progress {
        every: 20_000,
        start: Instant::now(),
    };
    let start = Instant::now();
    let run = {
        let mut ob = (
            ((&mut order, &mut delay), (&mut sched, &mut raw)),
            (&mut schema, &mut progress),
        );
        run_training(&cfg, &root.join("main"), &mut ob)
    };
    let elapsed = start.elapsed();
    let run_note = format!("{}-step run", cfg.total_steps);
    println!(
        "main run: {} steps in {} ({} order violations over {} steps, {} learning steps)",
        cfg.total_steps,
        secs(elapsed),
        order.violations.len(),
        order.steps,
        order.learning_steps()
    );

    verdicts.push(verdict(
        6,
        run.is_ok() && delay.violations.is_empty() && delay.checked == 2 * cfg.total_steps,
        format!(
            "{run_note}: {} inbox reads checked, {} violations{}",
            delay.checked,
            delay.violations.len(),
            delay
                .violations
                .first()
                .map(|v| format!(", first: {v}"))
                .unwrap_or_default()
        ),
    ));
    verdicts.push(verdict(
        7,
        run.is_ok() && sched.violations.is_empty() && sched.checked == cfg.total_steps,
        format!(
            "{run_note}: {} steps checked, {} violations",
            sched.checked,
            sched.violations.len()
        ),
    ));

    let learning = match (&run, &baseline) {
        (Ok(r), Ok(b)) => {
            let (m1, m2, se, n1, n2) = decile_margin(&r.episodes, cfg.total_steps);
            let a = n1 > 1 && n2 > 1 && m2 - m1 > 2.0 * se;
            let b_ok = r.final_success_ma >= 2.0 * b.success_rate;
            verdict(
                8,
                a && b_ok && !shortened,
                format!(
                    "{run_note} in {}: (a) {} first-decile mean {m1:.2} (n={n1}) -> final {m2:.2} (n={n2}), \
                     margin {:.2} vs 2*SE {:.2}; (b) {} success_ma100 {:.3} vs 2*baseline {:.3}{}",
                    secs(elapsed),
                    if a { "met" } else { "not met" },
                    m2 - m1,
                    2.0 * se,
                    if b_ok { "met" } else { "not met" },
                    r.final_success_ma,
                    2.0 * b.success_rate,
                    if shortened {
                        format!("; budget shortened from {default_steps}")
                    } else {
                        String::new()
                    }
                ),
            )
        }
        (Err(e), _) => verdict(8, false, format!("training error: {e}")),
        (_, Err(e)) => verdict(8, false, format!("baseline error: {e}")),
    };
    verdicts.push(learning);

    verdicts.push(determinism(&root));

    let static_violations = schema_violations(&cfg);
    verdicts.push(verdict(
        10,
        run.is_ok()
            && static_violations.is_empty()
            && raw.violations.is_empty()
            && schema.violations.is_empty()
            && raw.envelopes > 0
            && raw.records > 0,
        format!(
            "schema audit {} violations over {} declared kinds plus replay; {run_note}: {} envelopes and {} replay records, \
             {} raw-width and {} schema violations (image shapes {shapes:?})",
            static_violations.len(),
            declared.len(),
            raw.envelopes,
            raw.records,
            raw.violations.len(),
            schema.violations.len()
        ),
    ));

    verdicts.sort_by_key(|v| v.id);
    println!();
    println!("summary");
    for v in &verdicts {
        println!("{}", line(v));
    }
    if verdicts.iter().all(|v| v.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
