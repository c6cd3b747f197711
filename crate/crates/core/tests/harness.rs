use commgrad::autodiff::Checkpoint;
use commgrad::commnet::Endpoint;
use commgrad::harness::trace::{DelayAudit, OrderAudit, RawImageAudit, ScheduleAudit, SchemaAudit};
use commgrad::harness::{
    baseline_random, evaluate, run_training, stream, substream, wire_schemas, EpisodeSummary,
    Observer, TraceEvent, TrainConfig, Trainer,
};

fn small(steps: u64) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        warmup_steps: 200,
        batch_size: 16,
        actor_hidden: 16,
        critic_hidden: 32,
        checkpoint_every: 500,
        metrics_every: 50,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let cfg = small(900);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Vec<_> = dirs
        .iter()
        .map(|d| run_training(&cfg, d.path(), &mut ()).unwrap())
        .collect();
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    for f in [
        "metrics.csv",
        "checkpoints/final.ckpt",
        "checkpoints/step_00000500.ckpt",
        "config.json",
    ] {
        assert_eq!(read(&dirs[0], f), read(&dirs[1], f), "{f}");
    }
    assert_eq!(runs[0].episodes, runs[1].episodes);

    let mut other = cfg.clone();
    other.seed = 1;
    let d = tempfile::tempdir().unwrap();
    run_training(&other, d.path(), &mut ()).unwrap();
    assert_ne!(
        read(&dirs[0], "metrics.csv"),
        std::fs::read(d.path().join("metrics.csv")).unwrap()
    );
}

fn episodes(cfg: &TrainConfig) -> Vec<EpisodeSummary> {
    let mut t = Trainer::new(cfg.clone()).unwrap();
    while t.steps() < cfg.total_steps {
        t.step(&mut ()).unwrap();
    }
    t.episodes().to_vec()
}

#[test]
fn zero_step_sizes_match_the_frozen_policy() {
    let mut learning_off = small(1200);
    learning_off.schedule.eps0 = [0.0; 3];
    let mut never_updates = small(1200);
    never_updates.warmup_steps = u64::MAX;
    let a = episodes(&learning_off);
    let b = episodes(&never_updates);
    assert!(a.len() > 5);
    assert_eq!(a, b);
}

#[test]
fn trace_audits_are_clean() {
    let cfg = small(1000);
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let mut order = OrderAudit::default();
    let mut delay = DelayAudit::default();
    let mut sched = ScheduleAudit::default();
    let mut raw = RawImageAudit::new(&[cfg.scene.front_shape(), cfg.scene.top_shape()]);
    let mut schema = SchemaAudit::new(&wire_schemas(&cfg).unwrap());
    while t.steps() < cfg.total_steps {
        let mut obs = (
            (&mut order, &mut delay),
            ((&mut sched, &mut raw), &mut schema),
        );
        t.step(&mut obs).unwrap();
    }
    assert!(
        order.violations.is_empty(),
        "{:?}",
        &order.violations[..3.min(order.violations.len())]
    );
    assert_eq!(order.steps, 1000);
    assert_eq!(order.learning_steps(), 800);
    assert!(
        delay.violations.is_empty(),
        "{:?}",
        delay.violations.first()
    );
    assert_eq!(delay.checked, 2000);
    assert!(sched.violations.is_empty());
    assert!(raw.violations.is_empty(), "{:?}", raw.violations.first());
    assert!(raw.envelopes > 4000 && raw.records == 1000);
    assert!(
        schema.violations.is_empty(),
        "{:?}",
        schema.violations.first()
    );
    assert_eq!(schema.checked, raw.envelopes);
}

/// Counts each agent's uplink bytes per step, outside episode starts.
#[derive(Default)]
struct Uplinks {
    per_step: Vec<[u64; 2]>,
    resetting: bool,
}

impl Observer for Uplinks {
    fn observe(&mut self, e: &TraceEvent<'_>) {
        match e {
            TraceEvent::Reset { .. } => self.resetting = true,
            TraceEvent::Act { agent: 0, .. } => {
                self.resetting = false;
                self.per_step.push([0, 0]);
            }
            TraceEvent::Sent { envelope, .. }
                if envelope.dst == Endpoint::Critic && !self.resetting =>
            {
                let i = (envelope.src != Endpoint::Agent1) as usize;
                self.per_step.last_mut().unwrap()[i] += envelope.size as u64;
            }
            _ => {}
        }
    }
}

#[test]
fn uplink_carries_exactly_the_abstract_observation() {
    let cfg = small(300);
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let mut up = Uplinks::default();
    while t.steps() < cfg.total_steps {
        t.step(&mut up).unwrap();
    }
    let (d, c, v) = (cfg.feature_dim, cfg.message_dim, cfg.scene.vec_obs_width());
    let agent1 = 4 * (v + d + c + 2 + c) as u64;
    let agent2 = 4 * (d + c + c) as u64;
    assert!(
        up.per_step.iter().all(|s| *s == [agent1, agent2]),
        "{:?}",
        &up.per_step[..3]
    );
}

#[test]
fn evaluation_is_repeatable_and_bounded() {
    let cfg = small(10);
    let d = tempfile::tempdir().unwrap();
    let s = run_training(&cfg, d.path(), &mut ()).unwrap();
    let ckpt = Checkpoint::load(&s.final_checkpoint).unwrap();
    let a = evaluate(&cfg, &ckpt, 20, 5).unwrap();
    let b = evaluate(&cfg, &ckpt, 20, 5).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.success_rate));
    assert_eq!(a.episodes, 20);

    let mut wrong = cfg.clone();
    wrong.feature_dim = 16;
    assert!(evaluate(&wrong, &ckpt, 1, 0).is_err());
}

#[test]
fn random_baseline_sanity() {
    let cfg = TrainConfig::default();
    let a = baseline_random(&cfg, 1000, 0).unwrap();
    assert_eq!(a, baseline_random(&cfg, 1000, 0).unwrap());
    assert!(a.success_rate < 0.5, "{a:?}");
    assert!(a.mean_reward < 0.0, "{a:?}");
    assert!(baseline_random(&cfg, 0, 0).is_err());
}

#[test]
fn substreams_are_independent() {
    use rand::Rng;
    let mut a = substream(3, stream::ENV);
    let mut b = substream(3, stream::NOISE1);
    let mut a2 = substream(3, stream::ENV);
    let (x, y, z): (u64, u64, u64) = (a.random(), b.random(), a2.random());
    assert_eq!(x, z);
    assert_ne!(x, y);
}
