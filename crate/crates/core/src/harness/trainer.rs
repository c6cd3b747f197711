use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::metrics::{EpisodeWindow, MetricsRow, MetricsWriter};
use super::schedule::schedules;
use super::trace::{Observer, TraceEvent};
use crate::actor::{AbstractObservation, Actor, AgentSpec, ExtendedAction, PolicyBatch};
use crate::autodiff::{Checkpoint, Network, OuNoise, Record, Tensor};
use crate::codec::{AeUpdate, Autoencoder, ImageBuffer};
use crate::commnet::{CommNet, Endpoint, Kind, LinkLedger, Payload, PayloadReader};
use crate::critic::{
    decode_minibatch, decode_params_into, encode_minibatch, encode_params, ConcatObservation,
    Critic, Minibatch, ObsLayout,
};
use crate::env::{Env, Event, ObservationBundle};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Schema, Transition};

/// Executed actions of both agents, flattened.
type JointAction = [Vec<f32>; 2];

/// Named random substreams derived from one root seed.
pub mod stream {
    pub const ENV: u64 = 1;
    pub const NOISE1: u64 = 2;
    pub const REPLAY_SAMPLE: u64 = 3;
    pub const AE_SAMPLE1: u64 = 4;
    pub const AE_SAMPLE2: u64 = 5;
    pub const INIT: u64 = 6;
    pub const BASELINE: u64 = 7;
    pub const EVAL: u64 = 8;
}

pub fn substream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Agent 1 drives and sees the front camera; agent 2 is the fixed overhead view.
pub fn agent_specs(cfg: &TrainConfig) -> [AgentSpec; 2] {
    let (d, c) = (cfg.feature_dim, cfg.message_dim);
    [
        AgentSpec {
            vec_obs: cfg.scene.vec_obs_width(),
            feature: d,
            inbox: c,
            a_m: 2,
            a_c: c,
        },
        AgentSpec {
            vec_obs: 0,
            feature: d,
            inbox: c,
            a_m: 0,
            a_c: c,
        },
    ]
}

/// Declared float fields of every envelope kind the trainer sends. The
/// abstract-observation uplink is listed once per agent; a minibatch repeats
/// its transition fields once per row.
pub fn wire_schemas(cfg: &TrainConfig) -> Result<Vec<(Kind, Schema)>> {
    let specs = agent_specs(cfg);
    let layout = ObsLayout::new(specs[0], specs[1]);
    let critic_net = crate::critic::critic_builder("critic", &layout, cfg.critic_hidden)
        .build::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0))?;
    let mut out = vec![(Kind::Message, Schema::new(&[("a_c", cfg.message_dim)], &[]))];
    for s in &specs {
        out.push((
            Kind::AbstractObs,
            Schema::new(
                &[
                    ("vec_obs", s.vec_obs),
                    ("feature", s.feature),
                    ("inbox", s.inbox),
                    ("a_m", s.a_m),
                    ("a_c", s.a_c),
                ],
                &[],
            ),
        ));
    }
    out.push((Kind::Minibatch, layout.transition_widths().schema()));
    out.push((
        Kind::CriticParams,
        Schema::new(&[("params", critic_net.value_count())], &[]),
    ));
    Ok(out)
}

fn agent_image(obs: &ObservationBundle, agent: usize) -> &Tensor<f32> {
    if agent == 0 {
        &obs.front_image
    } else {
        &obs.top_image
    }
}

fn agent_vec(obs: &ObservationBundle, agent: usize) -> Vec<f32> {
    if agent == 0 {
        obs.vec_obs1.clone()
    } else {
        Vec::new()
    }
}

/// Local policy, encoder and view of one agent.
#[derive(Clone, Debug)]
pub struct AgentPolicy {
    pub actor: Actor,
    pub ae: Autoencoder,
}

impl AgentPolicy {
    fn observe(
        &mut self,
        obs: &ObservationBundle,
        agent: usize,
        inbox: &[f32],
    ) -> Result<AbstractObservation> {
        Ok(AbstractObservation {
            vec_obs: agent_vec(obs, agent),
            feature: self.ae.encode(agent_image(obs, agent))?,
            inbox: inbox.to_vec(),
        })
    }
}

pub fn build_policies(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<[AgentPolicy; 2]> {
    let specs = agent_specs(cfg);
    let shapes = [cfg.scene.front_shape(), cfg.scene.top_shape()];
    let a1 = Actor::new("agent1", 0, specs[0], cfg.actor_hidden, rng)?;
    let a2 = Actor::new("agent2", 1, specs[1], cfg.actor_hidden, rng)?;
    let e1 = Autoencoder::new("agent1", shapes[0], cfg.feature_dim, rng)?;
    let e2 = Autoencoder::new("agent2", shapes[1], cfg.feature_dim, rng)?;
    Ok([
        AgentPolicy { actor: a1, ae: e1 },
        AgentPolicy { actor: a2, ae: e2 },
    ])
}

fn policy_networks(p: [&AgentPolicy; 2]) -> impl Iterator<Item = &Network<f32>> {
    p.into_iter()
        .flat_map(|a| [&a.actor.net, &a.actor.target, &a.ae.encoder, &a.ae.decoder])
}

/// Restores actors and autoencoders from a checkpoint written by the trainer.
pub fn load_policies(cfg: &TrainConfig, ckpt: &Checkpoint) -> Result<[AgentPolicy; 2]> {
    let mut p = build_policies(cfg, &mut substream(cfg.seed, stream::INIT))?;
    for a in &mut p {
        for net in [
            &mut a.actor.net,
            &mut a.actor.target,
            &mut a.ae.encoder,
            &mut a.ae.decoder,
        ] {
            ckpt.restore_network(net)?;
        }
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub episode: u64,
    /// Global step count when the episode ended.
    pub end_step: u64,
    pub length: u64,
    pub reward: f64,
    pub success: bool,
    pub event: Event,
}

struct AgentState {
    policy: AgentPolicy,
    images: ImageBuffer,
    ae_rng: ChaCha8Rng,
    /// The agent's copy of the critic, refreshed from each downlink.
    critic_copy: Network<f32>,
    obs: AbstractObservation,
    last_ae_loss: f64,
}

/// Result of one environment step.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub row: Option<MetricsRow>,
    pub episode: Option<EpisodeSummary>,
}

pub struct Trainer {
    cfg: TrainConfig,
    layout: ObsLayout,
    env: Env,
    agents: [AgentState; 2],
    critic: Critic,
    replay: ReplayBuffer,
    net: CommNet,
    noise: OuNoise,
    env_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    /// The critic's view of the current joint observation.
    critic_obs: Vec<f32>,
    t: u64,
    episode: u64,
    episode_step: u64,
    episode_reward: f64,
    needs_reset: bool,
    window: EpisodeWindow,
    episodes: Vec<EpisodeSummary>,
    last_critic_loss: f64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let specs = agent_specs(&cfg);
        let layout = ObsLayout::new(specs[0], specs[1]);
        let mut init = substream(cfg.seed, stream::INIT);
        let policies = build_policies(&cfg, &mut init)?;
        let critic = Critic::new(layout, cfg.critic_hidden, &mut init)?;
        let ae_rngs = [
            substream(cfg.seed, stream::AE_SAMPLE1),
            substream(cfg.seed, stream::AE_SAMPLE2),
        ];
        let mut k = 0;
        let agents = policies.map(|policy| {
            let state = AgentState {
                policy,
                images: ImageBuffer::new(cfg.image_buffer_capacity),
                ae_rng: ae_rngs[k].clone(),
                critic_copy: critic.net.clone(),
                obs: AbstractObservation::default(),
                last_ae_loss: f64::NAN,
            };
            k += 1;
            state
        });
        let noise = OuNoise::new(2, cfg.noise.theta, cfg.noise.sigma, cfg.noise.dt);
        Ok(Self {
            env: Env::new(cfg.scene.clone())?,
            replay: ReplayBuffer::new(cfg.replay_capacity, layout.transition_widths()),
            net: CommNet::new(cfg.link_cap),
            env_rng: substream(cfg.seed, stream::ENV),
            noise_rng: substream(cfg.seed, stream::NOISE1),
            replay_rng: substream(cfg.seed, stream::REPLAY_SAMPLE),
            window: EpisodeWindow::new(cfg.ma_window),
            layout,
            agents,
            critic,
            noise,
            critic_obs: Vec::new(),
            t: 0,
            episode: 0,
            episode_step: 0,
            episode_reward: 0.0,
            needs_reset: true,
            episodes: Vec::new(),
            last_critic_loss: f64::NAN,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn layout(&self) -> &ObsLayout {
        &self.layout
    }

    pub fn ledger(&self) -> &LinkLedger {
        self.net.ledger()
    }

    pub fn episodes(&self) -> &[EpisodeSummary] {
        &self.episodes
    }

    pub fn window(&self) -> &EpisodeWindow {
        &self.window
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn policies(&self) -> [&AgentPolicy; 2] {
        [&self.agents[0].policy, &self.agents[1].policy]
    }

    pub fn image_buffer_len(&self, agent: usize) -> usize {
        self.agents[agent].images.len()
    }

    /// Every network plus the step and episode counters.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        for net in policy_networks(self.policies()) {
            c.push_network(net)?;
        }
        c.push_network(&self.critic.net)?;
        c.push_network(&self.critic.target)?;
        c.push(Record {
            name: "trainer.counters".into(),
            shape: vec![2],
            values: vec![self.t as f32, self.episode as f32],
        })?;
        Ok(c)
    }

    fn uplink(
        &mut self,
        agent: usize,
        action: Option<&ExtendedAction>,
        ob: &mut dyn Observer,
    ) -> Result<()> {
        let o = &self.agents[agent].obs;
        let mut p = Payload::new();
        p.floats(&o.vec_obs).floats(&o.feature).floats(&o.inbox);
        if let Some(a) = action {
            p.floats(&a.a_m).floats(&a.a_c);
        }
        let e = self.net.send(
            Endpoint::agent(agent),
            Endpoint::Critic,
            Kind::AbstractObs,
            p,
            self.t,
        )?;
        ob.observe(&TraceEvent::Sent {
            step: self.t,
            envelope: e,
        });
        Ok(())
    }

    /// Critic side: reads both uplinks due now. Returns the joint observation
    /// and, when present, the two executed actions.
    fn receive_uplinks(&mut self) -> Result<(Vec<f32>, Option<JointAction>)> {
        type Uplink = (AbstractObservation, Option<Vec<f32>>);
        let mut parts: [Option<Uplink>; 2] = [None, None];
        for e in self.net.deliver(Endpoint::Critic, self.t) {
            let i = match e.src {
                Endpoint::Agent1 => 0,
                Endpoint::Agent2 => 1,
                Endpoint::Critic => unreachable!("critic never sends to itself"),
            };
            let spec = self.layout.agents[i];
            let mut r = PayloadReader::new(&e.payload);
            let obs = AbstractObservation {
                vec_obs: r.floats(spec.vec_obs)?,
                feature: r.floats(spec.feature)?,
                inbox: r.floats(spec.inbox)?,
            };
            let action = if e.payload.len() > 4 * spec.input_width() {
                Some(r.floats(spec.action_width())?)
            } else {
                None
            };
            r.finish()?;
            parts[i] = Some((obs, action));
        }
        let [Some((o1, x1)), Some((o2, x2))] = parts else {
            return Err(Error::Network(format!(
                "critic is missing an uplink at step {}",
                self.t
            )));
        };
        let o = ConcatObservation { o1, o2 }.flatten(&self.layout)?;
        let actions = match (x1, x2) {
            (Some(a), Some(b)) => Some([a, b]),
            (None, None) => None,
            _ => {
                return Err(Error::Network(format!(
                    "uplinks disagree at step {}",
                    self.t
                )))
            }
        };
        Ok((o, actions))
    }

    fn begin_episode(&mut self, ob: &mut dyn Observer) -> Result<()> {
        ob.observe(&TraceEvent::Reset {
            step: self.t,
            episode: self.episode,
        });
        let obs = self.env.reset(&mut self.env_rng);
        self.noise.reset();
        self.episode_step = 0;
        self.episode_reward = 0.0;
        for i in 0..2 {
            let a = &mut self.agents[i];
            a.images.push(agent_image(&obs, i).clone());
            let inbox = vec![0.0; self.layout.agents[i].inbox];
            a.obs = a.policy.observe(&obs, i, &inbox)?;
            self.uplink(i, None, ob)?;
        }
        let (o, actions) = self.receive_uplinks()?;
        debug_assert!(actions.is_none());
        self.critic_obs = o;
        self.needs_reset = false;
        Ok(())
    }

    /// One environment step with every update it triggers.
    pub fn step(&mut self, ob: &mut dyn Observer) -> Result<StepReport> {
        if self.needs_reset {
            self.begin_episode(ob)?;
        }
        let t = self.t;
        let eps = schedules(t, &self.cfg.schedule);
        let learning = t >= self.cfg.warmup_steps;

        // Decide, exploring only the actuator head of agent 1.
        let mut actions: [ExtendedAction; 2] = Default::default();
        #[allow(clippy::needless_range_loop)]
        for i in 0..2 {
            let a = &mut self.agents[i];
            actions[i] = if i == 0 {
                a.policy
                    .actor
                    .act_exploring(&a.obs, &mut self.noise, &mut self.noise_rng)?
                    .1
            } else {
                a.policy.actor.act(&a.obs)?
            };
            ob.observe(&TraceEvent::Act {
                step: t,
                episode_step: self.episode_step,
                agent: i,
                inbox: &a.obs.inbox,
                action: &actions[i],
            });
        }
        for (i, action) in actions.iter().enumerate() {
            let mut p = Payload::new();
            p.floats(&action.a_c);
            let e = self.net.send(
                Endpoint::agent(i),
                Endpoint::agent(1 - i),
                Kind::Message,
                p,
                t,
            )?;
            ob.observe(&TraceEvent::Sent {
                step: t,
                envelope: e,
            });
        }

        let a_m: Vec<f64> = actions[0].a_m.iter().map(|&v| v as f64).collect();
        let out = self.env.step(&a_m)?;
        ob.observe(&TraceEvent::EnvStep {
            step: t,
            reward: out.reward,
            done: out.done,
        });
        self.t += 1;

        for i in 0..2 {
            self.agents[i].images.push(agent_image(&out.obs, i).clone());
        }
        if learning {
            let p = self.cfg.ae_batch_size;
            let [s1, s2] = &mut self.agents;
            let run =
                |s: &mut AgentState| s.policy.ae.ae_update(&s.images, p, eps[2], &mut s.ae_rng);
            let (r1, r2) = std::thread::scope(|scope| {
                let h = scope.spawn(|| run(s1));
                let r2 = run(s2);
                (h.join().expect("autoencoder thread panicked"), r2)
            });
            for (i, r) in [r1?, r2?].into_iter().enumerate() {
                if let AeUpdate::Updated { loss } = r {
                    self.agents[i].last_ae_loss = loss;
                }
                ob.observe(&TraceEvent::AeUpdate {
                    step: t,
                    agent: i,
                    loss: r.loss(),
                });
            }
        }

        let mut inboxes: [Vec<f32>; 2] = Default::default();
        for (i, inbox) in inboxes.iter_mut().enumerate() {
            let got = self.net.deliver(Endpoint::agent(i), self.t);
            let [e] = got.as_slice() else {
                return Err(Error::Network(format!(
                    "agent {} expected one message at step {}, got {}",
                    i + 1,
                    self.t,
                    got.len()
                )));
            };
            let mut r = PayloadReader::new(&e.payload);
            *inbox = r.floats(self.layout.agents[i].inbox)?;
            r.finish()?;
        }
        ob.observe(&TraceEvent::MessagesDelivered { step: t });

        for (i, inbox) in inboxes.iter().enumerate() {
            let a = &mut self.agents[i];
            a.obs = a.policy.observe(&out.obs, i, inbox)?;
            self.uplink(i, Some(&actions[i]), ob)?;
        }

        let (o_next, stored) = self.receive_uplinks()?;
        let [a1, a2] = stored.ok_or_else(|| Error::Network("uplink without actions".into()))?;
        let transition = Transition {
            seq: 0,
            o: std::mem::replace(&mut self.critic_obs, o_next.clone()),
            a1,
            a2,
            r: out.reward as f32,
            o_next,
            terminal: out.done && out.event != Event::Timeout,
        };
        self.replay.push(transition)?;
        ob.observe(&TraceEvent::ReplayPush {
            step: t,
            widths: self.replay.widths(),
        });

        if learning && self.replay.len() >= self.cfg.batch_size {
            self.learn(t, eps, ob)?;
        }

        ob.observe(&TraceEvent::Schedule { step: t, eps });
        self.episode_reward += out.reward;
        self.episode_step += 1;
        let mut report = StepReport {
            row: None,
            episode: None,
        };
        if out.done {
            let summary = EpisodeSummary {
                episode: self.episode,
                end_step: self.t,
                length: self.episode_step,
                reward: self.episode_reward,
                success: out.success,
                event: out.event,
            };
            self.window.push(summary.reward, summary.success);
            ob.observe(&TraceEvent::EpisodeEnd {
                step: t,
                episode: self.episode,
                reward: summary.reward,
                success: summary.success,
            });
            self.episodes.push(summary.clone());
            report.episode = Some(summary);
        }
        if out.done || self.t.is_multiple_of(self.cfg.metrics_every) {
            report.row = Some(self.metrics_row(eps, out.done, out.success));
        }
        if out.done {
            self.episode += 1;
            self.needs_reset = true;
        }
        Ok(report)
    }

    /// Critic update, downlink, actor updates and target tracking.
    fn learn(&mut self, t: u64, eps: [f64; 3], ob: &mut dyn Observer) -> Result<()> {
        let widths = self.replay.widths();
        let sample = self
            .replay
            .sample(self.cfg.batch_size, &mut self.replay_rng)?;
        let batch = Minibatch::from_transitions(&sample, widths)?;
        let [s1, s2] = &mut self.agents;
        let y = self.critic.td_targets(
            &batch,
            [&mut s1.policy.actor.target, &mut s2.policy.actor.target],
            self.cfg.gamma,
        )?;
        let loss = self.critic.critic_update(&batch, &y, eps[0])?;
        self.last_critic_loss = loss;
        ob.observe(&TraceEvent::CriticUpdate { step: t, loss });

        for i in 0..2 {
            for (kind, payload) in [
                (Kind::Minibatch, encode_minibatch(&sample)),
                (Kind::CriticParams, encode_params(&self.critic.net)),
            ] {
                let e =
                    self.net
                        .send(Endpoint::Critic, Endpoint::agent(i), kind, payload, self.t)?;
                ob.observe(&TraceEvent::Sent {
                    step: t,
                    envelope: e,
                });
            }
        }

        for i in 0..2 {
            let mut received = None;
            let a = &mut self.agents[i];
            for e in self.net.deliver(Endpoint::agent(i), self.t) {
                match e.kind {
                    Kind::Minibatch => received = Some(decode_minibatch(&e.payload, widths)?),
                    Kind::CriticParams => decode_params_into(&e.payload, &mut a.critic_copy)?,
                    k => {
                        return Err(Error::Network(format!(
                            "unexpected {k:?} at agent {}",
                            i + 1
                        )))
                    }
                }
            }
            let received = received
                .ok_or_else(|| Error::Network(format!("agent {} got no minibatch", i + 1)))?;
            let local = Minibatch::from_transitions(&received, widths)?;
            let inputs = self.layout.agent_inputs(&local.o, i)?;
            let pb = PolicyBatch {
                inputs: &inputs,
                o: &local.o,
                a1: &local.a1,
                a2: &local.a2,
            };
            a.policy
                .actor
                .actor_update(&pb, &mut a.critic_copy, eps[1])?;
            a.policy.actor.soft_update_target(self.cfg.tau)?;
            ob.observe(&TraceEvent::ActorUpdate { step: t, agent: i });
        }

        self.critic.soft_update_target(self.cfg.tau)?;
        ob.observe(&TraceEvent::CriticTargetUpdate { step: t });
        Ok(())
    }

    fn metrics_row(&self, eps: [f64; 3], done: bool, success: bool) -> MetricsRow {
        let (mean, sd) = self.window.reward_stats();
        let ledger = self.net.ledger();
        let link = |s: Endpoint, d: Endpoint| ledger.cumulative((s, d));
        let (a1, a2, c) = (Endpoint::Agent1, Endpoint::Agent2, Endpoint::Critic);
        MetricsRow {
            step: self.t,
            episode: self.episode,
            episode_reward: self.episode_reward,
            reward_ma100: mean,
            reward_std100: sd,
            success: done && success,
            success_ma100: self.window.success_rate(),
            ae1_mse: self.agents[0].last_ae_loss,
            ae2_mse: self.agents[1].last_ae_loss,
            critic_loss: self.last_critic_loss,
            eps,
            bytes_up_cum: ledger.uplink_total(),
            bytes_down_cum: ledger.downlink_total(),
            link_bytes: [
                link(a1, a2),
                link(a2, a1),
                link(a1, c),
                link(a2, c),
                link(c, a1),
                link(c, a2),
            ],
        }
    }
}

/// What a finished run leaves behind besides its files.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub steps: u64,
    pub episodes: Vec<EpisodeSummary>,
    pub final_reward_ma: f64,
    pub final_success_ma: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub final_checkpoint: PathBuf,
}

/// Trains for `cfg.total_steps`, writing `config.json`, `metrics.csv` and
/// checkpoints under `out`. A failing step leaves `diagnostic.ckpt` behind.
pub fn run_training(cfg: &TrainConfig, out: &Path, ob: &mut dyn Observer) -> Result<RunSummary> {
    cfg.validate()?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let cfg_path = out.join("config.json");
    fs::write(&cfg_path, cfg.to_json()).map_err(|e| Error::io(&cfg_path, e))?;
    let csv_path = out.join("metrics.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = MetricsWriter::new(BufWriter::new(file)).map_err(|e| Error::io(&csv_path, e))?;

    let mut trainer = Trainer::new(cfg.clone())?;
    while trainer.steps() < cfg.total_steps {
        let report = match trainer.step(ob) {
            Ok(r) => r,
            Err(e) => {
                let diag = out.join("diagnostic.ckpt");
                if let Ok(c) = trainer.checkpoint() {
                    let _ = c.save(&diag);
                }
                let _ = csv.flush();
                return Err(e);
            }
        };
        if let Some(row) = report.row {
            csv.write(&row).map_err(|e| Error::io(&csv_path, e))?;
        }
        let t = trainer.steps();
        if t % cfg.checkpoint_every == 0 && t < cfg.total_steps {
            trainer
                .checkpoint()?
                .save(&ckpt_dir.join(format!("step_{t:08}.ckpt")))?;
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    let final_checkpoint = ckpt_dir.join("final.ckpt");
    trainer.checkpoint()?.save(&final_checkpoint)?;
    let (mean, _) = trainer.window().reward_stats();
    Ok(RunSummary {
        run_dir: out.to_path_buf(),
        steps: trainer.steps(),
        episodes: trainer.episodes().to_vec(),
        final_reward_ma: mean,
        final_success_ma: trainer.window().success_rate(),
        bytes_up: trainer.ledger().uplink_total(),
        bytes_down: trainer.ledger().downlink_total(),
        final_checkpoint,
    })
}

/// Aggregates over a batch of evaluation or baseline episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
}

impl EvalReport {
    fn from_episodes(rewards: &[f64], successes: usize) -> Self {
        Self {
            episodes: rewards.len(),
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            success_rate: successes as f64 / rewards.len() as f64,
        }
    }
}

/// Greedy rollouts of the checkpointed policies: no exploration, no learning,
/// messages delayed by one step as in training.
pub fn evaluate(
    cfg: &TrainConfig,
    ckpt: &Checkpoint,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut policies = load_policies(cfg, ckpt)?;
    evaluate_policies(cfg, &mut policies, episodes, seed)
}

pub fn evaluate_policies(
    cfg: &TrainConfig,
    policies: &mut [AgentPolicy; 2],
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut env = Env::new(cfg.scene.clone())?;
    let mut rng = substream(seed, stream::EVAL);
    let (mut rewards, mut successes) = (Vec::with_capacity(episodes), 0);
    for _ in 0..episodes {
        let mut obs = env.reset(&mut rng);
        let mut inboxes = [vec![0.0; cfg.message_dim], vec![0.0; cfg.message_dim]];
        let mut total = 0.0;
        loop {
            let mut acts: [ExtendedAction; 2] = Default::default();
            for i in 0..2 {
                let o = policies[i].observe(&obs, i, &inboxes[i])?;
                acts[i] = policies[i].actor.act(&o)?;
            }
            let a_m: Vec<f64> = acts[0].a_m.iter().map(|&v| v as f64).collect();
            let out = env.step(&a_m)?;
            total += out.reward;
            inboxes = [acts[1].a_c.clone(), acts[0].a_c.clone()];
            obs = out.obs;
            if out.done {
                successes += out.success as usize;
                break;
            }
        }
        rewards.push(total);
    }
    Ok(EvalReport::from_episodes(&rewards, successes))
}

/// Uniform random actuator commands; the comparison floor for learning.
pub fn baseline_random(cfg: &TrainConfig, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("baseline needs at least one episode".into()));
    }
    let mut env = Env::new(cfg.scene.clone())?;
    let mut rng = substream(seed, stream::BASELINE);
    let (mut rewards, mut successes) = (Vec::with_capacity(episodes), 0);
    for _ in 0..episodes {
        env.reset(&mut rng);
        let mut total = 0.0;
        loop {
            let a = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let out = env.step(&a)?;
            total += out.reward;
            if out.done {
                successes += out.success as usize;
                break;
            }
        }
        rewards.push(total);
    }
    Ok(EvalReport::from_episodes(&rewards, successes))
}
