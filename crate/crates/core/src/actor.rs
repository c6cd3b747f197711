//! Decentralized deterministic policies over local abstract observations.

use rand::Rng;

use crate::autodiff::{soft_update, Mode, Network, NetworkBuilder, OuNoise, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Widths of one agent's observation parts and action heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentSpec {
    pub vec_obs: usize,
    pub feature: usize,
    /// Inbox width, equal to the peer's message width.
    pub inbox: usize,
    pub a_m: usize,
    pub a_c: usize,
}

impl AgentSpec {
    pub fn input_width(&self) -> usize {
        self.vec_obs + self.feature + self.inbox
    }

    pub fn action_width(&self) -> usize {
        self.a_m + self.a_c
    }
}

/// One agent's view: sensor vector, own image feature, last received message.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AbstractObservation {
    pub vec_obs: Vec<f32>,
    pub feature: Vec<f32>,
    pub inbox: Vec<f32>,
}

impl AbstractObservation {
    pub fn check(&self, spec: &AgentSpec) -> Result<()> {
        let got = [self.vec_obs.len(), self.feature.len(), self.inbox.len()];
        let want = [spec.vec_obs, spec.feature, spec.inbox];
        if got != want {
            return Err(Error::shape(
                "abstract observation (vec, feature, inbox)",
                &want,
                &got,
            ));
        }
        Ok(())
    }

    /// `(vec_obs, feature, inbox)` laid end to end.
    pub fn flatten(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.vec_obs.len() + self.feature.len() + self.inbox.len());
        v.extend_from_slice(&self.vec_obs);
        v.extend_from_slice(&self.feature);
        v.extend_from_slice(&self.inbox);
        v
    }
}

/// Actuator command and outgoing message.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExtendedAction {
    pub a_m: Vec<f32>,
    pub a_c: Vec<f32>,
}

impl ExtendedAction {
    pub fn split(values: &[f32], a_m: usize) -> Self {
        Self {
            a_m: values[..a_m].to_vec(),
            a_c: values[a_m..].to_vec(),
        }
    }

    /// `[a_m | a_c]`
    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = self.a_m.clone();
        v.extend_from_slice(&self.a_c);
        v
    }
}

pub fn actor_builder(name: &str, spec: &AgentSpec, hidden: usize) -> NetworkBuilder {
    NetworkBuilder::new(name, &[spec.input_width()])
        .dense(hidden)
        .relu()
        .dense(hidden)
        .relu()
        .dense(spec.action_width())
        .tanh()
}

/// Adds exploration noise to the actuator command and clips to `[-1, 1]`.
pub fn explore(a_m: &[f32], noise: &[f64]) -> Vec<f32> {
    a_m.iter()
        .zip(noise)
        .map(|(&a, &n)| (a as f64 + n).clamp(-1.0, 1.0) as f32)
        .collect()
}

/// Something that scores a batch of joint actions; the policy gradient is
/// taken through it with its own parameters held fixed.
pub trait ActionValue {
    /// Mean of `Q(o, a1, a2)` over the batch rows, recorded on `tape`.
    fn mean_q(&mut self, tape: &mut Tape<f32>, o: Var, a1: Var, a2: Var) -> Result<Var>;
}

impl ActionValue for Network<f32> {
    fn mean_q(&mut self, tape: &mut Tape<f32>, o: Var, a1: Var, a2: Var) -> Result<Var> {
        let bound = self.bind_frozen(tape);
        let q = self.forward(tape, &bound, &[o, a1, a2], Mode::Eval)?;
        Ok(tape.mean(q))
    }
}

/// Inputs for one policy-gradient step, as rows of a sampled minibatch.
pub struct PolicyBatch<'a> {
    /// This agent's `(vec_obs, feature, inbox)` rows.
    pub inputs: &'a Tensor<f32>,
    /// Concatenated observation rows for the critic.
    pub o: &'a Tensor<f32>,
    /// Stored actions of agent 1 and agent 2.
    pub a1: &'a Tensor<f32>,
    pub a2: &'a Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub net: Network<f32>,
    pub target: Network<f32>,
    spec: AgentSpec,
    /// 0 for agent 1, 1 for agent 2: which critic action slot this actor fills.
    slot: usize,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        slot: usize,
        spec: AgentSpec,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let net = actor_builder(&format!("{prefix}.actor"), &spec, hidden).build(rng)?;
        let mut target: Network<f32> =
            actor_builder(&format!("{prefix}.actor_target"), &spec, hidden).build(rng)?;
        soft_update(&mut target, &net, 1.0)?;
        Self::from_networks(net, target, spec, slot)
    }

    pub fn from_networks(
        net: Network<f32>,
        target: Network<f32>,
        spec: AgentSpec,
        slot: usize,
    ) -> Result<Self> {
        if slot > 1 {
            return Err(Error::Config(format!("actor slot {slot} is not 0 or 1")));
        }
        for n in [&net, &target] {
            if n.input_shapes() != [vec![spec.input_width()]]
                || n.output_shape() != [spec.action_width()]
            {
                return Err(Error::shape(
                    n.name(),
                    &[spec.input_width(), spec.action_width()],
                    &[
                        n.input_shapes()[0].iter().product(),
                        n.output_shape().iter().product(),
                    ],
                ));
            }
        }
        Ok(Self {
            net,
            target,
            spec,
            slot,
        })
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    fn run(
        net: &mut Network<f32>,
        spec: &AgentSpec,
        obs: &AbstractObservation,
    ) -> Result<ExtendedAction> {
        obs.check(spec)?;
        let x = Tensor::new(vec![1, spec.input_width()], obs.flatten())?;
        let y = net.predict(&[&x])?;
        Ok(ExtendedAction::split(y.values(), spec.a_m))
    }

    /// Deterministic action from the online policy.
    pub fn act(&mut self, obs: &AbstractObservation) -> Result<ExtendedAction> {
        Self::run(&mut self.net, &self.spec, obs)
    }

    pub fn target_act(&mut self, obs: &AbstractObservation) -> Result<ExtendedAction> {
        Self::run(&mut self.target, &self.spec, obs)
    }

    /// Acts and perturbs only the actuator head.
    pub fn act_exploring<R: Rng + ?Sized>(
        &mut self,
        obs: &AbstractObservation,
        noise: &mut OuNoise,
        rng: &mut R,
    ) -> Result<(ExtendedAction, ExtendedAction)> {
        let clean = self.act(obs)?;
        let n = noise.sample(rng);
        let executed = ExtendedAction {
            a_m: explore(&clean.a_m, &n),
            a_c: clean.a_c.clone(),
        };
        Ok((clean, executed))
    }

    /// One step of sampled policy-gradient ascent on the mean critic value.
    /// The other agent's stored action stays fixed. Returns the pre-step mean Q.
    pub fn actor_update<C: ActionValue>(
        &mut self,
        batch: &PolicyBatch<'_>,
        critic: &mut C,
        epsilon2: f64,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.input(batch.inputs);
        let bound = self.net.bind(&mut tape);
        let a = self.net.forward(&mut tape, &bound, &[x], Mode::Train)?;
        let o = tape.input(batch.o);
        let (a1, a2) = if self.slot == 0 {
            (a, tape.input(batch.a2))
        } else {
            (tape.input(batch.a1), a)
        };
        let q = critic.mean_q(&mut tape, o, a1, a2)?;
        let mean_q = tape.value(q)[0] as f64;
        if !mean_q.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} critic value",
                self.net.name()
            )));
        }
        let loss = tape.scale(q, -1.0);
        let grads = tape.backward(loss)?;
        self.net.absorb_grads(&bound, &grads);
        self.net.sgd_step(epsilon2 as f32)?;
        Ok(mean_q)
    }

    pub fn soft_update_target(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.target, &self.net, tau as f32)
    }
}
