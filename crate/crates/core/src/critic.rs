//! Centralized action-value critic trained on TD targets from target networks.

use rand::Rng;

use crate::actor::{AbstractObservation, AgentSpec, ExtendedAction};
use crate::autodiff::{soft_update, Mode, Network, NetworkBuilder, Tape, Tensor};
use crate::commnet::{Payload, PayloadReader};
use crate::error::{Error, Result};
use crate::replay::{Transition, TransitionWidths};

/// Where each agent's parts sit in the flat joint observation
/// `(vec1, vec2, f1, f2, m1, m2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObsLayout {
    pub agents: [AgentSpec; 2],
}

impl ObsLayout {
    pub fn new(agent1: AgentSpec, agent2: AgentSpec) -> Self {
        Self {
            agents: [agent1, agent2],
        }
    }

    pub fn width(&self) -> usize {
        self.agents.iter().map(AgentSpec::input_width).sum()
    }

    pub fn transition_widths(&self) -> TransitionWidths {
        TransitionWidths {
            obs: self.width(),
            a1: self.agents[0].action_width(),
            a2: self.agents[1].action_width(),
        }
    }

    /// `(start, len)` of agent `i`'s vec, feature and inbox blocks.
    fn ranges(&self, i: usize) -> [(usize, usize); 3] {
        let [s1, s2] = self.agents;
        let vec0 = if i == 0 { 0 } else { s1.vec_obs };
        let f0 = s1.vec_obs + s2.vec_obs + if i == 0 { 0 } else { s1.feature };
        let m0 =
            s1.vec_obs + s2.vec_obs + s1.feature + s2.feature + if i == 0 { 0 } else { s1.inbox };
        let s = self.agents[i];
        [(vec0, s.vec_obs), (f0, s.feature), (m0, s.inbox)]
    }

    fn check_row(&self, row: &[f32]) -> Result<()> {
        if row.len() != self.width() {
            return Err(Error::shape(
                "joint observation",
                &[self.width()],
                &[row.len()],
            ));
        }
        Ok(())
    }

    /// Agent `i`'s actor input `(vec, feature, inbox)` from one joint row.
    pub fn agent_input(&self, row: &[f32], i: usize) -> Result<Vec<f32>> {
        self.check_row(row)?;
        Ok(self
            .ranges(i)
            .iter()
            .flat_map(|&(s, n)| row[s..s + n].iter().copied())
            .collect())
    }

    /// Row-wise `agent_input` over a `[M, width]` tensor.
    pub fn agent_inputs(&self, o: &Tensor<f32>, i: usize) -> Result<Tensor<f32>> {
        if o.shape().len() != 2 {
            return Err(Error::shape(
                "joint observation batch",
                &[0, self.width()],
                o.shape(),
            ));
        }
        let m = o.shape()[0];
        let mut out = Vec::with_capacity(m * self.agents[i].input_width());
        for row in o.values().chunks(o.shape()[1]) {
            out.extend(self.agent_input(row, i)?);
        }
        Tensor::new(vec![m, self.agents[i].input_width()], out)
    }

    pub fn split(&self, row: &[f32]) -> Result<ConcatObservation> {
        self.check_row(row)?;
        let part = |i: usize| {
            let [v, f, m] = self.ranges(i).map(|(s, n)| row[s..s + n].to_vec());
            AbstractObservation {
                vec_obs: v,
                feature: f,
                inbox: m,
            }
        };
        Ok(ConcatObservation {
            o1: part(0),
            o2: part(1),
        })
    }
}

/// Both agents' abstract observations, the critic's observation input.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConcatObservation {
    pub o1: AbstractObservation,
    pub o2: AbstractObservation,
}

impl ConcatObservation {
    pub fn flatten(&self, layout: &ObsLayout) -> Result<Vec<f32>> {
        self.o1.check(&layout.agents[0])?;
        self.o2.check(&layout.agents[1])?;
        let mut v = Vec::with_capacity(layout.width());
        for part in [
            &self.o1.vec_obs,
            &self.o2.vec_obs,
            &self.o1.feature,
            &self.o2.feature,
            &self.o1.inbox,
            &self.o2.inbox,
        ] {
            v.extend_from_slice(part);
        }
        Ok(v)
    }
}

/// Sampled transitions stacked into row-major batch tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub ids: Vec<u64>,
    pub o: Tensor<f32>,
    pub a1: Tensor<f32>,
    pub a2: Tensor<f32>,
    pub r: Vec<f32>,
    pub o_next: Tensor<f32>,
    pub terminal: Vec<bool>,
}

impl Minibatch {
    pub fn from_transitions(batch: &[Transition], widths: TransitionWidths) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::InsufficientData {
                available: 0,
                requested: 1,
            });
        }
        for t in batch {
            widths.check(t)?;
        }
        let m = batch.len();
        let stack = |w: usize, f: &dyn Fn(&Transition) -> &[f32]| {
            Tensor::new(
                vec![m, w],
                batch.iter().flat_map(|t| f(t).iter().copied()).collect(),
            )
        };
        Ok(Self {
            ids: batch.iter().map(|t| t.seq).collect(),
            o: stack(widths.obs, &|t| &t.o)?,
            a1: stack(widths.a1, &|t| &t.a1)?,
            a2: stack(widths.a2, &|t| &t.a2)?,
            r: batch.iter().map(|t| t.r).collect(),
            o_next: stack(widths.obs, &|t| &t.o_next)?,
            terminal: batch.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

pub fn critic_builder(name: &str, layout: &ObsLayout, hidden: usize) -> NetworkBuilder {
    let w = layout.transition_widths();
    NetworkBuilder::concat(name, &[w.obs, w.a1, w.a2])
        .dense(hidden)
        .relu()
        .dense(hidden)
        .relu()
        .dense(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub net: Network<f32>,
    pub target: Network<f32>,
    layout: ObsLayout,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(layout: ObsLayout, hidden: usize, rng: &mut R) -> Result<Self> {
        let net = critic_builder("critic", &layout, hidden).build(rng)?;
        let mut target: Network<f32> =
            critic_builder("critic_target", &layout, hidden).build(rng)?;
        soft_update(&mut target, &net, 1.0)?;
        Self::from_networks(net, target, layout)
    }

    /// Wraps caller-built networks; they must read `(o, a1, a2)` at the
    /// layout's widths and emit one value per row.
    pub fn from_networks(
        net: Network<f32>,
        target: Network<f32>,
        layout: ObsLayout,
    ) -> Result<Self> {
        let w = layout.transition_widths();
        let want = vec![vec![w.obs], vec![w.a1], vec![w.a2]];
        for n in [&net, &target] {
            if n.input_shapes() != want.as_slice() || n.output_shape() != [1] {
                return Err(Error::shape(
                    n.name(),
                    &[w.obs, w.a1, w.a2, 1],
                    &[
                        n.input_shapes()
                            .iter()
                            .map(|s| s.iter().product::<usize>())
                            .sum(),
                        n.output_shape().iter().product(),
                    ],
                ));
            }
        }
        Ok(Self {
            net,
            target,
            layout,
        })
    }

    pub fn layout(&self) -> &ObsLayout {
        &self.layout
    }

    pub fn q_value(
        &mut self,
        o: &ConcatObservation,
        a1: &ExtendedAction,
        a2: &ExtendedAction,
    ) -> Result<f32> {
        let w = self.layout.transition_widths();
        let row = |v: Vec<f32>, n: usize| Tensor::new(vec![1, n], v);
        let (a1, a2) = (a1.to_vec(), a2.to_vec());
        if a1.len() != w.a1 || a2.len() != w.a2 {
            return Err(Error::shape(
                "critic actions",
                &[w.a1, w.a2],
                &[a1.len(), a2.len()],
            ));
        }
        let o = row(o.flatten(&self.layout)?, w.obs)?;
        let q = self.net.predict(&[&o, &row(a1, w.a1)?, &row(a2, w.a2)?])?;
        Ok(q.values()[0])
    }

    pub fn q_batch(
        net: &mut Network<f32>,
        o: &Tensor<f32>,
        a1: &Tensor<f32>,
        a2: &Tensor<f32>,
    ) -> Result<Vec<f32>> {
        Ok(net.predict(&[o, a1, a2])?.into_values())
    }

    /// `y = r + gamma * (1 - terminal) * Q_target(o', mu1_target(o'1), mu2_target(o'2))`.
    pub fn td_targets(
        &mut self,
        batch: &Minibatch,
        actor_targets: [&mut Network<f32>; 2],
        gamma: f64,
    ) -> Result<Vec<f32>> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("discount {gamma} outside [0, 1)")));
        }
        let [mu1, mu2] = actor_targets;
        let a1 = mu1.predict(&[&self.layout.agent_inputs(&batch.o_next, 0)?])?;
        let a2 = mu2.predict(&[&self.layout.agent_inputs(&batch.o_next, 1)?])?;
        let q = Self::q_batch(&mut self.target, &batch.o_next, &a1, &a2)?;
        let gamma = gamma as f32;
        Ok(batch
            .r
            .iter()
            .zip(&batch.terminal)
            .zip(&q)
            .map(|((&r, &term), &q)| if term { r } else { r + gamma * q })
            .collect())
    }

    /// Mean squared TD error of the online network against fixed targets.
    pub fn loss(&mut self, batch: &Minibatch, y: &[f32]) -> Result<f64> {
        let q = Self::q_batch(&mut self.net, &batch.o, &batch.a1, &batch.a2)?;
        if y.len() != q.len() {
            return Err(Error::shape("td targets", &[q.len()], &[y.len()]));
        }
        let sum: f64 = q
            .iter()
            .zip(y)
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum();
        Ok(sum / q.len() as f64)
    }

    /// One SGD step on the TD loss; returns the loss after the step.
    pub fn critic_update(&mut self, batch: &Minibatch, y: &[f32], epsilon1: f64) -> Result<f64> {
        if y.len() != batch.len() {
            return Err(Error::shape("td targets", &[batch.len()], &[y.len()]));
        }
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape);
        let inputs = [
            tape.input(&batch.o),
            tape.input(&batch.a1),
            tape.input(&batch.a2),
        ];
        let q = self.net.forward(&mut tape, &bound, &inputs, Mode::Train)?;
        let loss = tape.mse(q, y)?;
        if !tape.value(loss)[0].is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        let grads = tape.backward(loss)?;
        self.net.absorb_grads(&bound, &grads);
        self.net.sgd_step(epsilon1 as f32)?;
        let after = self.loss(batch, y)?;
        if !after.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        Ok(after)
    }

    pub fn soft_update_target(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.target, &self.net, tau as f32)
    }
}

/// Per transition: id, o, a1, a2, r, o_next, terminal flag.
pub fn encode_minibatch(batch: &[Transition]) -> Payload {
    let mut p = Payload::new();
    for t in batch {
        p.id(t.seq)
            .floats(&t.o)
            .floats(&t.a1)
            .floats(&t.a2)
            .floats(&[t.r])
            .floats(&t.o_next)
            .flag(t.terminal);
    }
    p
}

pub fn minibatch_bytes(m: usize, widths: TransitionWidths) -> usize {
    m * (8 + 4 * (2 * widths.obs + widths.a1 + widths.a2 + 1) + 1)
}

pub fn decode_minibatch(bytes: &[u8], widths: TransitionWidths) -> Result<Vec<Transition>> {
    let per = minibatch_bytes(1, widths);
    if !bytes.len().is_multiple_of(per) {
        return Err(Error::Network(format!(
            "minibatch payload of {} bytes is not a multiple of {per}",
            bytes.len()
        )));
    }
    let mut r = PayloadReader::new(bytes);
    let mut out = Vec::with_capacity(bytes.len() / per);
    for _ in 0..bytes.len() / per {
        out.push(Transition {
            seq: r.id()?,
            o: r.floats(widths.obs)?,
            a1: r.floats(widths.a1)?,
            a2: r.floats(widths.a2)?,
            r: r.floats(1)?[0],
            o_next: r.floats(widths.obs)?,
            terminal: r.flag()?,
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn encode_params(net: &Network<f32>) -> Payload {
    let mut p = Payload::new();
    p.floats(&net.flat_values());
    p
}

/// Overwrites `net`'s values with a received parameter payload.
pub fn decode_params_into(bytes: &[u8], net: &mut Network<f32>) -> Result<()> {
    let mut r = PayloadReader::new(bytes);
    let values = r.floats(net.value_count())?;
    r.finish()?;
    net.load_flat(&values)
}
