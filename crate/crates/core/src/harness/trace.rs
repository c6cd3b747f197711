//! Per-step event stream emitted by the trainer, and audits that replay it.

use crate::actor::ExtendedAction;
use crate::commnet::{Envelope, Kind};
use crate::replay::{Schema, TransitionWidths};

#[derive(Debug)]
pub enum TraceEvent<'a> {
    /// Episode start; the following obs-only uplinks belong to it.
    Reset {
        step: u64,
        episode: u64,
    },
    Act {
        step: u64,
        episode_step: u64,
        agent: usize,
        inbox: &'a [f32],
        action: &'a ExtendedAction,
    },
    Sent {
        step: u64,
        envelope: &'a Envelope,
    },
    EnvStep {
        step: u64,
        reward: f64,
        done: bool,
    },
    AeUpdate {
        step: u64,
        agent: usize,
        loss: Option<f64>,
    },
    MessagesDelivered {
        step: u64,
    },
    ReplayPush {
        step: u64,
        widths: TransitionWidths,
    },
    CriticUpdate {
        step: u64,
        loss: f64,
    },
    ActorUpdate {
        step: u64,
        agent: usize,
    },
    CriticTargetUpdate {
        step: u64,
    },
    Schedule {
        step: u64,
        eps: [f64; 3],
    },
    EpisodeEnd {
        step: u64,
        episode: u64,
        reward: f64,
        success: bool,
    },
}

pub trait Observer {
    fn observe(&mut self, event: &TraceEvent<'_>);
}

impl Observer for () {
    fn observe(&mut self, _: &TraceEvent<'_>) {}
}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn observe(&mut self, event: &TraceEvent<'_>) {
        (**self).observe(event);
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn observe(&mut self, event: &TraceEvent<'_>) {
        self.0.observe(event);
        self.1.observe(event);
    }
}

/// Rank of an event within one environment step; ranks never decrease
/// between a step's first action and its end.
fn rank(event: &TraceEvent<'_>) -> u8 {
    match event {
        TraceEvent::Reset { .. } => 0,
        TraceEvent::Act { .. } => 1,
        TraceEvent::Sent { envelope, .. } => match envelope.kind {
            Kind::Message => 2,
            Kind::AbstractObs => 6,
            Kind::Minibatch | Kind::CriticParams => 9,
        },
        TraceEvent::EnvStep { .. } => 3,
        TraceEvent::AeUpdate { .. } => 4,
        TraceEvent::MessagesDelivered { .. } => 5,
        TraceEvent::ReplayPush { .. } => 7,
        TraceEvent::CriticUpdate { .. } => 8,
        TraceEvent::ActorUpdate { .. } => 10,
        TraceEvent::CriticTargetUpdate { .. } => 11,
        TraceEvent::Schedule { .. } => 12,
        TraceEvent::EpisodeEnd { .. } => 13,
    }
}

/// Counts violations of the per-step update order and of the
/// one-update-per-step rule.
#[derive(Debug, Default)]
pub struct OrderAudit {
    last: Option<u8>,
    in_reset: bool,
    counts: [u32; 3],
    learning_steps: u64,
    pub steps: u64,
    pub violations: Vec<String>,
}

impl OrderAudit {
    fn close_step(&mut self, step: u64) {
        // AE, critic and actor counts must be all zero (warmup) or 2/1/2.
        let c = self.counts;
        if c != [0, 0, 0] {
            self.learning_steps += 1;
            if c != [2, 1, 2] {
                self.violations.push(format!(
                    "step {step}: update counts (ae, critic, actor) = {c:?}"
                ));
            }
        }
        self.counts = [0; 3];
    }

    pub fn learning_steps(&self) -> u64 {
        self.learning_steps
    }
}

impl Observer for OrderAudit {
    fn observe(&mut self, event: &TraceEvent<'_>) {
        if let TraceEvent::Reset { .. } = event {
            self.in_reset = true;
            return;
        }
        if self.in_reset {
            match event {
                TraceEvent::Sent { envelope, .. } if envelope.kind == Kind::AbstractObs => return,
                TraceEvent::Act { .. } => self.in_reset = false,
                _ => {
                    self.violations
                        .push(format!("{event:?} inside episode reset"));
                    return;
                }
            }
        }
        // Agent 1's decision opens every step.
        if let TraceEvent::Act { agent: 0, .. } = event {
            self.last = None;
        }
        match event {
            TraceEvent::AeUpdate { .. } => self.counts[0] += 1,
            TraceEvent::CriticUpdate { .. } => self.counts[1] += 1,
            TraceEvent::ActorUpdate { .. } => self.counts[2] += 1,
            _ => {}
        }
        let r = rank(event);
        if self.last.is_some_and(|last| r < last) {
            self.violations.push(format!(
                "out of order: {event:?} after rank {}",
                self.last.unwrap()
            ));
        }
        self.last = Some(r);
        if let TraceEvent::Schedule { step, .. } = event {
            self.steps += 1;
            self.close_step(*step);
        }
    }
}

/// Every inbox read at an agent's decision equals the peer's message from
/// the previous step of the same episode, and zeros on the first step.
#[derive(Debug, Default)]
pub struct DelayAudit {
    last_message: [Option<Vec<f32>>; 2],
    pending: [Option<Vec<f32>>; 2],
    pub checked: u64,
    pub violations: Vec<String>,
}

impl Observer for DelayAudit {
    fn observe(&mut self, event: &TraceEvent<'_>) {
        match event {
            TraceEvent::Reset { .. } => {
                self.last_message = [None, None];
                self.pending = [None, None];
            }
            TraceEvent::Act {
                step,
                episode_step,
                agent,
                inbox,
                action,
            } => {
                let peer = 1 - agent;
                let expected = match &self.last_message[peer] {
                    Some(m) if *episode_step > 0 => m.clone(),
                    _ => vec![0.0; inbox.len()],
                };
                self.checked += 1;
                if inbox.len() != expected.len()
                    || inbox
                        .iter()
                        .zip(&expected)
                        .any(|(a, b)| a.to_bits() != b.to_bits())
                {
                    self.violations.push(format!(
                        "step {step}: agent {} inbox {inbox:?}, peer sent {expected:?}",
                        agent + 1
                    ));
                }
                self.pending[*agent] = Some(action.a_c.clone());
            }
            TraceEvent::EnvStep { .. } => {
                for i in 0..2 {
                    if let Some(m) = self.pending[i].take() {
                        self.last_message[i] = Some(m);
                    }
                }
            }
            _ => {}
        }
    }
}

/// Step sizes are ordered `eps1 >= eps2 >= eps3` and none ever increases.
#[derive(Debug, Default)]
pub struct ScheduleAudit {
    last: Option<[f64; 3]>,
    pub checked: u64,
    pub violations: Vec<String>,
}

impl Observer for ScheduleAudit {
    fn observe(&mut self, event: &TraceEvent<'_>) {
        if let TraceEvent::Schedule { step, eps } = event {
            self.checked += 1;
            if !(eps[0] >= eps[1] && eps[1] >= eps[2]) {
                self.violations
                    .push(format!("step {step}: unordered {eps:?}"));
            }
            if let Some(prev) = self.last {
                if (0..3).any(|k| eps[k] > prev[k]) {
                    self.violations
                        .push(format!("step {step}: {eps:?} increased from {prev:?}"));
                }
            }
            self.last = Some(*eps);
        }
    }
}

/// No envelope field and no replay field has the length of a raw image.
#[derive(Debug)]
pub struct RawImageAudit {
    raw_widths: Vec<usize>,
    pub envelopes: u64,
    pub records: u64,
    pub violations: Vec<String>,
}

impl RawImageAudit {
    pub fn new(image_shapes: &[[usize; 3]]) -> Self {
        Self {
            raw_widths: image_shapes.iter().map(|s| s.iter().product()).collect(),
            envelopes: 0,
            records: 0,
            violations: Vec::new(),
        }
    }

    fn is_raw(&self, width: usize) -> bool {
        self.raw_widths.contains(&width)
    }

    /// Observation-carrying fields must also be narrower than any image.
    fn too_wide(&self, width: usize) -> bool {
        self.raw_widths.iter().any(|&w| width >= w)
    }
}

impl Observer for RawImageAudit {
    fn observe(&mut self, event: &TraceEvent<'_>) {
        match event {
            TraceEvent::Sent { step, envelope } => {
                self.envelopes += 1;
                let observational = envelope.kind != Kind::CriticParams;
                for &w in &envelope.fields {
                    if self.is_raw(w) || (observational && self.too_wide(w)) {
                        self.violations.push(format!(
                            "step {step}: {:?} {}->{} carries a field of width {w}",
                            envelope.kind, envelope.src, envelope.dst
                        ));
                    }
                }
            }
            TraceEvent::ReplayPush { step, widths } => {
                self.records += 1;
                for (name, w) in widths.schema().floats {
                    if self.is_raw(w) || self.too_wide(w) {
                        self.violations
                            .push(format!("step {step}: replay field {name} has width {w}"));
                    }
                }
            }
            _ => {}
        }
    }
}

/// Every envelope's float fields follow a declared schema for its kind. An
/// episode-start uplink carries only the observation part; a minibatch
/// repeats its schema once per row.
#[derive(Debug)]
pub struct SchemaAudit {
    declared: Vec<(Kind, Vec<usize>)>,
    pub checked: u64,
    pub violations: Vec<String>,
}

impl SchemaAudit {
    pub fn new(declared: &[(Kind, Schema)]) -> Self {
        Self {
            declared: declared
                .iter()
                .map(|(k, s)| (*k, s.floats.iter().map(|(_, w)| *w).collect()))
                .collect(),
            checked: 0,
            violations: Vec::new(),
        }
    }

    fn conforms(&self, kind: Kind, fields: &[usize]) -> bool {
        self.declared
            .iter()
            .filter(|(k, _)| *k == kind)
            .any(|(_, w)| match kind {
                Kind::Minibatch => {
                    !fields.is_empty()
                        && fields.len().is_multiple_of(w.len())
                        && fields.chunks(w.len()).all(|c| c == w.as_slice())
                }
                Kind::AbstractObs => fields == w.as_slice() || fields == &w[..3],
                _ => fields == w.as_slice(),
            })
    }
}

impl Observer for SchemaAudit {
    fn observe(&mut self, event: &TraceEvent<'_>) {
        if let TraceEvent::Sent { step, envelope } = event {
            self.checked += 1;
            if !self.conforms(envelope.kind, &envelope.fields) {
                self.violations.push(format!(
                    "step {step}: {:?} {}->{} fields {:?} match no declared schema",
                    envelope.kind, envelope.src, envelope.dst, envelope.fields
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_audit_matches_prefixes_and_repeats() {
        let a = SchemaAudit::new(&[
            (
                Kind::AbstractObs,
                Schema::new(&[("v", 3), ("f", 4), ("i", 2), ("m", 2), ("c", 2)], &[]),
            ),
            (Kind::Minibatch, Schema::new(&[("o", 5), ("r", 1)], &[])),
        ]);
        assert!(a.conforms(Kind::AbstractObs, &[3, 4, 2, 2, 2]));
        assert!(a.conforms(Kind::AbstractObs, &[3, 4, 2]));
        assert!(!a.conforms(Kind::AbstractObs, &[3, 4]));
        assert!(a.conforms(Kind::Minibatch, &[5, 1, 5, 1]));
        assert!(!a.conforms(Kind::Minibatch, &[5, 1, 5]));
        assert!(!a.conforms(Kind::Message, &[2]));
    }
}
