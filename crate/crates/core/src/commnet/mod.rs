//! Simulated links between the two agents and the central critic.
//!
//! Agent-to-agent messages arrive one step after they are sent; traffic to or
//! from the critic arrives within the same step. Every payload byte is booked
//! per directed link and per step.

pub mod wire;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use wire::{Payload, PayloadReader};

/// Fixed per-envelope framing, booked separately from payload bytes.
pub const HEADER_BYTES: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Agent1,
    Agent2,
    Critic,
}

impl Endpoint {
    pub fn agent(index: usize) -> Endpoint {
        match index {
            0 => Endpoint::Agent1,
            1 => Endpoint::Agent2,
            _ => panic!("no agent {index}"),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Endpoint::Agent1 => "agent1",
            Endpoint::Agent2 => "agent2",
            Endpoint::Critic => "critic",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Message,
    AbstractObs,
    Minibatch,
    CriticParams,
}

impl Kind {
    pub fn delay(self) -> u64 {
        match self {
            Kind::Message => 1,
            Kind::AbstractObs | Kind::Minibatch | Kind::CriticParams => 0,
        }
    }
}

pub type Link = (Endpoint, Endpoint);

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub kind: Kind,
    pub payload: Vec<u8>,
    /// Widths of the float arrays inside the payload, in order.
    pub fields: Vec<usize>,
    pub size: usize,
    pub send_step: u64,
    pub deliver_step: u64,
}

/// Cumulative and per-step payload bytes for every directed link.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkLedger {
    cumulative: BTreeMap<Link, u64>,
    history: BTreeMap<Link, BTreeMap<u64, u64>>,
    header_bytes: u64,
    envelopes: u64,
}

impl LinkLedger {
    fn book(&mut self, link: Link, step: u64, bytes: u64) {
        *self.cumulative.entry(link).or_default() += bytes;
        *self
            .history
            .entry(link)
            .or_default()
            .entry(step)
            .or_default() += bytes;
        self.header_bytes += HEADER_BYTES;
        self.envelopes += 1;
    }

    pub fn cumulative(&self, link: Link) -> u64 {
        self.cumulative.get(&link).copied().unwrap_or(0)
    }

    pub fn links(&self) -> impl Iterator<Item = (Link, u64)> + '_ {
        self.cumulative.iter().map(|(l, b)| (*l, *b))
    }

    pub fn step_bytes(&self, link: Link, step: u64) -> u64 {
        self.history
            .get(&link)
            .and_then(|h| h.get(&step))
            .copied()
            .unwrap_or(0)
    }

    pub fn history(&self, link: Link) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.history
            .get(&link)
            .into_iter()
            .flatten()
            .map(|(s, b)| (*s, *b))
    }

    /// Payload bytes per link over steps `t0..=t1`.
    pub fn bytes_report(&self, t0: u64, t1: u64) -> BTreeMap<Link, u64> {
        assert!(t0 <= t1, "empty report range");
        self.history
            .iter()
            .map(|(l, h)| (*l, h.range(t0..=t1).map(|(_, b)| *b).sum()))
            .collect()
    }

    /// Framing bytes of all envelopes so far.
    pub fn header_bytes(&self) -> u64 {
        self.header_bytes
    }

    pub fn envelopes(&self) -> u64 {
        self.envelopes
    }

    /// Total into or out of the critic.
    pub fn uplink_total(&self) -> u64 {
        self.links()
            .filter(|((_, d), _)| *d == Endpoint::Critic)
            .map(|(_, b)| b)
            .sum()
    }

    pub fn downlink_total(&self) -> u64 {
        self.links()
            .filter(|((s, _), _)| *s == Endpoint::Critic)
            .map(|(_, b)| b)
            .sum()
    }
}

#[derive(Clone, Debug, Default)]
pub struct CommNet {
    queue: Vec<Envelope>,
    now: u64,
    ledger: LinkLedger,
    /// Optional hard cap on payload bytes per link per step.
    cap: Option<u64>,
    sent: u64,
    delivered: u64,
}

impl CommNet {
    pub fn new(cap: Option<u64>) -> Self {
        Self {
            cap,
            ..Self::default()
        }
    }

    pub fn ledger(&self) -> &LinkLedger {
        &self.ledger
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    /// Queues a payload at step `t` and books its bytes. Returns the envelope.
    pub fn send(
        &mut self,
        src: Endpoint,
        dst: Endpoint,
        kind: Kind,
        payload: Payload,
        t: u64,
    ) -> Result<&Envelope> {
        if t < self.now {
            return Err(Error::Network(format!(
                "{src}->{dst} send at step {t} is before the current step {}",
                self.now
            )));
        }
        if src == dst {
            return Err(Error::Network(format!("{src} cannot send to itself")));
        }
        let (payload, fields) = payload.into_parts();
        let size = payload.len();
        if let Some(cap) = self.cap {
            let used = self.ledger.step_bytes((src, dst), t);
            if used + size as u64 > cap {
                return Err(Error::Network(format!(
                    "{src}->{dst} would carry {} bytes at step {t}, cap is {cap}",
                    used + size as u64
                )));
            }
        }
        self.now = t;
        self.ledger.book((src, dst), t, size as u64);
        self.sent += 1;
        self.queue.push(Envelope {
            src,
            dst,
            kind,
            payload,
            fields,
            size,
            send_step: t,
            deliver_step: t + kind.delay(),
        });
        Ok(self.queue.last().expect("just pushed"))
    }

    /// Removes and returns, in send order, every envelope for `endpoint` due at `t`.
    pub fn deliver(&mut self, endpoint: Endpoint, t: u64) -> Vec<Envelope> {
        self.now = self.now.max(t);
        let mut out = Vec::new();
        let mut keep = Vec::with_capacity(self.queue.len());
        for e in self.queue.drain(..) {
            if e.dst == endpoint && e.deliver_step == t {
                out.push(e);
            } else {
                keep.push(e);
            }
        }
        self.queue = keep;
        self.delivered += out.len() as u64;
        out
    }
}
