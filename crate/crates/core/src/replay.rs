//! Central store of compressed transitions.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Checkpoint, Record};
use crate::error::{Error, Result};

/// Named float fields plus one-byte flags; used for storage and link accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub floats: Vec<(String, usize)>,
    pub flags: Vec<String>,
}

impl Schema {
    pub fn new(floats: &[(&str, usize)], flags: &[&str]) -> Self {
        Self {
            floats: floats.iter().map(|(n, w)| (n.to_string(), *w)).collect(),
            flags: flags.iter().map(|f| f.to_string()).collect(),
        }
    }

    /// One raw image of the given shape per record.
    pub fn raw_image(shape: [usize; 3]) -> Self {
        Self::new(&[("image", shape.iter().product())], &[])
    }

    pub fn bytes_per_record(&self) -> u64 {
        self.floats.iter().map(|(_, w)| *w as u64 * 4).sum::<u64>() + self.flags.len() as u64
    }

    pub fn width(&self, name: &str) -> Option<usize> {
        self.floats.iter().find(|(n, _)| n == name).map(|(_, w)| *w)
    }
}

/// Exact storage for `count` records: 4 bytes per float, 1 byte per flag.
pub fn memory_bytes(count: u64, schema: &Schema) -> u64 {
    count * schema.bytes_per_record()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Position in insertion order, assigned by the buffer.
    pub seq: u64,
    pub o: Vec<f32>,
    pub a1: Vec<f32>,
    pub a2: Vec<f32>,
    pub r: f32,
    pub o_next: Vec<f32>,
    pub terminal: bool,
}

/// Field widths of a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransitionWidths {
    pub obs: usize,
    pub a1: usize,
    pub a2: usize,
}

impl TransitionWidths {
    pub fn schema(&self) -> Schema {
        Schema::new(
            &[
                ("o", self.obs),
                ("a1", self.a1),
                ("a2", self.a2),
                ("r", 1),
                ("o_next", self.obs),
            ],
            &["terminal"],
        )
    }

    pub fn check(&self, t: &Transition) -> Result<()> {
        let got = [t.o.len(), t.a1.len(), t.a2.len(), t.o_next.len()];
        let want = [self.obs, self.a1, self.a2, self.obs];
        if got != want {
            return Err(Error::Schema(format!(
                "transition widths (o, a1, a2, o_next) = {got:?}, buffer expects {want:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    widths: TransitionWidths,
    items: VecDeque<Transition>,
    next_seq: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, widths: TransitionWidths) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            widths,
            items: VecDeque::new(),
            next_seq: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn widths(&self) -> TransitionWidths {
        self.widths
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Appends (evicting the oldest when full) and returns the assigned sequence id.
    pub fn push(&mut self, mut t: Transition) -> Result<u64> {
        self.widths.check(&t)?;
        t.seq = self.next_seq;
        self.next_seq += 1;
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(self.next_seq - 1)
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < m || self.items.is_empty() {
            return Err(Error::InsufficientData {
                available: self.items.len(),
                requested: m,
            });
        }
        Ok((0..m)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect())
    }

    /// `m` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(m, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    /// Writes the buffer as checkpoint-format records `o`, `a1`, `a2`, `r`,
    /// `o_next`, `terminal` (0/1) and `seq`, each shaped `[count, width]`.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let n = self.items.len();
        let mut c = Checkpoint::new();
        let mut field =
            |name: &str, width: usize, get: &dyn Fn(&Transition) -> Vec<f32>| -> Result<()> {
                let values: Vec<f32> = self.items.iter().flat_map(get).collect();
                c.push(Record {
                    name: name.into(),
                    shape: vec![n, width],
                    values,
                })
            };
        let w = self.widths;
        field("o", w.obs, &|t| t.o.clone())?;
        field("a1", w.a1, &|t| t.a1.clone())?;
        field("a2", w.a2, &|t| t.a2.clone())?;
        field("r", 1, &|t| vec![t.r])?;
        field("o_next", w.obs, &|t| t.o_next.clone())?;
        field("terminal", 1, &|t| vec![if t.terminal { 1.0 } else { 0.0 }])?;
        field("seq", 1, &|t| vec![t.seq as f32])?;
        c.save(path)
    }
}
