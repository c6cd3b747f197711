//! Binary parameter file: a `COMMGRAD-CKPT v1` header line followed by
//! records of (u32 name length, UTF-8 name, u32 rank, u32 dims, f32 values),
//! all little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::network::Network;
use super::tensor::Real;
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "COMMGRAD-CKPT v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        if self.get(&record.name).is_some() {
            return Err(Error::Checkpoint(format!(
                "duplicate record {}",
                record.name
            )));
        }
        if record.shape.iter().product::<usize>() != record.values.len() {
            return Err(Error::Checkpoint(format!(
                "record {} has inconsistent shape",
                record.name
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn push_network<T: Real>(&mut self, net: &Network<T>) -> Result<()> {
        for p in net.params() {
            self.push(Record {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                values: p.tensor.values().iter().map(|v| v.to_f32_lossy()).collect(),
            })?;
        }
        Ok(())
    }

    /// Loads every parameter of `net` by name; shapes must match exactly.
    pub fn restore_network<T: Real>(&self, net: &mut Network<T>) -> Result<()> {
        for p in net.params_mut() {
            let r = self
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing record {}", p.name)))?;
            if r.shape != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "record {} has shape {:?}, network expects {:?}",
                    p.name,
                    r.shape,
                    p.tensor.shape()
                )));
            }
            for (dst, &src) in p.tensor.values_mut().iter_mut().zip(&r.values) {
                *dst = T::of(src as f64);
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_HEADER.as_bytes())?;
        w.write_all(b"\n")?;
        for r in &self.records {
            w.write_all(&(r.name.len() as u32).to_le_bytes())?;
            w.write_all(r.name.as_bytes())?;
            w.write_all(&(r.shape.len() as u32).to_le_bytes())?;
            for &d in &r.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in &r.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let header = format!("{CHECKPOINT_HEADER}\n");
        if !cur.starts_with(header.as_bytes()) {
            return Err(Error::Checkpoint("missing COMMGRAD-CKPT v1 header".into()));
        }
        cur = &cur[header.len()..];
        let mut ckpt = Checkpoint::new();
        while !cur.is_empty() {
            let name_len = take_u32(&mut cur)? as usize;
            let name_bytes = take(&mut cur, name_len)?;
            let name = String::from_utf8(name_bytes.to_vec())
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let rank = take_u32(&mut cur)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(take_u32(&mut cur)? as usize);
            }
            let count: usize = shape.iter().product();
            let raw = take(&mut cur, count * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ckpt.push(Record {
                name,
                shape,
                values,
            })?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&mut f).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&buf)
    }
}

fn take<'a>(cur: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if cur.len() < n {
        return Err(Error::Checkpoint("truncated record".into()));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

fn take_u32(cur: &mut &[u8]) -> Result<u32> {
    let b = take(cur, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}
