//! Little-endian payload framing: 4 bytes per float, 1 byte per flag,
//! 8 bytes per identifier.

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Payload {
    bytes: Vec<u8>,
    fields: Vec<usize>,
}

impl Payload {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn floats(&mut self, v: &[f32]) -> &mut Self {
        self.bytes.reserve(v.len() * 4);
        for x in v {
            self.bytes.extend_from_slice(&x.to_le_bytes());
        }
        self.fields.push(v.len());
        self
    }

    pub fn flag(&mut self, b: bool) -> &mut Self {
        self.bytes.push(b as u8);
        self
    }

    pub fn id(&mut self, id: u64) -> &mut Self {
        self.bytes.extend_from_slice(&id.to_le_bytes());
        self
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn fields(&self) -> &[usize] {
        &self.fields
    }

    pub fn into_parts(self) -> (Vec<u8>, Vec<usize>) {
        (self.bytes, self.fields)
    }
}

pub struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Network(format!(
                "payload truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn floats_into(&mut self, out: &mut [f32]) -> Result<()> {
        let raw = self.take(out.len() * 4)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *o = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        Ok(())
    }

    pub fn flag(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Network(format!("invalid flag byte {b}"))),
        }
    }

    pub fn id(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Network(format!(
                "{} trailing payload bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_sizes_and_round_trip() {
        let mut p = Payload::new();
        p.id(42)
            .floats(&[1.5, -0.0, f32::MAX])
            .flag(true)
            .floats(&[]);
        assert_eq!(p.len(), 8 + 12 + 1);
        assert_eq!(p.fields(), &[3, 0]);
        let (bytes, _) = p.into_parts();
        let mut r = PayloadReader::new(&bytes);
        assert_eq!(r.id().unwrap(), 42);
        let f = r.floats(3).unwrap();
        assert_eq!(f[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(f[2], f32::MAX);
        assert!(r.flag().unwrap());
        r.finish().unwrap();
    }

    #[test]
    fn truncation_and_trailing_bytes_are_errors() {
        let mut p = Payload::new();
        p.floats(&[1.0]);
        let (bytes, _) = p.into_parts();
        assert!(PayloadReader::new(&bytes).floats(2).is_err());
        let r = PayloadReader::new(&bytes);
        assert!(r.finish().is_err());
    }
}
