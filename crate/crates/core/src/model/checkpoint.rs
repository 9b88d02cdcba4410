//! Binary checkpoint container.
//!
//! ```text
//! magic "PANNCKPT" | version u32 | entry count u32
//! per entry:
//!   name (u32 len + utf8) | spec json (u32 len + utf8) | sha256(spec json) [32]
//!   layer table: count u32, then per layer
//!     weight offset u64 | weight len u64 | bias offset u64 | bias len u64 | ndim u32 | dims u64…
//!   m u64 | weights f64×m | mask f64×m | bias count u64 | biases f64×…
//! ```
//! All integers and floats are little-endian.

use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;
use thiserror::Error;

use super::params::{Mask, Parameters};
use super::spec::{NetworkSpec, TrainableLayer};

pub const MAGIC: &[u8; 8] = b"PANNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("entry `{name}`: spec digest mismatch")]
    DigestMismatch { name: String },
    #[error("entry `{name}`: {reason}")]
    Layout { name: String, reason: String },
    #[error("no entry named `{0}`")]
    MissingEntry(String),
}

/// One network stored in a container.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub params: Parameters,
    pub mask: Mask,
}

/// An ordered set of named networks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

pub fn spec_digest(spec: &NetworkSpec) -> [u8; 32] {
    Sha256::digest(spec.canonical().as_bytes()).into()
}

impl Checkpoint {
    pub fn single(name: &str, params: Parameters, mask: Mask) -> Self {
        Self { entries: vec![Entry { name: name.to_string(), params, mask }] }
    }

    pub fn push(&mut self, name: &str, params: Parameters, mask: Mask) {
        self.entries.push(Entry { name: name.to_string(), params, mask });
    }

    pub fn get(&self, name: &str) -> Result<&Entry, CheckpointError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            write_str(&mut out, &e.name);
            let spec = e.params.spec().canonical();
            write_str(&mut out, &spec);
            out.extend_from_slice(&Sha256::digest(spec.as_bytes()));
            let layout = e.params.layout();
            out.extend_from_slice(&(layout.len() as u32).to_le_bytes());
            for l in layout {
                for v in [l.weights.start, l.weights.len(), l.biases.start, l.biases.len()] {
                    out.extend_from_slice(&(v as u64).to_le_bytes());
                }
                out.extend_from_slice(&(l.weight_shape.len() as u32).to_le_bytes());
                for &d in &l.weight_shape {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
            }
            out.extend_from_slice(&(e.params.weights.len() as u64).to_le_bytes());
            write_f64s(&mut out, &e.params.weights);
            write_f64s(&mut out, &e.mask.to_f64());
            out.extend_from_slice(&(e.params.biases.len() as u64).to_le_bytes());
            write_f64s(&mut out, &e.params.biases);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = r.string()?;
            let spec_text = r.string()?;
            let digest = r.take(32)?;
            if Sha256::digest(spec_text.as_bytes()).as_slice() != digest {
                return Err(CheckpointError::DigestMismatch { name });
            }
            let layout_err = |reason: String| CheckpointError::Layout { name: name.clone(), reason };
            let spec: NetworkSpec =
                serde_json::from_str(&spec_text).map_err(|e| layout_err(format!("spec: {e}")))?;
            let expected = spec.layout().map_err(|e| layout_err(e.to_string()))?;
            let n_layers = r.u32()? as usize;
            let mut table = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let (ws, wl, bs, bl) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
                let ndim = r.u32()? as usize;
                let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
                table.push((ws as usize..(ws + wl) as usize, bs as usize..(bs + bl) as usize, dims));
            }
            if !table_matches(&table, &expected) {
                return Err(layout_err("layer table disagrees with spec".into()));
            }
            let m = r.u64()? as usize;
            let weights = r.f64s(m)?;
            let mask_values = r.f64s(m)?;
            let nb = r.u64()? as usize;
            let biases = r.f64s(nb)?;
            let params = Parameters::from_parts(&spec, weights, biases).map_err(|e| layout_err(e.to_string()))?;
            let mask = Mask::from_f64(&params, &mask_values).map_err(|e| layout_err(e.to_string()))?;
            entries.push(Entry { name, params, mask });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

type TableRow = (std::ops::Range<usize>, std::ops::Range<usize>, Vec<usize>);

fn table_matches(table: &[TableRow], expected: &[TrainableLayer]) -> bool {
    table.len() == expected.len()
        && table
            .iter()
            .zip(expected)
            .all(|((w, b, dims), l)| *w == l.weights && *b == l.biases && *dims == l.weight_shape)
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated(self.pos)),
        }
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Truncated(at))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(self.pos))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::Activation;

    fn sample() -> Checkpoint {
        let spec = NetworkSpec::mlp(&[3], &[4], 2, Activation::Relu);
        let p = Parameters::init(&spec, 9).unwrap();
        let keep = (0..p.weight_count()).map(|i| i % 3 != 0).collect();
        let mask = Mask::from_keep(&p, keep).unwrap();
        let mut ck = Checkpoint::single("model", p, mask);
        let lenet = Parameters::init(&NetworkSpec::lenet5(), 1).unwrap();
        let ones = Mask::ones(&lenet);
        ck.push("other", lenet, ones);
        ck
    }

    #[test]
    fn round_trips_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn detects_corruption() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        // Flip one byte inside the spec text of the first entry.
        let mut bad = bytes;
        let at = 8 + 4 + 4 + 4 + "model".len() + 4 + 2;
        bad[at] ^= 0x01;
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn missing_entry_named() {
        let err = sample().get("actor").unwrap_err();
        assert!(err.to_string().contains("actor"));
    }
}
