//! Binary checkpoint bundles.
//!
//! ```text
//! "DAGF" | version u32 | count u32 | entries… | crc32 u32
//! entry: name_len u32 | name (UTF-8) | dtype u8 (0 = f32) | rank u32 | dims u32×rank | payload f32×numel
//! ```
//!
//! All integers and floats are little-endian; the CRC covers every byte
//! before it. Optimizer and scheduler state live under the `state/` prefix,
//! model metadata under `meta/`.

use std::fs;
use std::path::Path;

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::optim::{AdamState, SchedulerState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DAGF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const STATE_PREFIX: &str = "state/";
pub const META_PREFIX: &str = "meta/";

/// Ordered named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(bad(format!("truncated at byte {} while reading {what}", self.pos)));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| bad(format!("missing entry `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            if !seen.insert(name.as_str()) {
                return Err(bad(format!("duplicate entry `{name}`")));
            }
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(bad(format!("file too short ({} bytes)", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(bad("CRC mismatch"));
        }
        let mut c = Cursor { bytes: body, pos: 0 };
        if c.take(4, "magic")? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = c.u32("version")?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = c.u32("entry count")?;
        let mut ck = Self::new();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..count {
            let len = c.u32("name length")? as usize;
            let name = std::str::from_utf8(c.take(len, "name")?)
                .map_err(|_| bad("entry name is not UTF-8"))?
                .to_owned();
            let dtype = c.take(1, "dtype")?[0];
            if dtype != DTYPE_F32 {
                return Err(bad(format!("`{name}`: unsupported dtype {dtype}")));
            }
            let rank = c.u32("rank")? as usize;
            let dims = (0..rank)
                .map(|_| c.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow"))?;
            let raw = c.take(numel.checked_mul(4).ok_or_else(|| bad("shape overflow"))?, "payload")?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            if !seen.insert(name.clone()) {
                return Err(bad(format!("duplicate entry `{name}`")));
            }
            ck.entries.push((name, Tensor::new(&dims, data)?));
        }
        if c.pos != body.len() {
            return Err(bad(format!("{} trailing bytes", body.len() - c.pos)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn add_params(&mut self, store: &ParamStore<f32>) {
        for p in store.iter() {
            self.push(p.name.clone(), p.value.clone());
        }
    }

    /// Copies every model parameter from the checkpoint; shapes must match.
    pub fn load_params(&self, store: &mut ParamStore<f32>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.get(id).name.clone();
            let t = self.require(&name)?;
            store
                .set(id, t.clone())
                .map_err(|e| bad(format!("`{name}`: {e}")))?;
        }
        Ok(())
    }

    pub fn add_counter(&mut self, name: &str, v: u64) {
        self.push(name, encode_u64(v));
    }

    pub fn counter(&self, name: &str) -> Result<u64> {
        decode_u64(self.require(name)?).ok_or_else(|| bad(format!("`{name}` is not a counter")))
    }

    pub fn add_text(&mut self, name: &str, text: &str) {
        let data: Vec<f32> = text.bytes().map(f32::from).collect();
        self.push(name, Tensor::new(&[data.len()], data).expect("1-D"));
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let t = self.require(name)?;
        let bytes = t
            .data()
            .iter()
            .map(|&v| (v.fract() == 0.0 && (0.0..256.0).contains(&v)).then_some(v as u8))
            .collect::<Option<Vec<u8>>>()
            .ok_or_else(|| bad(format!("`{name}` is not text")))?;
        String::from_utf8(bytes).map_err(|_| bad(format!("`{name}` is not UTF-8")))
    }

    pub fn add_training_state(&mut self, store: &ParamStore<f32>, adam: &AdamState<f32>, sched: &SchedulerState, epoch: u64) {
        self.add_counter("state/epoch", epoch);
        self.add_counter("state/adam/step", adam.step);
        self.add_counter("state/sched/step", sched.step);
        self.add_counter("state/sched/steps_per_epoch", sched.steps_per_epoch);
        for ((p, m), v) in store.iter().zip(&adam.m).zip(&adam.v) {
            self.push(format!("state/adam/m/{}", p.name), m.clone());
            self.push(format!("state/adam/v/{}", p.name), v.clone());
        }
    }

    /// Returns `(adam, scheduler, completed epochs)`.
    pub fn training_state(&self, store: &ParamStore<f32>) -> Result<(AdamState<f32>, SchedulerState, u64)> {
        let mut adam = AdamState::new(store);
        adam.step = self.counter("state/adam/step")?;
        for (i, p) in store.iter().enumerate() {
            for (slot, kind) in [(&mut adam.m[i], "m"), (&mut adam.v[i], "v")] {
                let t = self.require(&format!("state/adam/{kind}/{}", p.name))?;
                if t.shape() != p.value.shape() {
                    return Err(bad(format!("optimizer state for `{}` has the wrong shape", p.name)));
                }
                *slot = t.clone();
            }
        }
        let sched = SchedulerState {
            step: self.counter("state/sched/step")?,
            steps_per_epoch: self.counter("state/sched/steps_per_epoch")?,
        };
        Ok((adam, sched, self.counter("state/epoch")?))
    }
}

/// Four 16-bit limbs, each exactly representable in f32.
fn encode_u64(v: u64) -> Tensor {
    let limbs = (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f32).collect();
    Tensor::new(&[4], limbs).expect("4 limbs")
}

fn decode_u64(t: &Tensor) -> Option<u64> {
    if t.shape() != [4] {
        return None;
    }
    let mut v = 0u64;
    for (i, &l) in t.data().iter().enumerate() {
        if l.fract() != 0.0 || !(0.0..65536.0).contains(&l) {
            return None;
        }
        v |= (l as u64) << (16 * i);
    }
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push("a.weight", Tensor::from_fn(&[2, 3], |i| i as f32 * 0.5 - 1.0));
        c.push("b", Tensor::scalar(7.0));
        c.add_counter("state/step", u64::MAX - 5);
        c.add_text("meta/config", "{\"x\": 1}");
        c
    }

    #[test]
    fn byte_layout_header() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"DAGF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
        assert_eq!(&bytes[16..24], b"a.weight");
        assert_eq!(bytes[24], 0);
    }

    #[test]
    fn round_trip_and_helpers() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.counter("state/step").unwrap(), u64::MAX - 5);
        assert_eq!(back.text("meta/config").unwrap(), "{\"x\": 1}");
        assert_eq!(back.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[20] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = Checkpoint::new();
        c.push("x", Tensor::scalar(1.0));
        c.push("x", Tensor::scalar(2.0));
        assert!(c.to_bytes().is_err());
    }
}
