//! Versioned binary checkpoints of model parameters and optimizer state.
//!
//! Layout (little-endian): magic `DPXC`, u32 version, u64 step, u32 length
//! plus UTF-8 config echo, u32 parameter count, then per parameter: u32 name
//! length, name bytes, u32 rank, u32 dims, values; then first moments and
//! second moments in parameter order. Values are f64 so a resumed run
//! matches an uninterrupted one bit for bit.

use std::fs;
use std::path::Path;

use duplex_tensor::{Adam, Tensor};

use crate::training::Trainer;
use crate::{CoreError, Result};

const MAGIC: &[u8; 4] = b"DPXC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    /// Resolved config text of the run that wrote it.
    pub config: String,
    pub params: Vec<(String, Tensor)>,
    pub first_moments: Vec<Tensor>,
    pub second_moments: Vec<Tensor>,
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer, config: &str) -> Self {
        Self {
            step: trainer.step(),
            config: config.to_string(),
            params: trainer
                .model
                .params
                .iter()
                .map(|(_, name, t)| (name.to_string(), t.clone()))
                .collect(),
            first_moments: trainer.optimizer.first_moments().to_vec(),
            second_moments: trainer.optimizer.second_moments().to_vec(),
        }
    }

    /// Copies parameters and optimizer state into `trainer`, whose model must
    /// have the same parameter names and shapes.
    pub fn restore(&self, trainer: &mut Trainer) -> Result<()> {
        let store = &mut trainer.model.params;
        if store.len() != self.params.len() {
            return Err(CoreError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store
                .id(name)
                .ok_or_else(|| CoreError::Checkpoint(format!("model has no parameter {name}")))?;
            if store.get(id).shape() != value.shape() {
                return Err(CoreError::Checkpoint(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    value.shape(),
                    store.get(id).shape()
                )));
            }
        }
        for (name, value) in &self.params {
            let id = store.id(name).expect("checked above");
            *store.get_mut(id) = value.clone();
        }
        // Moments follow the checkpoint's parameter order; reorder to the store's.
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for (_, name, _) in store.iter() {
            let k = self.params.iter().position(|(n, _)| n == name).expect("checked above");
            m.push(self.first_moments[k].clone());
            v.push(self.second_moments[k].clone());
        }
        trainer.optimizer = Adam::from_state(trainer.config.adam.clone(), self.step, m, v);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        put_bytes(&mut b, self.config.as_bytes());
        b.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            put_bytes(&mut b, name.as_bytes());
            put_tensor(&mut b, t);
        }
        for t in self.first_moments.iter().chain(&self.second_moments) {
            put_tensor(&mut b, t);
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CoreError::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let step = r.u64()?;
        let config = r.string()?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            params.push((name, r.tensor()?));
        }
        let mut moments = Vec::with_capacity(2 * n);
        for i in 0..2 * n {
            let t = r.tensor()?;
            if t.shape() != params[i % n].1.shape() {
                return Err(CoreError::Checkpoint(format!("moment shape mismatch for {}", params[i % n].0)));
            }
            moments.push(t);
        }
        if r.pos != bytes.len() {
            return Err(CoreError::Checkpoint("trailing bytes".into()));
        }
        let second_moments = moments.split_off(n);
        Ok(Self {
            step,
            config,
            params,
            first_moments: moments,
            second_moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_bytes(b: &mut Vec<u8>, s: &[u8]) {
    b.extend_from_slice(&(s.len() as u32).to_le_bytes());
    b.extend_from_slice(s);
}

fn put_tensor(b: &mut Vec<u8>, t: &Tensor) {
    b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        b.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        b.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CoreError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CoreError::Checkpoint("invalid UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(CoreError::Checkpoint(format!("implausible tensor rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.bytes.len()))
            .ok_or_else(|| CoreError::Checkpoint("tensor larger than file".into()))?;
        let data = self
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| CoreError::Checkpoint(e.to_string()))
    }
}
