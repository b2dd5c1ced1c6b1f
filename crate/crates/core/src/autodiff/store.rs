use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VHE1";

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Arc<Tensor>,
    m: Tensor,
    v: Tensor,
}

/// Named trainable tensors with Adam moment accumulators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(1e-4)
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.slots.insert(
            name.into(),
            Slot {
                value: Arc::new(value),
                m,
                v,
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.slot(name).map(|s| &*s.value)
    }

    pub(crate) fn shared(&self, name: &str) -> Result<Arc<Tensor>> {
        self.slot(name).map(|s| Arc::clone(&s.value))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| Arc::make_mut(&mut s.value))
            .ok_or_else(|| Error::UnknownParameter(name.to_owned()))
    }

    fn slot(&self, name: &str) -> Result<&Slot> {
        self.slots
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_values(&self) -> usize {
        self.slots.values().map(|s| s.value.numel()).sum()
    }

    /// One bias-corrected Adam update. Parameters absent from `grads` are left untouched.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, opt: &Adam) -> Result<()> {
        for (name, g) in grads {
            let slot = self
                .slots
                .get(name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if slot.value.shape() != g.shape() {
                return Err(Error::shape("adam_step", &[slot.value.shape(), g.shape()]));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for (name, g) in grads {
            let slot = self.slots.get_mut(name).expect("validated above");
            let value = Arc::make_mut(&mut slot.value);
            let iter = value
                .data_mut()
                .iter_mut()
                .zip(slot.m.data_mut())
                .zip(slot.v.data_mut())
                .zip(g.data());
            for (((p, m), v), &gv) in iter {
                *m = opt.beta1 * *m + (1.0 - opt.beta1) * gv;
                *v = opt.beta2 * *v + (1.0 - opt.beta2) * gv * gv;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
            }
        }
        Ok(())
    }

    /// Serialize values, optimizer moments and the step counter.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.slots.len() as u32).to_le_bytes())?;
        for (name, slot) in &self.slots {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let shape = slot.value.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for t in [&*slot.value, &slot.m, &slot.v] {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let ck = |e: std::io::Error| Error::Checkpoint(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(ck)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad header {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                "VHE1"
            )));
        }
        let step = read_u64(&mut r).map_err(ck)?;
        let count = read_u32(&mut r).map_err(ck)?;
        let mut slots = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r).map_err(ck)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(ck)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
            let rank = read_u32(&mut r).map_err(ck)? as usize;
            let shape = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(ck)?;
            let numel: usize = shape.iter().product();
            let mut read_tensor = || -> Result<Tensor> {
                let data = (0..numel)
                    .map(|_| read_f64(&mut r))
                    .collect::<std::io::Result<Vec<_>>>()
                    .map_err(ck)?;
                Tensor::new(shape.clone(), data)
            };
            let value = read_tensor()?;
            let m = read_tensor()?;
            let v = read_tensor()?;
            slots.insert(
                name,
                Slot {
                    value: Arc::new(value),
                    m,
                    v,
                },
            );
        }
        Ok(ParameterStore { slots, step })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        ParameterStore::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
