//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `WDFFUCKP`, `u32` version, config text
//! (`u32` length + UTF-8), `u64` epoch, `u64` step, `f64` best validation Dice,
//! `u32` parameter count, then per parameter a `u32`-prefixed name, `u32` rank,
//! `u64` extents and `f64` values. A trailing `u8` flag announces optimizer
//! state: `u64` step followed by first and second moments in parameter order.

use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::network::{build_model, Model};
use crate::optim::AdamW;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"WDFFUCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor<f64>>,
    pub v: Vec<Tensor<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: u64,
    pub step: u64,
    pub best_val_dice: f64,
    pub params: Vec<(String, Tensor<f64>)>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        config: &TrainConfig,
        model: &Model<T>,
        optimizer: Option<&AdamW<T>>,
        epoch: u64,
        best_val_dice: f64,
    ) -> Self {
        let params = model
            .store
            .iter()
            .map(|p| (p.name.clone(), p.value.cast()))
            .collect();
        let optimizer = optimizer.map(|o| OptimizerState {
            step: o.step,
            m: o.m.iter().map(Tensor::cast).collect(),
            v: o.v.iter().map(Tensor::cast).collect(),
        });
        Self {
            config: config.clone(),
            epoch,
            step: optimizer.as_ref().map_or(0, |o| o.step),
            best_val_dice,
            params,
            optimizer,
        }
    }

    /// Rebuilds the network from the stored configuration and loads weights.
    pub fn model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut model = build_model::<T>(&self.config.model)?;
        let values = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t.cast()))
            .collect();
        model.store.load_values(values)?;
        Ok(model)
    }

    pub fn optimizer<T: Scalar>(&self) -> Option<AdamW<T>> {
        self.optimizer.as_ref().map(|o| AdamW {
            config: self.config.adamw(),
            step: o.step,
            m: o.m.iter().map(Tensor::cast).collect(),
            v: o.v.iter().map(Tensor::cast).collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        put_str(&mut w, &self.config.to_text());
        put_u64(&mut w, self.epoch);
        put_u64(&mut w, self.step);
        w.extend_from_slice(&self.best_val_dice.to_le_bytes());
        put_u32(&mut w, self.params.len() as u32);
        for (name, t) in &self.params {
            put_str(&mut w, name);
            put_tensor(&mut w, t);
        }
        match &self.optimizer {
            None => w.push(0),
            Some(o) => {
                w.push(1);
                put_u64(&mut w, o.step);
                for t in o.m.iter().chain(&o.v) {
                    put_tensor(&mut w, t);
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let config = TrainConfig::from_text(&r.string()?)?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let best_val_dice = r.f64()?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            params.push((name, r.tensor()?));
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let m = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                let v = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                Some(OptimizerState { step, m, v })
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            epoch,
            step,
            best_val_dice,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

fn put_tensor(w: &mut Vec<u8>, t: &Tensor<f64>) {
    put_u32(w, t.ndim() as u32);
    for &d in t.shape() {
        put_u64(w, d as u64);
    }
    for v in t.data() {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("string is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor<f64>> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = n
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("tensor extents {shape:?} overflow")))?;
        let data = self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(&shape, data).map_err(|e| Error::Format(e.to_string()))
    }
}
