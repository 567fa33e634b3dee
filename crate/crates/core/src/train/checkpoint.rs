//! Little-endian binary checkpoints.
//!
//! ```text
//! "MPRVITCK" | u32 version | u32 n | n × tensor       parameters
//!                           | u32 n | n × tensor       optimizer moments
//!                           | u32 n | n × (u16 len, key, u32 len, value)   metadata
//! tensor = u16 name len | name | u8 rank | rank × u64 extent | f32 payload
//! ```
//!
//! Parameters are stored once per unique tensor under its owner name; shared
//! aliases are rebuilt from the model configuration in the metadata.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian as LE};

use super::{OptimizerState, TrainState};
use crate::error::{Error, Result};
use crate::model::{Generator, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MPRVITCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    /// `m.<name>` and `v.<name>` per parameter.
    pub optimizer: Vec<(String, Tensor<f32>)>,
    pub metadata: Vec<(String, String)>,
}

fn join_losses(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn split_losses(key: &str, s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            x.parse::<f64>()
                .map_err(|_| Error::format(0, format!("metadata {key}: bad number {x:?}")))
        })
        .collect()
}

impl Checkpoint {
    /// Snapshot of `state`; `extra` metadata is appended after the built-in keys.
    pub fn from_state(state: &TrainState, extra: &[(&str, String)]) -> Self {
        let params = state.model.params();
        let tensors = params
            .unique()
            .map(|(_, name, t)| (name.to_string(), t.clone()))
            .collect();
        let mut optimizer = Vec::with_capacity(2 * params.num_unique());
        for (k, buffers) in [("m", &state.opt.m), ("v", &state.opt.v)] {
            for ((_, name, _), t) in params.unique().zip(buffers) {
                optimizer.push((format!("{k}.{name}"), t.clone()));
            }
        }
        let mut metadata: Vec<(String, String)> = state
            .model
            .config()
            .entries()
            .into_iter()
            .map(|(k, v)| (format!("model.{k}"), v))
            .collect();
        metadata.push(("epoch".into(), state.epoch.to_string()));
        metadata.push(("optimizer_step".into(), state.opt.step.to_string()));
        metadata.push(("train_history".into(), join_losses(&state.train_history)));
        metadata.push(("val_history".into(), join_losses(&state.val_history)));
        if let Some(v) = state.val_history.last() {
            metadata.push(("val_loss".into(), format!("{v:?}")));
        }
        metadata.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        Self {
            tensors,
            optimizer,
            metadata,
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::format(0, format!("metadata key {key} is missing")))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::full();
        for (k, v) in &self.metadata {
            if let Some(key) = k.strip_prefix("model.") {
                if !cfg.set(key, v)? {
                    return Err(Error::format(
                        0,
                        format!("unknown model key {key} in metadata"),
                    ));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rebuilds the generator with the stored weights.
    pub fn model(&self) -> Result<Generator<f32>> {
        let cfg = self.model_config()?;
        let mut model = Generator::new(&cfg, 0)?;
        let params = model.params_mut();
        let expected: Vec<(crate::model::ParamId, String)> = params
            .unique()
            .map(|(id, n, _)| (id, n.to_string()))
            .collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::format(
                12,
                format!(
                    "{} parameter tensors stored, model has {}",
                    self.tensors.len(),
                    expected.len()
                ),
            ));
        }
        for (id, name) in expected {
            let t = self
                .tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::format(12, format!("parameter {name} is missing")))?;
            params.set(id, t.clone())?;
        }
        Ok(model)
    }

    /// Model, optimizer and loss histories, ready to continue training.
    pub fn to_state(&self) -> Result<TrainState> {
        let model = self.model()?;
        let find = |key: String| -> Result<Tensor<f32>> {
            self.optimizer
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::format(0, format!("optimizer tensor {key} is missing")))
        };
        let names: Vec<String> = model
            .params()
            .unique()
            .map(|(_, n, _)| n.to_string())
            .collect();
        let opt = OptimizerState {
            m: names
                .iter()
                .map(|n| find(format!("m.{n}")))
                .collect::<Result<_>>()?,
            v: names
                .iter()
                .map(|n| find(format!("v.{n}")))
                .collect::<Result<_>>()?,
            step: self
                .require("optimizer_step")?
                .parse()
                .map_err(|_| Error::format(0, "metadata optimizer_step is not an integer"))?,
        };
        opt.check(model.params())?;
        let epoch = self
            .require("epoch")?
            .parse()
            .map_err(|_| Error::format(0, "metadata epoch is not an integer"))?;
        Ok(TrainState {
            model,
            opt,
            epoch,
            train_history: split_losses("train_history", self.require("train_history")?)?,
            val_history: split_losses("val_history", self.require("val_history")?)?,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        for group in [&self.tensors, &self.optimizer] {
            put_u32(&mut out, group.len() as u32);
            for (name, t) in group.iter() {
                put_str16(&mut out, name)?;
                if t.rank() > u8::MAX as usize {
                    return Err(Error::Contract(format!(
                        "tensor {name} has rank {}",
                        t.rank()
                    )));
                }
                out.push(t.rank() as u8);
                for &e in t.shape() {
                    let mut b = [0u8; 8];
                    LE::write_u64(&mut b, e as u64);
                    out.extend_from_slice(&b);
                }
                let start = out.len();
                out.resize(start + 4 * t.numel(), 0);
                LE::write_f32_into(t.data(), &mut out[start..]);
            }
        }
        put_u32(&mut out, self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            put_str16(&mut out, k)?;
            put_u32(&mut out, v.len() as u32);
            out.extend_from_slice(v.as_bytes());
        }
        Ok(out)
    }

    /// Fails closed: any defect returns an error and no partial checkpoint.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic; not a checkpoint"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                8,
                format!("version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let tensors = r.tensors()?;
        let optimizer = r.tensors()?;
        let n = r.u32("metadata count")?;
        let mut metadata = Vec::with_capacity(n.min(1024) as usize);
        for _ in 0..n {
            let k = r.str16("metadata key")?;
            let at = r.pos;
            let len = r.u32("metadata value length")? as usize;
            let v = r.take(len, "metadata value")?;
            let v = String::from_utf8(v.to_vec())
                .map_err(|_| Error::format(at as u64, "metadata value is not UTF-8"))?;
            metadata.push((k, v));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                r.pos as u64,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Self {
            tensors,
            optimizer,
            metadata,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    let mut b = [0u8; 4];
    LE::write_u32(&mut b, v);
    out.extend_from_slice(&b);
}

fn put_str16(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let n = u16::try_from(s.len())
        .map_err(|_| Error::Contract(format!("name {s:.32}… is too long")))?;
    let mut b = [0u8; 2];
    LE::write_u16(&mut b, n);
    out.extend_from_slice(&b);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LE::read_u32(self.take(4, what)?))
    }

    fn str16(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = LE::read_u16(self.take(2, what)?) as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::format(at as u64, format!("{what} is not UTF-8")))
    }

    fn tensors(&mut self) -> Result<Vec<(String, Tensor<f32>)>> {
        let n = self.u32("tensor count")?;
        let mut out = Vec::with_capacity(n.min(4096) as usize);
        for _ in 0..n {
            let name = self.str16("tensor name")?;
            let rank = self.take(1, "tensor rank")?[0] as usize;
            let at = self.pos;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(LE::read_u64(self.take(8, "tensor extent")?));
            }
            let numel = shape
                .iter()
                .try_fold(1u64, |a, &e| a.checked_mul(e))
                .and_then(|n| n.checked_mul(4))
                .and_then(|b| usize::try_from(b).ok())
                .ok_or_else(|| {
                    Error::format(
                        at as u64,
                        format!("tensor {name} extents {shape:?} overflow"),
                    )
                })?;
            let payload = self.take(numel, "tensor payload")?;
            let mut data = vec![0f32; numel / 4];
            LE::read_f32_into(payload, &mut data);
            let shape: Vec<usize> = shape.into_iter().map(|e| e as usize).collect();
            out.push((name, Tensor::new(&shape, data)?));
        }
        Ok(out)
    }
}

pub fn checkpoint_save(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    // Write-then-rename so an interrupted save never leaves a torn file behind.
    let tmp = path.with_extension("ckpt.partial");
    fs::write(&tmp, ck.encode()?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            tensors: vec![("a".into(), Tensor::new(&[2, 1], vec![1.5, -0.0]).unwrap())],
            optimizer: vec![(
                "m.a".into(),
                Tensor::new(&[2, 1], vec![f32::MIN_POSITIVE, 3.0]).unwrap(),
            )],
            metadata: vec![("epoch".into(), "3".into())],
        }
    }

    #[test]
    fn layout_is_fixed() {
        let b = sample().encode().unwrap();
        assert_eq!(&b[..8], b"MPRVITCK");
        assert_eq!(LE::read_u32(&b[8..]), 1);
        assert_eq!(LE::read_u32(&b[12..]), 1);
        assert_eq!(LE::read_u16(&b[16..]), 1);
        assert_eq!(b[18], b'a');
        assert_eq!(b[19], 2);
        assert_eq!(LE::read_u64(&b[20..]), 2);
        assert_eq!(LE::read_f32(&b[36..]), 1.5);
        assert_eq!(Checkpoint::decode(&b).unwrap(), sample());
    }

    #[test]
    fn defects_name_offsets() {
        let good = sample().encode().unwrap();
        let mut b = good.clone();
        b[3] ^= 1;
        assert!(matches!(
            Checkpoint::decode(&b),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut b = good.clone();
        b[8] = 2;
        assert!(matches!(
            Checkpoint::decode(&b),
            Err(Error::Format { offset: 8, .. })
        ));
        for cut in [5, 13, 30, good.len() - 1] {
            assert!(
                matches!(Checkpoint::decode(&good[..cut]), Err(Error::Format { .. })),
                "cut {cut}"
            );
        }
        let mut b = good.clone();
        b.push(0);
        assert!(matches!(Checkpoint::decode(&b), Err(Error::Format { .. })));
    }
}
