//! Binary checkpoints.
//!
//! Layout (all integers little-endian): `b"VSSA"`, `u32` version, `u32` tensor
//! count, then per tensor `u16` name length, UTF-8 name, `u8` rank, `u32`
//! dims, and `f32` data. Besides the model parameters a checkpoint may carry
//! `momentum/<name>` buffers, `meta/iteration` (two `f32` holding the low 24
//! and high bits) and `meta/config` (the resolved config text, one byte per
//! element).

use std::fs;
use std::path::Path;

use vssa_autodiff::{Real, Tensor};

use crate::nn::ParamStore;
use crate::{Detector, Error, Result};

pub const MAGIC: &[u8; 4] = b"VSSA";
pub const VERSION: u32 = 1;
const MOMENTUM: &str = "momentum/";
const ITERATION: &str = "meta/iteration";
const CONFIG: &str = "meta/config";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Parameters of `detector`, plus optional momentum buffers, iteration and config text.
    pub fn capture<T: Real>(
        detector: &Detector<T>,
        momentum: Option<&[Tensor<T>]>,
        iteration: u64,
        config_text: &str,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> =
            detector.params.iter().map(|p| (p.name.clone(), p.value.cast())).collect();
        if let Some(m) = momentum {
            for (p, v) in detector.params.iter().zip(m) {
                tensors.push((format!("{MOMENTUM}{}", p.name), v.cast()));
            }
        }
        let it = Tensor::new([2], vec![(iteration & 0xFF_FFFF) as f32, (iteration >> 24) as f32]).unwrap();
        tensors.push((ITERATION.into(), it));
        if !config_text.is_empty() {
            let bytes: Vec<f32> = config_text.bytes().map(f32::from).collect();
            tensors.push((CONFIG.into(), Tensor::new([bytes.len()], bytes).unwrap()));
        }
        Checkpoint { tensors }
    }

    fn is_meta(name: &str) -> bool {
        name.starts_with(MOMENTUM) || name.starts_with("meta/")
    }

    /// Model parameter tensors only.
    pub fn params(&self) -> Vec<(String, Tensor<f32>)> {
        self.tensors.iter().filter(|(n, _)| !Self::is_meta(n)).cloned().collect()
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.tensors.iter().map(|(n, _)| n.as_str()).filter(|n| !Self::is_meta(n)).collect()
    }

    fn find(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Momentum buffers in the order of `params`, if every one is present.
    pub fn momentum<T: Real>(&self, params: &ParamStore<T>) -> Option<Vec<Tensor<T>>> {
        params.iter().map(|p| self.find(&format!("{MOMENTUM}{}", p.name)).map(|t| t.cast())).collect()
    }

    pub fn iteration(&self) -> u64 {
        self.find(ITERATION).map_or(0, |t| t.data()[0] as u64 | (t.data()[1] as u64) << 24)
    }

    pub fn config_text(&self) -> Option<String> {
        self.find(CONFIG).map(|t| t.data().iter().map(|&b| b as u8 as char).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
            let rank = u8::try_from(t.rank()).map_err(|_| Error::Format(format!("tensor {name} has rank {}", t.rank())))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::Format(format!("tensor {name} dimension {d} too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for i in 0..count {
            let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes_needed = numel.and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::Format(format!("tensor `{name}`: size overflows")))?;
            let raw = r.take(bytes_needed, "tensor data")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated checkpoint while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
