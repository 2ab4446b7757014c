//! Binary checkpoint format for trained networks.
//!
//! ```text
//! b"NIMLP1"
//! u8   activation (0 relu, 1 sigmoid, 2 linear)
//! u8   batch norm flag
//! u32  number of layer sizes, then each size as u32
//! per dense layer: weights (row-major f64), bias (f64),
//!   and for hidden layers with batch norm: gamma, beta, running mean, running variance
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, BatchNorm, Dense, MlpModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"NIMLP1";

pub fn to_bytes(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(match model.activation() {
        Activation::Relu => 0,
        Activation::Sigmoid => 1,
        Activation::Linear => 2,
    });
    out.push(u8::from(model.batch_norm().is_some()));
    out.extend_from_slice(&(model.layer_sizes().len() as u32).to_le_bytes());
    for &n in model.layer_sizes() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    let put = |out: &mut Vec<u8>, values: &mut dyn Iterator<Item = &f64>| {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (i, d) in model.dense_layers().iter().enumerate() {
        put(&mut out, &mut d.weights.iter());
        put(&mut out, &mut d.bias.iter());
        if let Some(b) = model.batch_norm().and_then(|bn| bn.get(i)) {
            put(&mut out, &mut b.gamma.iter());
            put(&mut out, &mut b.beta.iter());
            put(&mut out, &mut b.running_mean.iter());
            put(&mut out, &mut b.running_var.iter());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Format(format!(
                "checkpoint truncated: needed {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format("checkpoint tensor size overflows".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn vector(&mut self, n: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.f64s(n)?))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let activation = match r.u8()? {
        0 => Activation::Relu,
        1 => Activation::Sigmoid,
        2 => Activation::Linear,
        other => return Err(Error::Format(format!("unknown activation code {other}"))),
    };
    let batch_norm = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad batch-norm flag {other}"))),
    };
    let count = r.u32()?;
    if count < 2 || count > (bytes.len() - r.pos) / 4 {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let sizes = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    if sizes.contains(&0) {
        return Err(Error::Format(format!("zero-width layer in {sizes:?}")));
    }

    let hidden = count - 2;
    let mut layers = Vec::with_capacity(count - 1);
    let mut bn = Vec::new();
    for (i, w) in sizes.windows(2).enumerate() {
        let weights = Array2::from_shape_vec((w[0], w[1]), r.f64s(w[0] * w[1])?).expect("length matches shape");
        let bias = r.vector(w[1])?;
        layers.push(Dense { weights, bias });
        if batch_norm && i < hidden {
            bn.push(BatchNorm {
                gamma: r.vector(w[1])?,
                beta: r.vector(w[1])?,
                running_mean: r.vector(w[1])?,
                running_var: r.vector(w[1])?,
            });
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    MlpModel::from_parts(sizes, activation, layers, batch_norm.then_some(bn))
}

pub fn save(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
