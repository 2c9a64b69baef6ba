//! Model checkpoints: `"C3MD"`, version u16, layer count u16, then per layer
//! `in u32, out u32, activation u8` followed by weights and bias as f32.
//! Everything little-endian. Optimizer state is not stored.

use std::io::{Read, Write};

use super::{Activation, AdamConfig, DenseLayer, Mlp};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"C3MD";
pub const MODEL_FORMAT_VERSION: u16 = 1;

pub fn to_bytes(model: &Mlp) -> Result<Vec<u8>> {
    let layers = model.layers();
    let count = u16::try_from(layers.len()).map_err(|_| Error::invalid("too many layers"))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for l in layers {
        let in_dim = u32::try_from(l.in_dim).map_err(|_| Error::invalid("layer too wide"))?;
        let out_dim = u32::try_from(l.out_dim).map_err(|_| Error::invalid("layer too wide"))?;
        out.extend_from_slice(&in_dim.to_le_bytes());
        out.extend_from_slice(&out_dim.to_le_bytes());
        out.push(l.activation.code());
        for &v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("truncated model checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format("layer too large"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8], adam: AdamConfig) -> Result<Mlp> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MODEL_MAGIC {
        return Err(Error::format("bad model checkpoint magic"));
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let count = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    let mut layers = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let in_dim = cur.u32()? as usize;
        let out_dim = cur.u32()? as usize;
        let code = cur.take(1)?[0];
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::format(format!("unknown activation code {code}")))?;
        let weights = cur.f32s(in_dim * out_dim)?;
        let bias = cur.f32s(out_dim)?;
        layers.push(DenseLayer::new(in_dim, out_dim, weights, bias, activation)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::format("trailing bytes after model checkpoint"));
    }
    Mlp::new(layers, adam)
}

pub fn write(model: &Mlp, mut w: impl Write) -> Result<()> {
    w.write_all(&to_bytes(model)?)?;
    Ok(())
}

pub fn read(mut r: impl Read, adam: AdamConfig) -> Result<Mlp> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    from_bytes(&buf, adam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Architecture;

    #[test]
    fn roundtrip_through_f32() {
        let arch = Architecture::desk(5, 4, 3);
        let model = Mlp::init_edge(&arch, 9, AdamConfig::default()).unwrap();
        let bytes = to_bytes(&model).unwrap();
        assert_eq!(&bytes[..8], &[b'C', b'3', b'M', b'D', 1, 0, 2, 0]);
        assert_eq!(&bytes[8..17], &[5, 0, 0, 0, 128, 0, 0, 0, 1]);
        let back = from_bytes(&bytes, AdamConfig::default()).unwrap();
        let expected: Vec<f64> = model.parameters().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(back.parameters(), expected);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_damaged_input() {
        let arch = Architecture::desk(2, 2, 2);
        let bytes = to_bytes(&Mlp::init_cloud(&arch, 1, AdamConfig::default()).unwrap()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1], AdamConfig::default()).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra, AdamConfig::default()).is_err());
        let mut bad = bytes.clone();
        bad[16] = 9;
        assert!(from_bytes(&bad, AdamConfig::default()).is_err());
    }
}
