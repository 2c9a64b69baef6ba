use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hrr::{HrrCodec, KeyKind, KeySet};
use crate::linalg::Matrix;

/// Consecutive, order-preserving row ranges of at most `r` rows.
///
/// With `strict`, a batch that `r` does not divide is rejected; otherwise
/// the final group holds the remainder.
pub fn divide_groups(rows: usize, r: usize, strict: bool) -> Result<Vec<Range<usize>>> {
    if r == 0 {
        return Err(Error::invalid("compression ratio must be at least 1"));
    }
    if strict && rows % r != 0 {
        return Err(Error::invalid(format!(
            "batch of {rows} is not divisible by ratio {r}"
        )));
    }
    Ok((0..rows).step_by(r).map(|s| s..(s + r).min(rows)).collect())
}

/// Payload floats on the wire, f32 in practice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WirePrecision {
    #[default]
    F32,
    /// No rounding between edge and cloud; used for gradient checks.
    F64,
}

impl WirePrecision {
    pub fn round(self, values: &mut [f64]) {
        if self == WirePrecision::F32 {
            values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "keys")]
pub enum Compression {
    /// Vanilla split learning: features cross the cut unchanged.
    None,
    Hrr(KeyKind),
}

/// `B/R` superposed vectors, one per group (features forward, gradients backward).
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedBatch {
    pub dim: usize,
    pub group_sizes: Vec<usize>,
    pub data: Vec<f64>,
}

impl CompressedBatch {
    pub fn num_groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn batch_len(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn group(&self, g: usize) -> &[f64] {
        &self.data[g * self.dim..(g + 1) * self.dim]
    }

    pub fn validate(&self, ratio: usize) -> Result<()> {
        if self.group_sizes.is_empty() || self.group_sizes.iter().any(|&n| n == 0 || n > ratio) {
            return Err(Error::invalid(format!("group sizes must lie in [1, {ratio}]")));
        }
        if self.data.len() != self.num_groups() * self.dim {
            return Err(Error::invalid("compressed data does not match its group count"));
        }
        Ok(())
    }
}

/// The cut-layer codec: HRR batch-wise compression or a pass-through.
#[derive(Clone, Debug)]
pub enum Codec {
    Bypass { dim: usize },
    Hrr(HrrCodec),
}

impl Codec {
    pub fn new(compression: Compression, dim: usize, ratio: usize, key_seed: u64) -> Result<Self> {
        match compression {
            Compression::None if ratio == 1 => Ok(Codec::Bypass { dim }),
            Compression::None => Err(Error::invalid("uncompressed runs require ratio 1")),
            Compression::Hrr(kind) => Ok(Codec::Hrr(HrrCodec::new(KeySet::build(kind, dim, ratio, key_seed)?)?)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Codec::Bypass { dim } => *dim,
            Codec::Hrr(c) => c.dim(),
        }
    }

    pub fn ratio(&self) -> usize {
        match self {
            Codec::Bypass { .. } => 1,
            Codec::Hrr(c) => c.ratio(),
        }
    }

    pub fn keys(&self) -> Option<&KeySet> {
        match self {
            Codec::Bypass { .. } => None,
            Codec::Hrr(c) => Some(c.keys()),
        }
    }

    /// Compresses each group of rows into one vector. Groups run concurrently
    /// under `Exec::Parallel`; results land in group order.
    pub fn encode(&self, rows: &Matrix, strict: bool, exec: Exec) -> Result<CompressedBatch> {
        if rows.cols() != self.dim() {
            return Err(Error::contract(format!(
                "cut width {} does not match codec dimension {}",
                rows.cols(),
                self.dim()
            )));
        }
        let groups = divide_groups(rows.rows(), self.ratio(), strict)?;
        let group_sizes = groups.iter().map(|g| g.len()).collect();
        let data = match self {
            Codec::Bypass { .. } => rows.data().to_vec(),
            Codec::Hrr(codec) => {
                let parts = exec.map(groups.len(), |g| {
                    codec.encode_group(rows.row_range(groups[g].start, groups[g].end))
                });
                let mut data = Vec::with_capacity(groups.len() * self.dim());
                for part in parts {
                    data.extend(part?);
                }
                data
            }
        };
        Ok(CompressedBatch { dim: self.dim(), group_sizes, data })
    }

    /// Restores `group_sizes[g]` rows from each compressed vector, in order.
    pub fn decode(&self, batch: &CompressedBatch, exec: Exec) -> Result<Matrix> {
        if batch.dim != self.dim() {
            return Err(Error::contract("compressed batch dimension does not match codec"));
        }
        batch.validate(self.ratio())?;
        let d = self.dim();
        let data = match self {
            Codec::Bypass { .. } => batch.data.clone(),
            Codec::Hrr(codec) => {
                let parts = exec.map(batch.num_groups(), |g| codec.decode_group(batch.group(g), batch.group_sizes[g]));
                let mut data = Vec::with_capacity(batch.batch_len() * d);
                for part in parts {
                    data.extend(part?);
                }
                data
            }
        };
        Matrix::new(batch.batch_len(), d, data)
    }

    /// Backward through `decode`: `∂L/∂S_g = Σ_i bind(K_i, ∂L/∂Ẑ_i)`, which is
    /// the encoder applied to the restored-feature gradients.
    pub fn decode_adjoint(&self, grad_restored: &Matrix, group_sizes: &[usize], exec: Exec) -> Result<CompressedBatch> {
        let strict = false;
        let out = self.encode(grad_restored, strict, exec)?;
        if out.group_sizes != group_sizes {
            return Err(Error::contract("gradient grouping differs from the forward grouping"));
        }
        Ok(out)
    }

    /// Backward through `encode`: `∂L/∂Z_i = unbind(K_i, ∂L/∂S_g)`, i.e. the decoder.
    pub fn encode_adjoint(&self, grad_compressed: &CompressedBatch, exec: Exec) -> Result<Matrix> {
        self.decode(grad_compressed, exec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_examples() {
        let sizes = |rows, r, strict| -> Vec<usize> {
            divide_groups(rows, r, strict).unwrap().iter().map(|g| g.len()).collect()
        };
        assert_eq!(sizes(64, 16, true), vec![16; 4]);
        assert_eq!(sizes(5, 1, true), vec![1; 5]);
        assert_eq!(sizes(5, 2, false), vec![2, 2, 1]);
        assert!(divide_groups(5, 2, true).is_err());
        assert!(divide_groups(5, 0, false).is_err());
        assert_eq!(divide_groups(5, 2, false).unwrap()[2], 4..5);
    }

    #[test]
    fn bypass_needs_ratio_one() {
        assert!(Codec::new(Compression::None, 4, 2, 0).is_err());
        let c = Codec::new(Compression::None, 4, 1, 0).unwrap();
        let z = Matrix::new(2, 4, (0..8).map(|v| v as f64).collect()).unwrap();
        let cb = c.encode(&z, true, Exec::Sequential).unwrap();
        assert_eq!(c.decode(&cb, Exec::Sequential).unwrap(), z);
    }

    #[test]
    fn delta_key_ratio_one_is_identity() {
        let c = Codec::new(Compression::Hrr(KeyKind::Delta), 4, 1, 0).unwrap();
        let z = Matrix::new(3, 4, (0..12).map(|v| (v as f64).sin()).collect()).unwrap();
        let cb = c.encode(&z, false, Exec::Parallel).unwrap();
        assert_eq!(cb.data, z.data());
        assert_eq!(c.decode(&cb, Exec::Parallel).unwrap(), z);
    }

    #[test]
    fn wire_rounding() {
        let mut v = [0.1f64, 1.0];
        WirePrecision::F64.round(&mut v);
        assert_eq!(v[0], 0.1);
        WirePrecision::F32.round(&mut v);
        assert_eq!(v[0], 0.1f32 as f64);
    }
}
