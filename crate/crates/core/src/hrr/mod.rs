//! Circular-convolution binding, superposition and correlation unbinding.
//!
//! A group of `n ≤ R` feature vectors is compressed into one vector by
//! binding feature `i` with key `i` and summing:
//!
//! ```text
//! S = Σ_i K_i ⊛ Z_i          (K ⊛ Z)_j = Σ_k K_k Z_{(j−k) mod D}
//! Ẑ_i = K_i ⊙ S              (K ⊙ S)_j = Σ_k K_k S_{(j+k) mod D}
//! ```
//!
//! Correlation is the exact adjoint of convolution, so the backward pass
//! through the codec reuses the same two kernels with their roles swapped.

mod kernel;
mod keyfile;
mod keys;
pub mod naive;
mod retrieval;

use rustfft::num_traits::Float;
use rustfft::FftNum;

pub use kernel::{sparse_limit, Circulant, PreparedKey};
pub use keyfile::{KeyFile, KEY_FORMAT_VERSION, KEY_MAGIC};
pub use keys::{KeyKind, KeySet};
pub use retrieval::{measure_retrieval, RetrievalStats};

use crate::error::{check_dims, Error, Result};

pub trait Scalar: FftNum + Float {}
impl<T: FftNum + Float> Scalar for T {}

/// Circular convolution of `key` with `z`.
pub fn bind<T: Scalar>(key: &[T], z: &[T]) -> Result<Vec<T>> {
    check_dims("bind", key.len(), z.len())?;
    Circulant::new(key.len())?.bind(key, z)
}

/// Circular correlation of `key` with `s`.
pub fn unbind<T: Scalar>(key: &[T], s: &[T]) -> Result<Vec<T>> {
    check_dims("unbind", key.len(), s.len())?;
    Circulant::new(key.len())?.unbind(key, s)
}

/// Gradient of `⟨upstream, bind(key, z)⟩` with respect to `z`.
pub fn bind_adjoint<T: Scalar>(key: &[T], upstream: &[T]) -> Result<Vec<T>> {
    unbind(key, upstream)
}

/// Gradient of `⟨upstream, unbind(key, s)⟩` with respect to `s`.
pub fn unbind_adjoint<T: Scalar>(key: &[T], upstream: &[T]) -> Result<Vec<T>> {
    bind(key, upstream)
}

/// Elementwise sum of equally sized vectors.
pub fn superpose<T: Scalar, V: AsRef<[T]>>(bound: &[V]) -> Result<Vec<T>> {
    let Some((first, rest)) = bound.split_first() else {
        return Err(Error::invalid("superpose needs at least one vector"));
    };
    let mut out = first.as_ref().to_vec();
    for v in rest {
        let v = v.as_ref();
        check_dims("superpose", out.len(), v.len())?;
        out.iter_mut().zip(v).for_each(|(o, &x)| *o = *o + x);
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Cosine similarity; zero when either vector vanishes.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = (norm_sq(a) * norm_sq(b)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Key set with every key prepared for its fastest exact-enough kernel.
#[derive(Clone, Debug)]
pub struct HrrCodec {
    keys: KeySet,
    circulant: Circulant<f64>,
    prepared: Vec<PreparedKey<f64>>,
}

impl HrrCodec {
    pub fn new(keys: KeySet) -> Result<Self> {
        let circulant = Circulant::new(keys.dim())?;
        let prepared = keys
            .iter()
            .map(|k| circulant.prepare(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { keys, circulant, prepared })
    }

    pub fn keys(&self) -> &KeySet {
        &self.keys
    }

    pub fn dim(&self) -> usize {
        self.keys.dim()
    }

    pub fn ratio(&self) -> usize {
        self.keys.count()
    }

    pub fn bind_slot(&self, slot: usize, z: &[f64]) -> Result<Vec<f64>> {
        self.circulant.bind_prepared(self.slot(slot)?, z)
    }

    pub fn unbind_slot(&self, slot: usize, s: &[f64]) -> Result<Vec<f64>> {
        self.circulant.unbind_prepared(self.slot(slot)?, s)
    }

    fn slot(&self, slot: usize) -> Result<&PreparedKey<f64>> {
        self.prepared.get(slot).ok_or_else(|| {
            Error::invalid(format!("slot {slot} out of range for {} keys", self.ratio()))
        })
    }

    fn group_len(&self, rows: &[f64]) -> Result<usize> {
        let d = self.dim();
        if rows.is_empty() || rows.len() % d != 0 {
            return Err(Error::invalid(format!(
                "group of {} values is not a non-empty multiple of D={d}",
                rows.len()
            )));
        }
        let n = rows.len() / d;
        if n > self.ratio() {
            return Err(Error::invalid(format!(
                "group of {n} features exceeds {} keys",
                self.ratio()
            )));
        }
        Ok(n)
    }

    /// Compresses `n ≤ R` row-major features into one vector; feature `i`
    /// pairs with key `i`.
    pub fn encode_group(&self, rows: &[f64]) -> Result<Vec<f64>> {
        self.group_len(rows)?;
        let bound = rows
            .chunks_exact(self.dim())
            .enumerate()
            .map(|(i, z)| self.bind_slot(i, z))
            .collect::<Result<Vec<_>>>()?;
        superpose(&bound)
    }

    /// Retrieves `out.len() / D` features from one compressed vector.
    pub fn decode_group_into(&self, s: &[f64], out: &mut [f64]) -> Result<()> {
        check_dims("decode", self.dim(), s.len())?;
        self.group_len(out)?;
        for (i, row) in out.chunks_exact_mut(self.dim()).enumerate() {
            row.copy_from_slice(&self.unbind_slot(i, s)?);
        }
        Ok(())
    }

    pub fn decode_group(&self, s: &[f64], n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n * self.dim()];
        self.decode_group_into(s, &mut out)?;
        Ok(out)
    }

    /// Splits the retrieval of feature `index` into the self term
    /// `K_i ⊙ (K_i ⊛ Z_i)` and the crosstalk `Σ_{j≠i} K_i ⊙ (K_j ⊛ Z_j)`.
    pub fn noise_decomposition(&self, rows: &[f64], index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.group_len(rows)?;
        if index >= n {
            return Err(Error::invalid(format!(
                "index {index} out of range for a group of {n}"
            )));
        }
        let d = self.dim();
        let feature = |j: usize| &rows[j * d..(j + 1) * d];
        let signal = self.unbind_slot(index, &self.bind_slot(index, feature(index))?)?;
        let mut cross = vec![0.0; d];
        for j in (0..n).filter(|&j| j != index) {
            let term = self.unbind_slot(index, &self.bind_slot(j, feature(j))?)?;
            cross.iter_mut().zip(&term).for_each(|(c, t)| *c += t);
        }
        Ok((signal, cross))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn superpose_examples() {
        assert_eq!(superpose(&[[1.0, 2.0], [3.0, 4.0]]).unwrap(), vec![4.0, 6.0]);
        assert_eq!(superpose(&[[1.5, -2.0]]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(superpose(&[[1.5, -2.0], [-1.5, 2.0]]).unwrap(), vec![0.0, 0.0]);
        assert!(superpose::<f64, Vec<f64>>(&[]).is_err());
        assert!(superpose(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn identity_key_group_of_one() {
        let codec = HrrCodec::new(KeySet::delta(4, 2).unwrap()).unwrap();
        let z = [0.5, -1.0, 2.0, 0.25];
        assert_eq!(codec.encode_group(&z).unwrap(), z.to_vec());
        assert_eq!(codec.decode_group(&z, 1).unwrap(), z.to_vec());
    }

    #[test]
    fn oversized_group_rejected() {
        let codec = HrrCodec::new(KeySet::generate(4, 2, 1).unwrap()).unwrap();
        assert!(codec.encode_group(&[0.0; 12]).is_err());
        assert!(codec.encode_group(&[0.0; 5]).is_err());
        assert!(codec.encode_group(&[]).is_err());
        assert!(codec.noise_decomposition(&[0.0; 4], 1).is_err());
    }

    #[test]
    fn single_member_has_no_crosstalk() {
        let codec = HrrCodec::new(KeySet::generate(8, 4, 5).unwrap()).unwrap();
        let z: Vec<f64> = (0..8).map(|v| v as f64 - 3.5).collect();
        let (_, cross) = codec.noise_decomposition(&z, 0).unwrap();
        assert!(cross.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn adjoint_free_functions() {
        let key = [1.0, 0.0, 0.0, 0.0];
        let up = [3.0, -1.0, 2.0, 5.0];
        assert_eq!(bind_adjoint(&key, &up).unwrap(), up.to_vec());
        assert_eq!(unbind_adjoint(&key, &up).unwrap(), up.to_vec());
    }

    #[test]
    fn cosine_of_zero_vector() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-15);
    }
}
