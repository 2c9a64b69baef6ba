//! Transform-domain circular convolution and correlation.
//!
//! Binding multiplies spectra, unbinding multiplies by the conjugate key
//! spectrum. Keys with very few non-zero entries (coordinate deltas in
//! particular) take a direct sparse path instead, which is both cheaper and
//! exact: a delta key reproduces its input bit for bit.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::Scalar;
use crate::error::{check_dims, Error, Result};

/// Precomputed form of one key: either its spectrum or its sparse support.
#[derive(Clone, Debug)]
pub enum PreparedKey<T> {
    Sparse(Vec<(usize, T)>),
    Spectral(Vec<Complex<T>>),
}

/// Keys with at most this many non-zeros run on the direct path.
pub fn sparse_limit(dim: usize) -> usize {
    let log2 = usize::BITS - dim.leading_zeros();
    (2 * log2 as usize).max(1)
}

/// FFT plans for one dimension. Cheap to clone; `Send + Sync`.
#[derive(Clone)]
pub struct Circulant<T: Scalar> {
    dim: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Scalar> std::fmt::Debug for Circulant<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Circulant").field("dim", &self.dim).finish()
    }
}

impl<T: Scalar> Circulant<T> {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            dim,
            forward: planner.plan_fft_forward(dim),
            inverse: planner.plan_fft_inverse(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spectrum(&self, x: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward.process(&mut buf);
        buf
    }

    fn real_inverse(&self, mut buf: Vec<Complex<T>>) -> Vec<T> {
        self.inverse.process(&mut buf);
        let scale = T::one() / T::from_usize(self.dim).expect("dimension fits the scalar type");
        buf.into_iter().map(|c| c.re * scale).collect()
    }

    pub fn prepare(&self, key: &[T]) -> Result<PreparedKey<T>> {
        check_dims("prepare key", self.dim, key.len())?;
        let support: Vec<(usize, T)> = key
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v != T::zero())
            .collect();
        if support.len() <= sparse_limit(self.dim) {
            Ok(PreparedKey::Sparse(support))
        } else {
            Ok(PreparedKey::Spectral(self.spectrum(key)))
        }
    }

    pub fn bind(&self, key: &[T], z: &[T]) -> Result<Vec<T>> {
        check_dims("bind", key.len(), z.len())?;
        let prepared = self.prepare(key)?;
        self.bind_prepared(&prepared, z)
    }

    pub fn unbind(&self, key: &[T], s: &[T]) -> Result<Vec<T>> {
        check_dims("unbind", key.len(), s.len())?;
        let prepared = self.prepare(key)?;
        self.unbind_prepared(&prepared, s)
    }

    pub fn bind_prepared(&self, key: &PreparedKey<T>, z: &[T]) -> Result<Vec<T>> {
        check_dims("bind", self.dim, z.len())?;
        Ok(match key {
            PreparedKey::Sparse(support) => sparse_apply(support, z, |j, k, d| (j + d - k) % d),
            PreparedKey::Spectral(k_hat) => {
                let mut z_hat = self.spectrum(z);
                for (a, b) in z_hat.iter_mut().zip(k_hat) {
                    *a = *a * *b;
                }
                self.real_inverse(z_hat)
            }
        })
    }

    pub fn unbind_prepared(&self, key: &PreparedKey<T>, s: &[T]) -> Result<Vec<T>> {
        check_dims("unbind", self.dim, s.len())?;
        Ok(match key {
            PreparedKey::Sparse(support) => sparse_apply(support, s, |j, k, d| (j + k) % d),
            PreparedKey::Spectral(k_hat) => {
                let mut s_hat = self.spectrum(s);
                for (a, b) in s_hat.iter_mut().zip(k_hat) {
                    *a = *a * b.conj();
                }
                self.real_inverse(s_hat)
            }
        })
    }
}

// The first term seeds the accumulator so a single unit entry is exact.
fn sparse_apply<T: Scalar>(
    support: &[(usize, T)],
    x: &[T],
    index: impl Fn(usize, usize, usize) -> usize,
) -> Vec<T> {
    let d = x.len();
    let Some((&(k0, v0), rest)) = support.split_first() else {
        return vec![T::zero(); d];
    };
    let mut out: Vec<T> = (0..d).map(|j| v0 * x[index(j, k0, d)]).collect();
    for &(k, v) in rest {
        for (j, o) in out.iter_mut().enumerate() {
            *o = *o + v * x[index(j, k, d)];
        }
    }
    out
}
