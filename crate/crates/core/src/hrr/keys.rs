use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyKind {
    /// i.i.d. `N(0, 1/D)` entries, rescaled to unit norm.
    Gaussian,
    /// Key `i` is the coordinate delta at index `i`.
    Delta,
}

/// `count` fixed unit-norm binding keys of dimension `dim`.
///
/// Immutable once built: nothing in the crate hands out mutable access to
/// the key values, and no optimizer ever sees them.
#[derive(Clone, Debug, PartialEq)]
pub struct KeySet {
    dim: usize,
    count: usize,
    seed: u64,
    kind: KeyKind,
    values: Vec<f64>,
}

impl KeySet {
    pub fn generate(dim: usize, count: usize, seed: u64) -> Result<Self> {
        validate(dim, count)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt())
            .map_err(|e| Error::Internal(format!("key distribution: {e}")))?;
        let mut values = Vec::with_capacity(dim * count);
        for i in 0..count {
            let start = values.len();
            values.extend((0..dim).map(|_| normal.sample(&mut rng)));
            let key = &mut values[start..];
            let norm = key.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Internal(format!("key {i} sampled with norm {norm}")));
            }
            key.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self { dim, count, seed, kind: KeyKind::Gaussian, values })
    }

    pub fn delta(dim: usize, count: usize) -> Result<Self> {
        validate(dim, count)?;
        if count > dim {
            return Err(Error::invalid(format!(
                "{count} delta keys do not fit in dimension {dim}"
            )));
        }
        let mut values = vec![0.0; dim * count];
        for i in 0..count {
            values[i * dim + i] = 1.0;
        }
        Ok(Self { dim, count, seed: 0, kind: KeyKind::Delta, values })
    }

    pub fn build(kind: KeyKind, dim: usize, count: usize, seed: u64) -> Result<Self> {
        match kind {
            KeyKind::Gaussian => Self::generate(dim, count, seed),
            KeyKind::Delta => Self::delta(dim, count),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> KeyKind {
        self.kind
    }

    pub fn key(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Stored parameters: `count × dim`.
    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    /// Exact little-endian image of the key values.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

fn validate(dim: usize, count: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("key dimension must be positive"));
    }
    if count == 0 {
        return Err(Error::invalid("key count must be positive"));
    }
    Ok(())
}
