//! Labelled datasets, batching, and the seeded Gaussian-blob generator.

pub mod idx;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One batch of `B` flattened inputs with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    pub inputs: Matrix,
    pub labels: Vec<u32>,
}

impl FeatureBatch {
    pub fn new(inputs: Matrix, labels: Vec<u32>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::invalid("batch must hold at least one sample"));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} samples but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<u32>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::invalid("sample and label counts differ"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        if !inputs.is_finite() {
            return Err(Error::Numeric("non-finite dataset entries".into()));
        }
        Ok(Self { inputs, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn gather(&self, indices: &[usize]) -> Result<FeatureBatch> {
        FeatureBatch::new(
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Consecutive batches over `order`; the last one may be short.
    pub fn batches<'a>(
        &'a self,
        order: &'a [usize],
        batch_size: usize,
    ) -> impl Iterator<Item = FeatureBatch> + 'a {
        order
            .chunks(batch_size.max(1))
            .map(move |idx| self.gather(idx).expect("indices come from this dataset"))
    }

    /// Splits off the trailing `fraction` of samples.
    pub fn split_tail(self, fraction: f64) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        let tail = ((n as f64) * fraction).round() as usize;
        if tail == 0 || tail >= n {
            return Err(Error::invalid("split leaves an empty side"));
        }
        let head: Vec<usize> = (0..n - tail).collect();
        let rest: Vec<usize> = (n - tail..n).collect();
        let take = |idx: &[usize]| {
            Dataset::new(
                self.inputs.select_rows(idx),
                idx.iter().map(|&i| self.labels[i]).collect(),
                self.num_classes,
            )
        };
        Ok((take(&head)?, take(&rest)?))
    }
}

/// Per-epoch sample order: a seeded shuffle of `0..n`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order
}

/// `num_classes` isotropic Gaussian clusters in input space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub train: usize,
    pub test: usize,
    /// Standard deviation of the cluster centres.
    pub center_scale: f64,
    /// Standard deviation of samples around their centre.
    pub noise: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self { num_classes: 4, input_dim: 64, train: 2000, test: 500, center_scale: 1.0, noise: 1.0 }
    }
}

impl BlobSpec {
    /// Train and test sets drawn from the same clusters; labels cycle through the classes.
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.num_classes < 2 || self.input_dim == 0 || self.train == 0 || self.test == 0 {
            return Err(Error::invalid("blob spec needs ≥2 classes and non-empty splits"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centre_dist = Normal::new(0.0, self.center_scale)
            .map_err(|e| Error::invalid(format!("center_scale: {e}")))?;
        let centres: Vec<f64> = (0..self.num_classes * self.input_dim)
            .map(|_| centre_dist.sample(&mut rng))
            .collect();
        let mut draw = |n: usize| -> Result<Dataset> {
            let mut data = Vec::with_capacity(n * self.input_dim);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % self.num_classes;
                let centre = &centres[c * self.input_dim..(c + 1) * self.input_dim];
                data.extend(centre.iter().map(|&m| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    m + self.noise * e
                }));
                labels.push(c as u32);
            }
            Dataset::new(Matrix::new(n, self.input_dim, data)?, labels, self.num_classes)
        };
        let train = draw(self.train)?;
        let test = draw(self.test)?;
        Ok((train, test))
    }
}
