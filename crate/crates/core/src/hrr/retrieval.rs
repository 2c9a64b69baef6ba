//! Monte-Carlo measurement of retrieval quality and its two noise sources.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{cosine, dot, norm_sq, superpose, HrrCodec, KeyKind, KeySet};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalStats {
    pub ratio: usize,
    pub dim: usize,
    pub trials: usize,
    pub mean_cosine: f64,
    pub std_cosine: f64,
    /// Mean of `‖K_i ⊙ (K_i ⊛ Z_i)‖²`.
    pub mean_signal_energy: f64,
    /// Mean of `‖Σ_{j≠i} K_i ⊙ (K_j ⊛ Z_j)‖²`.
    pub mean_cross_energy: f64,
    /// Mean of `⟨K_i ⊙ (K_j ⊛ Z_j), Z_i⟩²` over pairs `j ≠ i`; zero when `R = 1`.
    pub mean_cross_overlap: f64,
}

#[derive(Default)]
struct Tally {
    cos: Vec<f64>,
    signal: f64,
    cross: f64,
    overlap: f64,
    pairs: usize,
}

/// Unit-norm Gaussian feature vectors, drawn so that the first `n` of a
/// larger draw equal a draw of `n`.
pub fn unit_features(dim: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(dim * n);
    for _ in 0..n {
        let start = out.len();
        out.extend((0..dim).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)));
        let row: &mut [f64] = &mut out[start..];
        let norm = norm_sq(row).sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

fn run_trial(dim: usize, ratio: usize, kind: KeyKind, trial_seed: u64) -> Result<Tally> {
    let keys = KeySet::build(kind, dim, ratio, derive_seed(trial_seed, 0))?;
    let codec = HrrCodec::new(keys)?;
    let z = unit_features(dim, ratio, derive_seed(trial_seed, 1));
    let feature = |i: usize| &z[i * dim..(i + 1) * dim];

    let bound = (0..ratio)
        .map(|j| codec.bind_slot(j, feature(j)))
        .collect::<Result<Vec<_>>>()?;
    let s = superpose(&bound)?;

    let mut tally = Tally::default();
    for i in 0..ratio {
        let restored = codec.unbind_slot(i, &s)?;
        tally.cos.push(cosine(&restored, feature(i)));
        let mut cross = vec![0.0; dim];
        for (j, b) in bound.iter().enumerate() {
            let term = codec.unbind_slot(i, b)?;
            if j == i {
                tally.signal += norm_sq(&term);
            } else {
                tally.overlap += dot(&term, feature(i)).powi(2);
                tally.pairs += 1;
                cross.iter_mut().zip(&term).for_each(|(c, t)| *c += t);
            }
        }
        tally.cross += norm_sq(&cross);
    }
    Ok(tally)
}

/// Runs `trials` independent draws of keys and unit-norm features.
///
/// Trial `t` derives its keys and features from `(seed, t)` only, and key
/// and feature draws share prefixes across ratios, so sweeps over `ratio`
/// compare like with like.
pub fn measure_retrieval(
    dim: usize,
    ratio: usize,
    trials: usize,
    seed: u64,
    kind: KeyKind,
    exec: Exec,
) -> Result<RetrievalStats> {
    if trials == 0 {
        return Err(Error::invalid("trials must be positive"));
    }
    let tallies = exec.map(trials, |t| run_trial(dim, ratio, kind, derive_seed(seed, t as u64)));

    let mut cos = Vec::with_capacity(trials * ratio);
    let (mut signal, mut cross, mut overlap, mut pairs) = (0.0, 0.0, 0.0, 0usize);
    for tally in tallies {
        let tally = tally?;
        cos.extend(tally.cos);
        signal += tally.signal;
        cross += tally.cross;
        overlap += tally.overlap;
        pairs += tally.pairs;
    }
    let n = cos.len() as f64;
    let mean = cos.iter().sum::<f64>() / n;
    let var = cos.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Ok(RetrievalStats {
        ratio,
        dim,
        trials,
        mean_cosine: mean,
        std_cosine: var.sqrt(),
        mean_signal_energy: signal / n,
        mean_cross_energy: cross / n,
        mean_cross_overlap: if pairs == 0 { 0.0 } else { overlap / pairs as f64 },
    })
}
