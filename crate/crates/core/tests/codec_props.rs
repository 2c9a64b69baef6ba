//! Algebraic properties of the binding kernels, checked against the direct
//! O(D²) reference.

use c3sl::hrr::{self, naive, Circulant, HrrCodec, KeySet, PreparedKey};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn norm(v: &[f64]) -> f64 {
    hrr::norm_sq(v).sqrt()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dims() -> impl Strategy<Value = usize> {
    prop_oneof![1usize..=8, Just(64usize), Just(257usize), Just(2048usize)]
}

// The spectral path is forced so tiny D does not fall back to the sparse one.
fn spectral(c: &Circulant<f64>, key: &[f64]) -> PreparedKey<f64> {
    PreparedKey::Spectral(c.spectrum(key))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fast_matches_naive(d in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let key = gaussian(d, &mut rng);
        let z = gaussian(d, &mut rng);
        let c = Circulant::new(d).unwrap();
        let k = spectral(&c, &key);
        let scale = norm(&key) * norm(&z);

        let fast = c.bind_prepared(&k, &z).unwrap();
        let slow = naive::bind(&key, &z).unwrap();
        prop_assert!(max_abs_diff(&fast, &slow) <= 1e-10 * scale, "bind D={d}");

        let fast = c.unbind_prepared(&k, &z).unwrap();
        let slow = naive::unbind(&key, &z).unwrap();
        prop_assert!(max_abs_diff(&fast, &slow) <= 1e-10 * scale, "unbind D={d}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fast_matches_naive_in_f32(d in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let key: Vec<f32> = gaussian(d, &mut rng).into_iter().map(|v| v as f32).collect();
        let z: Vec<f32> = gaussian(d, &mut rng).into_iter().map(|v| v as f32).collect();
        let c = Circulant::<f32>::new(d).unwrap();
        let k = PreparedKey::Spectral(c.spectrum(&key));
        let n = |v: &[f32]| v.iter().map(|x| x * x).sum::<f32>().sqrt();
        let scale = n(&key) * n(&z);
        for (fast, slow) in [
            (c.bind_prepared(&k, &z).unwrap(), naive::bind(&key, &z).unwrap()),
            (c.unbind_prepared(&k, &z).unwrap(), naive::unbind(&key, &z).unwrap()),
        ] {
            let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            prop_assert!(err <= 1e-4 * scale, "D={d}: {err}");
        }
    }

    #[test]
    fn sparse_matches_naive(d in 1usize..300, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut key = vec![0.0; d];
        for _ in 0..hrr::sparse_limit(d).min(d) {
            key[rng.random_range(0..d)] = rng.random_range(-2.0..2.0);
        }
        let z = gaussian(d, &mut rng);
        let c = Circulant::new(d).unwrap();
        let k = c.prepare(&key).unwrap();
        prop_assert!(matches!(k, PreparedKey::Sparse(_)));
        let scale = norm(&key) * norm(&z);
        prop_assert!(max_abs_diff(&c.bind_prepared(&k, &z).unwrap(), &naive::bind(&key, &z).unwrap()) <= 1e-12 * scale);
        prop_assert!(max_abs_diff(&c.unbind_prepared(&k, &z).unwrap(), &naive::unbind(&key, &z).unwrap()) <= 1e-12 * scale);
    }

    #[test]
    fn adjoint_identity(d in dims(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let key = gaussian(d, &mut rng);
        let a = gaussian(d, &mut rng);
        let b = gaussian(d, &mut rng);
        let lhs = hrr::dot(&hrr::bind(&key, &a).unwrap(), &b);
        let rhs = hrr::dot(&a, &hrr::unbind(&key, &b).unwrap());
        let scale = norm(&key) * norm(&a) * norm(&b);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "D={d}: {lhs} vs {rhs}");
    }

    #[test]
    fn bind_is_bilinear_and_commutative(d in 1usize..40, seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = gaussian(d, &mut rng);
        let x = gaussian(d, &mut rng);
        let y = gaussian(d, &mut rng);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + b).collect();
        let lhs = hrr::bind(&k, &combo).unwrap();
        let bx = hrr::bind(&k, &x).unwrap();
        let by = hrr::bind(&k, &y).unwrap();
        let rhs: Vec<f64> = bx.iter().zip(&by).map(|(a, b)| alpha * a + b).collect();
        let scale = norm(&k) * (norm(&x) * alpha.abs() + norm(&y));
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-12 * scale);
        prop_assert!(max_abs_diff(&hrr::bind(&k, &x).unwrap(), &hrr::bind(&x, &k).unwrap()) <= 1e-12 * norm(&k) * norm(&x));
    }

    #[test]
    fn delta_key_shifts(d in 1usize..64, shift in 0usize..64, seed in any::<u64>()) {
        let shift = shift % d;
        let mut key = vec![0.0; d];
        key[shift] = 1.0;
        let z = gaussian(d, &mut ChaCha8Rng::seed_from_u64(seed));
        let bound = hrr::bind(&key, &z).unwrap();
        for j in 0..d {
            prop_assert_eq!(bound[(j + shift) % d], z[j]);
        }
        prop_assert_eq!(hrr::unbind(&key, &bound).unwrap(), z);
    }
}

/// Central differences of `L(z) = ⟨u, unbind(K, bind(K, z))⟩` against the
/// chained adjoints.
#[test]
fn adjoint_chain_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for d in [1, 3, 8, 16, 31] {
        let key = gaussian(d, &mut rng);
        let z = gaussian(d, &mut rng);
        let u = gaussian(d, &mut rng);
        let loss = |z: &[f64]| {
            let s = hrr::bind(&key, z).unwrap();
            hrr::dot(&u, &hrr::unbind(&key, &s).unwrap())
        };
        let grad = hrr::bind_adjoint(&key, &hrr::unbind_adjoint(&key, &u).unwrap()).unwrap();
        let h = 1e-5;
        for i in 0..d {
            let mut plus = z.clone();
            let mut minus = z.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                "D={d} i={i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }
}

/// Self term plus crosstalk reconstructs the retrieval exactly, up to rounding.
#[test]
fn retrieval_splits_into_signal_and_crosstalk() {
    let d = 256;
    for r in [2, 4, 8, 16] {
        let codec = HrrCodec::new(KeySet::generate(d, r, r as u64).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + r as u64);
        for _ in 0..100 {
            let n = rng.random_range(2..=r);
            let rows = gaussian(n * d, &mut rng);
            let s = codec.encode_group(&rows).unwrap();
            let index = rng.random_range(0..n);
            let full = codec.unbind_slot(index, &s).unwrap();
            let (signal, cross) = codec.noise_decomposition(&rows, index).unwrap();
            let sum: Vec<f64> = signal.iter().zip(&cross).map(|(a, b)| a + b).collect();
            let rel = max_abs_diff(&sum, &full) / norm(&full);
            assert!(rel <= 1e-12, "R={r} n={n}: relative error {rel}");
        }
    }
}

#[test]
fn group_encoding_matches_naive_sum() {
    let d = 33;
    let codec = HrrCodec::new(KeySet::generate(d, 4, 5).unwrap()).unwrap();
    let rows = gaussian(3 * d, &mut ChaCha8Rng::seed_from_u64(5));
    let mut expected = vec![0.0; d];
    for i in 0..3 {
        let b = naive::bind(codec.keys().key(i), &rows[i * d..(i + 1) * d]).unwrap();
        expected.iter_mut().zip(&b).for_each(|(e, v)| *e += v);
    }
    assert!(max_abs_diff(&codec.encode_group(&rows).unwrap(), &expected) < 1e-12);
    let out = codec.decode_group(&expected, 3).unwrap();
    for i in 0..3 {
        let want = naive::unbind(codec.keys().key(i), &expected).unwrap();
        assert!(max_abs_diff(&out[i * d..(i + 1) * d], &want) < 1e-12);
    }
}

#[test]
fn keys_are_unit_norm_and_seeded() {
    for (d, r) in [(1, 3), (7, 2), (64, 16), (2048, 4)] {
        let keys = KeySet::generate(d, r, 9).unwrap();
        assert_eq!(keys.param_count(), d * r);
        for k in keys.iter() {
            assert!((norm(k) - 1.0).abs() < 1e-12);
        }
        assert_eq!(keys, KeySet::generate(d, r, 9).unwrap());
    }
    let a = KeySet::generate(2048, 2, 1).unwrap();
    // Independent keys are nearly orthogonal: |⟨K_0, K_1⟩| ~ 1/√D.
    assert!(hrr::dot(a.key(0), a.key(1)).abs() < 5.0 / (2048f64).sqrt());
}

#[test]
fn mismatched_lengths_are_rejected() {
    assert!(hrr::bind(&[1.0, 0.0], &[1.0]).is_err());
    assert!(hrr::unbind(&[1.0], &[1.0, 2.0]).is_err());
    let c = Circulant::<f64>::new(4).unwrap();
    assert!(c.prepare(&[1.0; 3]).is_err());
}
