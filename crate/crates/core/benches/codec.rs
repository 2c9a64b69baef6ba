//! Direct vs transform kernels, and sequential vs parallel batch encode/decode.

use std::hint::black_box;

use c3sl::hrr::{naive, Circulant, KeyKind, PreparedKey};
use c3sl::pipeline::{Codec, Compression};
use c3sl::{Exec, Matrix};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect()
}

fn bind(c: &mut Criterion) {
    let mut group = c.benchmark_group("bind");
    for d in [256, 2048] {
        let key = gaussian(d, 1);
        let z = gaussian(d, 2);
        let circ = Circulant::new(d).unwrap();
        let prepared = PreparedKey::Spectral(circ.spectrum(&key));
        group.bench_with_input(BenchmarkId::new("naive", d), &d, |b, _| {
            b.iter(|| naive::bind(black_box(&key), black_box(&z)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fft", d), &d, |b, _| {
            b.iter(|| circ.bind_prepared(black_box(&prepared), black_box(&z)).unwrap())
        });
    }
    group.finish();
}

fn batch(c: &mut Criterion) {
    let (d, rows) = (2048, 64);
    let z = Matrix::new(rows, d, gaussian(rows * d, 3)).unwrap();
    let mut group = c.benchmark_group("batch");
    for ratio in [4, 16] {
        let codec = Codec::new(Compression::Hrr(KeyKind::Gaussian), d, ratio, 0).unwrap();
        let compressed = codec.encode(&z, false, Exec::Sequential).unwrap();
        for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            group.bench_with_input(BenchmarkId::new(format!("encode/{name}"), ratio), &ratio, |b, _| {
                b.iter(|| codec.encode(black_box(&z), false, exec).unwrap())
            });
            group.bench_with_input(BenchmarkId::new(format!("decode/{name}"), ratio), &ratio, |b, _| {
                b.iter(|| codec.decode(black_box(&compressed), exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bind, batch);
criterion_main!(benches);
