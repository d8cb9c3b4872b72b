use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selective_credit::exec::{self, CHUNK};
use selective_credit::models::{Predictor, Threshold};
use selective_credit::synth::{rejection_weight, sample, Scenario};
use selective_credit::training::{self, ModelKind, TrainConfig};

fn loss_gradient(c: &mut Criterion) {
    let s = Scenario::linear(-0.5, vec![1.0, -0.5, 0.25, 0.8, -1.2, 0.3], -2.0, 2.0);
    let data = sample(&s, 100_000, 1).unwrap().dataset;
    let model = training::initial_model(ModelKind::Mlp5, data.p(), &TrainConfig::default());
    let p = data.p();
    let (x, y) = (data.features(), data.labels());
    let mlp = model.as_mlp().unwrap().clone();
    let work = |r: std::ops::Range<usize>| {
        let mut loss = 0.0;
        for i in r {
            let f = mlp.forward_unchecked(&x[i * p..(i + 1) * p]).clamp(1e-12, 1.0 - 1e-12);
            loss -= if y[i] == 1 { f.ln() } else { (1.0 - f).ln() };
        }
        loss
    };
    let mut g = c.benchmark_group("mlp_loss_100k");
    g.bench_function("sequential", |b| {
        b.iter(|| black_box(exec::map_chunks_seq(data.n(), CHUNK, work).into_iter().sum::<f64>()))
    });
    #[cfg(feature = "parallel")]
    g.bench_function("parallel", |b| {
        b.iter(|| black_box(exec::map_chunks_par(data.n(), CHUNK, work).into_iter().sum::<f64>()))
    });
    g.bench_function("library_gradient", |b| {
        b.iter(|| black_box(training::loss_and_gradient(&model, &data).unwrap()))
    });
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let s = Scenario::named("bump").unwrap();
    let tau = Threshold::default();
    let mut g = c.benchmark_group("rejection_mc");
    for n in [100_000usize, 1_000_000] {
        let work = |r: std::ops::Range<usize>| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            rng.set_stream(r.start as u64);
            let mut x = [0.0; 2];
            let mut acc = 0.0;
            for _ in r {
                x[0] = rng.gen_range(-1.0..1.0);
                x[1] = rng.gen_range(-1.0..1.0);
                let nn = u8::from(x[0] > 0.0);
                let lr = u8::from(s.probability(&x) >= tau.value());
                acc += rejection_weight(s.probability(&x), nn, lr);
            }
            acc
        };
        g.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
            b.iter(|| black_box(exec::map_chunks_seq(n, CHUNK, work).into_iter().sum::<f64>()))
        });
        #[cfg(feature = "parallel")]
        g.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
            b.iter(|| black_box(exec::map_chunks_par(n, CHUNK, work).into_iter().sum::<f64>()))
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = loss_gradient, monte_carlo
}
criterion_main!(benches);
