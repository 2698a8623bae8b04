use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dsie::dataset::{SplitName, SynthConfig};
use dsie::eval::{evaluate_split, DsieRecommender, Mode};
use dsie::losses::{loss_and_grads, plan_batch};
use dsie::train::training_samples;
use dsie::{Corpus, Execution, ModelParams, TrainConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn setup() -> (Corpus, TrainConfig, ModelParams) {
    let corpus = Corpus::synthetic(&SynthConfig::default(), 0).unwrap();
    let cfg = TrainConfig {
        dim: 32,
        interests: 4,
        ..TrainConfig::default()
    };
    let params = ModelParams::new(cfg.dims(corpus.catalog.item_count()), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (corpus, cfg, params)
}

fn batch_gradient(c: &mut Criterion) {
    let (corpus, cfg, params) = setup();
    let samples = training_samples(&corpus, &cfg);
    let plans = plan_batch(
        &samples[..cfg.batch_size],
        corpus.catalog.item_count(),
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let mut group = c.benchmark_group("loss_and_grads/batch128");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(loss_and_grads(&params, &plans, &cfg, exec).unwrap()))
        });
    }
    group.finish();
}

fn split_evaluation(c: &mut Criterion) {
    let (corpus, cfg, params) = setup();
    let rec = DsieRecommender {
        params: &params,
        config: &cfg,
    };
    let mut group = c.benchmark_group("evaluate/test_split");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(evaluate_split(&rec, &corpus, SplitName::Test, 50, Mode::Standard, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradient, split_evaluation);
criterion_main!(benches);
