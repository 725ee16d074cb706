//! Sequential vs parallel execution of the corpus-level loops.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lanechange::extraction::{extract_corpus, ExtractionConfig};
use lanechange::risk::duration_comparison;
use lanechange::scenario::{fit_behavior_model, sample_scenarios, BehaviorSample, GapModelKind, SamplerOptions};
use lanechange::synth::{generate_corpus, SynthConfig};
use lanechange::{CameraIntrinsics, Classification, Execution, GevParams};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn corpus_config() -> SynthConfig {
    SynthConfig {
        n_mlc: 40,
        n_dlc: 120,
        n_ambiguous: 20,
        n_other: 20,
        ..SynthConfig::default()
    }
}

fn durations(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let g = GevParams { shape: 0.1, loc: 3.0, scale: 0.8 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng)])
        .collect()
}

fn bench(c: &mut Criterion) {
    let k = CameraIntrinsics::default();
    let cfg = corpus_config();

    let mut g = c.benchmark_group("generate_corpus");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_corpus(black_box(&cfg), &k, exec).unwrap())
        });
    }
    g.finish();

    let trips: Vec<_> = generate_corpus(&cfg, &k, Execution::Parallel)
        .unwrap()
        .into_iter()
        .map(|t| t.trip)
        .collect();
    let ecfg = ExtractionConfig::default();
    let mut g = c.benchmark_group("extract_corpus");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| extract_corpus(black_box(&trips), &ecfg, exec))
        });
    }
    g.finish();

    let (mlc, dlc) = (durations(640, 1), durations(2035, 2));
    let mut g = c.benchmark_group("duration_comparison");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| duration_comparison(black_box(&mlc), &dlc, exec).unwrap())
        });
    }
    g.finish();

    let samples: Vec<BehaviorSample> = durations(500, 3)
        .into_iter()
        .enumerate()
        .map(|(i, d)| BehaviorSample {
            durations: d,
            gap: Some((5.0 + (i % 50) as f64, -3.0 + (i % 7) as f64)),
        })
        .collect();
    let model = fit_behavior_model(&samples, Classification::Mlc, GapModelKind::Fitted).unwrap();
    let mut g = c.benchmark_group("sample_scenarios");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = SamplerOptions { exec, ..SamplerOptions::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_scenarios(black_box(&model), 20_000, 7, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
