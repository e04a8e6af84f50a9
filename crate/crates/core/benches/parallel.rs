use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use signform_core::phonesthemes::{self, MineOptions};
use signform_core::phonolm::{self, Conditioning, H0Target, LmConfig, LmParameters};
use signform_core::rng::{self, stream};
use signform_core::{semspace, stats};
use signform_core::synthbench::SyntheticSpec;
use signform_core::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn permutation(c: &mut Criterion) {
    let mut r = rng::rng_for(1, stream::SYNTH, 0);
    let deltas: Vec<f64> = (0..5_000).map(|_| r.random_range(-1.0..1.2)).collect();
    let mut g = c.benchmark_group("permutation_test");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| stats::permutation_test_with(&deltas, 10_000, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn evaluate(c: &mut Criterion) {
    let spec = SyntheticSpec::two_cluster();
    let g = spec.generate(5_000, 3, "bench").unwrap();
    let cfg = LmConfig {
        layers: 1,
        hidden_size: 32,
        phone_embed_size: 8,
        dropout: 0.0,
        pca_d: 2,
        condition_on: Conditioning::Meaning,
        h0_target: H0Target::FirstLayer,
    };
    let idx: Vec<usize> = (0..g.lexicon.len()).collect();
    let meanings: Vec<Vec<f64>> = g.lexicon.signs.iter().map(|s| s.meaning.clone()).collect();
    let pca = semspace::pca_fit(&meanings, 2).unwrap();
    let examples = phonolm::examples_for(&g.lexicon, &idx, &cfg, Some(&pca)).unwrap();
    let params = LmParameters::init(&cfg, g.lexicon.inventory.len(), 1, 5, 0.1).unwrap();
    let mut grp = c.benchmark_group("evaluate");
    grp.sample_size(10);
    for (name, exec) in MODES {
        grp.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| phonolm::evaluate_with(&params, &cfg, &examples, false, exec).unwrap())
        });
    }
    grp.finish();
}

fn phonestheme_mining(c: &mut Criterion) {
    let spec = SyntheticSpec::planted_prefix(8, 5, 1, 0.1, vec![2, 3]);
    let g = spec.generate(3_000, 9, "bench").unwrap();
    let idx: Vec<usize> = (0..g.lexicon.len()).collect();
    let (u, m) = spec.exact_losses(&g, &idx);
    let opts = MineOptions { k_min: 1, k_max: 2, min_count: 20, n_samples: 5_000, ..Default::default() };
    let mut grp = c.benchmark_group("phonestheme_mining");
    grp.sample_size(10);
    for (name, exec) in MODES {
        grp.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| phonesthemes::mine_with(&g.lexicon, Some((&u, &m)), None, &opts, 11, exec).unwrap())
        });
    }
    grp.finish();
}

criterion_group!(benches, permutation, evaluate, phonestheme_mining);
criterion_main!(benches);
