use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cbir_core::exec::Execution;
use cbir_core::model::{embed_all, EmbeddingModel, ModelConfig};
use cbir_core::pipeline::{generate_synthetic, SyntheticConfig};
use cbir_core::ratings::{set_distance_matrix_with, CharacteristicSchema};
use cbir_core::retrieval::EmbeddingIndex;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn bench(c: &mut Criterion) {
    let syn = generate_synthetic(
        600,
        &CharacteristicSchema::default(),
        &SyntheticConfig::default(),
        1,
    )
    .unwrap();
    let ds = &syn.dataset;
    let all: Vec<usize> = (0..ds.len()).collect();
    let sets = ds.rating_sets(&all);
    let inputs = ds.inputs(&all);
    let model = EmbeddingModel::init(ModelConfig::features(32, vec![64], 128, 1)).unwrap();
    let emb = embed_all(&model, &inputs, Execution::Parallel).unwrap();
    let index = EmbeddingIndex::new(
        ds.ids(&all),
        (0..emb.rows()).map(|i| emb.row(i).to_vec()).collect(),
    )
    .unwrap();

    let mut g = c.benchmark_group("rating_distance_matrix_600");
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| set_distance_matrix_with(&sets, m).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("k_occurrences_600_k17");
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| index.k_occurrences_with(17, m).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("embed_600");
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| embed_all(&model, &inputs, m).unwrap())
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench
}
criterion_main!(benches);
