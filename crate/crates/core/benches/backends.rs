//! Sequential versus parallel execution of the data-parallel kernels.
//!
//! Both backends return bit-identical results; only wall time differs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dpgs::bench::{plant_gmm, PlantedGmmSpec};
use dpgs::exec::Backend;
use dpgs::kmeans::{assign_and_count_with, cluster_sums_with};
use dpgs::pipeline::vote_histogram_with;
use dpgs::rng::stream;
use dpgs::{sample_gmm, EmbeddingDataset};

const BACKENDS: [(&str, Backend); 2] = [("sequential", Backend::Sequential), ("parallel", Backend::Parallel)];

fn planted() -> (EmbeddingDataset, Vec<Vec<f64>>) {
    let spec = PlantedGmmSpec::reference();
    let data = plant_gmm(&spec, &mut stream(0, "bench")).unwrap();
    let centers = data.classes.iter().flat_map(|c| c.truth.means().to_vec()).collect();
    (data.dataset().unwrap(), centers)
}

fn lloyd_kernels(c: &mut Criterion) {
    let (ds, centers) = planted();
    let mut group = c.benchmark_group("lloyd");
    group.throughput(Throughput::Elements(ds.len() as u64));
    for (name, backend) in BACKENDS {
        group.bench_with_input(BenchmarkId::new("assign_and_count", name), &backend, |b, &be| {
            b.iter(|| assign_and_count_with(be, black_box(&ds), &centers))
        });
        group.bench_with_input(BenchmarkId::new("cluster_sums", name), &backend, |b, &be| {
            b.iter(|| cluster_sums_with(be, black_box(ds.as_slice()), ds.dim(), &centers))
        });
    }
    group.finish();
}

fn vote_kernel(c: &mut Criterion) {
    let data = plant_gmm(
        &PlantedGmmSpec {
            n_per_class: 5000,
            classes: 1,
            ..PlantedGmmSpec::reference()
        },
        &mut stream(1, "bench"),
    )
    .unwrap();
    let class = &data.classes[0];
    let generated = sample_gmm(&class.truth, 6000, &mut stream(2, "bench")).unwrap();
    let mut group = c.benchmark_group("votes");
    group.sample_size(10);
    group.throughput(Throughput::Elements((generated.len() * class.samples.len()) as u64));
    for (name, backend) in BACKENDS {
        group.bench_with_input(BenchmarkId::new("vote_histogram", name), &backend, |b, &be| {
            b.iter(|| vote_histogram_with(be, black_box(&generated), &class.samples).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, lloyd_kernels, vote_kernel);
criterion_main!(benches);
