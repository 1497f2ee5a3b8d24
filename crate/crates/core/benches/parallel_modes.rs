//! Sequential vs. parallel execution of the data-parallel hot paths.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use atlas_core::ann::kmeans::{kmeans, KMeansParams};
use atlas_core::ann::{IdMatrix, IvfPqIndex, IvfPqParams};
use atlas_core::dedup::{dedup, DedupParams};
use atlas_core::layout::{density_grid, knn_graph, layout_rows, LayoutParams};
use atlas_core::parallel::{set_mode, Mode};
use atlas_core::store::EmbeddingMatrix;

const DIM: usize = 64;
const MODES: [(&str, Mode); 2] = [("sequential", Mode::Sequential), ("parallel", Mode::Parallel)];

fn matrix(n: usize, seed: u64) -> EmbeddingMatrix {
    EmbeddingMatrix::new(DIM, oracles::unit_vectors(n, DIM, seed)).unwrap()
}

fn bench_modes(c: &mut Criterion, name: &str, mut body: impl FnMut()) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10).measurement_time(Duration::from_secs(5));
    for (label, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            set_mode(mode);
            b.iter(&mut body);
        });
    }
    group.finish();
    set_mode(Mode::Parallel);
}

fn kmeans_bench(c: &mut Criterion) {
    let data = matrix(20_000, 1);
    let params = KMeansParams::new(64, 10, 0);
    bench_modes(c, "kmeans", || {
        black_box(kmeans(data.as_slice(), DIM, &params).unwrap());
    });
}

fn index_add_bench(c: &mut Criterion) {
    let data = IdMatrix::sequential(matrix(20_000, 2));
    let params = IvfPqParams {
        nlist: 64,
        m: 8,
        train_iters: 5,
        ..IvfPqParams::default()
    };
    let trained = IvfPqIndex::train(params, data.matrix()).unwrap();
    bench_modes(c, "index_add", || {
        let mut index = trained.clone();
        index.add(data.ids(), data.matrix()).unwrap();
        black_box(index);
    });
}

fn dedup_bench(c: &mut Criterion) {
    let data = matrix(4_000, 3);
    let params = DedupParams::exact(0.7);
    bench_modes(c, "dedup_exact", || {
        black_box(dedup(&data, &params).unwrap());
    });
}

fn knn_bench(c: &mut Criterion) {
    let data = matrix(4_000, 4);
    bench_modes(c, "knn_graph", || {
        black_box(knn_graph(data.as_slice(), DIM, 15).unwrap());
    });
}

fn layout_bench(c: &mut Criterion) {
    let data = matrix(2_000, 5);
    let params = LayoutParams {
        epochs: 50,
        ..LayoutParams::default()
    };
    bench_modes(c, "layout", || {
        black_box(layout_rows(data.as_slice(), DIM, &params).unwrap());
    });
}

fn grid_bench(c: &mut Criterion) {
    let raw = oracles::unit_vectors(200_000, 2, 6);
    let points: Vec<[f32; 2]> = raw.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
    bench_modes(c, "density_grid", || {
        black_box(density_grid(&points, 2000).unwrap());
    });
}

criterion_group!(
    benches,
    kmeans_bench,
    index_add_bench,
    dedup_bench,
    knn_bench,
    layout_bench,
    grid_bench
);
criterion_main!(benches);
