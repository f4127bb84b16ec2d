use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maxzero::bootstrap::{max_bootstrap, wald_bootstrap, BootstrapConfig};
use maxzero::dgp::gen_dataset;
use maxzero::estimation::{fit_all_parsimonious, SeFlavor};
use maxzero::inference::WeightScheme;
use maxzero::model::linear_response;
use maxzero::numerics::RngStream;
use maxzero_bench::{dataset, spec};

const SHAPES: [(usize, usize, usize); 3] = [(100, 10, 35), (250, 0, 35), (1000, 10, 150)];

fn label((n, kd, k): (usize, usize, usize)) -> String {
    format!("n{n}_kd{kd}_k{k}")
}

fn generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate");
    for shape in SHAPES {
        let s = spec(shape.0, shape.1, shape.2);
        group.bench_function(BenchmarkId::from_parameter(label(shape)), |b| {
            b.iter(|| gen_dataset(&s, &mut RngStream::new(1, 0)).unwrap())
        });
    }
    group.finish();
}

fn parsimonious_fits(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_all_parsimonious");
    for shape in SHAPES {
        let data = dataset(shape.0, shape.1, shape.2);
        let model = linear_response(shape.1);
        group.bench_function(BenchmarkId::from_parameter(label(shape)), |b| {
            b.iter(|| fit_all_parsimonious(&data, &model, shape.2, SeFlavor::Robust).unwrap())
        });
    }
    group.finish();
}

fn bootstraps(c: &mut Criterion) {
    let mut group = c.benchmark_group("bootstrap_m200");
    group.sample_size(20);
    let cfg = BootstrapConfig::new(200, 7);
    for shape in SHAPES {
        let data = dataset(shape.0, shape.1, shape.2);
        let model = linear_response(shape.1);
        group.bench_function(BenchmarkId::new("max_t", label(shape)), |b| {
            b.iter(|| max_bootstrap(&data, &model, shape.2, WeightScheme::InvSe, SeFlavor::Homoskedastic, &cfg).unwrap())
        });
        if shape.0 > shape.1 + shape.2 + 1 {
            group.bench_function(BenchmarkId::new("wald", label(shape)), |b| {
                b.iter(|| wald_bootstrap(&data, &model, shape.2, SeFlavor::Homoskedastic, &cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, generation, parsimonious_fits, bootstraps);
criterion_main!(benches);
