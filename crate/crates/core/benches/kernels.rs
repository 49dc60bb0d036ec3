//! Kernel benchmarks. Each kernel runs on a single-thread pool and on the
//! default pool; build with `--no-default-features` for the sequential
//! fallback. The group name records which build produced the numbers.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use matforge::bake::{bake, BakeSettings};
use matforge::denoiser::{Denoiser, DenoiserConfig};
use matforge::mesh::primitives;
use matforge::nn::{attention, matmul, randn};
use matforge::par::with_threads;
use matforge::pipeline::{condition_rig, render_rig};
use matforge::render::{make_view_set, rasterize_gbuffer, sample_material_views};
use matforge::train::dataset::detail_checker_asset;
use matforge::train::DatasetSpec;

const BUILD: &str = if cfg!(feature = "parallel") {
    "rayon"
} else {
    "sequential"
};
const POOLS: [(&str, usize); 2] = [("1-thread", 1), ("default", 0)];

fn group_name(kernel: &str) -> String {
    format!("{kernel}/{BUILD}")
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = randn(&[384, 64], 1.0, &mut rng);
    let b = randn(&[64, 256], 1.0, &mut rng);
    let mut g = c.benchmark_group(group_name("matmul_384x64x256"));
    for (name, threads) in POOLS {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            with_threads(threads, || bench.iter(|| matmul(black_box(&a), black_box(&b)).unwrap()))
        });
    }
    g.finish();
}

fn bench_attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = randn(&[192, 64], 1.0, &mut rng);
    let k = randn(&[192, 64], 1.0, &mut rng);
    let v = randn(&[192, 64], 1.0, &mut rng);
    let mut g = c.benchmark_group(group_name("attention_192"));
    for (name, threads) in POOLS {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            with_threads(threads, || bench.iter(|| attention(black_box(&q), &k, &v, 64).unwrap()))
        });
    }
    g.finish();
}

fn bench_rasterize(c: &mut Criterion) {
    let mesh = primitives::icosphere(4);
    let cameras = make_view_set(6, 256).unwrap();
    let mut g = c.benchmark_group(group_name("rasterize_6x256"));
    for (name, threads) in POOLS {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            with_threads(threads, || {
                bench.iter(|| {
                    for cam in &cameras {
                        black_box(rasterize_gbuffer(&mesh, cam).unwrap());
                    }
                })
            })
        });
    }
    g.finish();
}

fn bench_bake(c: &mut Criterion) {
    let spec = DatasetSpec::default();
    let asset = detail_checker_asset(&spec, 0).unwrap();
    let cameras = make_view_set(6, 128).unwrap();
    let views = sample_material_views(&asset.mesh, &asset.material, &cameras).unwrap();
    let settings = BakeSettings::new(256);
    let mut g = c.benchmark_group(group_name("bake_256"));
    g.sample_size(10);
    for (name, threads) in POOLS {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            with_threads(threads, || {
                bench.iter(|| bake(&asset.mesh, &views, &cameras, &settings).unwrap())
            })
        });
    }
    g.finish();
}

fn bench_velocity(c: &mut Criterion) {
    let cfg = DenoiserConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Denoiser::new(cfg.clone(), &mut rng).unwrap();
    let rig = render_rig(&primitives::cube(), cfg.views, cfg.image_size * 2).unwrap();
    let cond = condition_rig(&cfg, &rig, None).unwrap();
    let state = matforge::denoiser::sample::initial_noise(&model, 0);
    let mut g = c.benchmark_group(group_name("denoiser_velocity"));
    g.sample_size(20);
    for (name, threads) in POOLS {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            with_threads(threads, || {
                bench.iter(|| model.velocity(black_box(&state), 0.5, &cond).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    bench_matmul,
    bench_attention,
    bench_rasterize,
    bench_bake,
    bench_velocity
);
criterion_main!(benches);
