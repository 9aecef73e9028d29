use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use scorekit::eval::fit_magsac_to_gau;
use scorekit::learnscore::fit_inlier_density;
use scorekit::localopt::{irls_lma, LmaConfig};
use scorekit::scoring::{histogram_residuals, score_residuals, ScoreMatrix};
use scorekit::{ResidualHistogram, ScoreFamily, ScoreSpec};
use scorekit_bench::{pool_residuals, scene_and_pool, thresholds};

fn direct_scoring(c: &mut Criterion) {
    let (scene, pool) = scene_and_pool(1000, 200);
    let rvs = pool_residuals(&scene, &pool);
    let mut g = c.benchmark_group("score_pool_1000x200");
    for family in [ScoreFamily::Msac, ScoreFamily::GauMarginal, ScoreFamily::MagsacPlusPlus] {
        let spec = ScoreSpec::for_family(family, 3.0).unwrap();
        g.bench_function(family.name(), |b| {
            b.iter(|| rvs.iter().map(|rv| score_residuals(&spec, black_box(rv))).sum::<f64>())
        });
    }
    g.finish();
}

fn histogram_sweep(c: &mut Criterion) {
    let (scene, pool) = scene_and_pool(1000, 200);
    let rvs = pool_residuals(&scene, &pool);
    let th = thresholds(200);
    let specs: Vec<ScoreSpec> = th.iter().map(|&t| ScoreSpec::gau_marginal(t).unwrap()).collect();
    let w = ScoreMatrix::from_specs(&specs, 40.0, 2000).unwrap();
    let hists: Vec<ResidualHistogram> = rvs.iter().map(|rv| histogram_residuals(rv, 40.0, 2000).unwrap()).collect();
    c.bench_function("histogram_build_1000", |b| b.iter(|| histogram_residuals(black_box(&rvs[0]), 40.0, 2000).unwrap()));
    c.bench_function("sweep_200_thresholds_x200_models", |b| {
        b.iter(|| hists.iter().map(|h| w.sweep(black_box(h)).unwrap()[0]).sum::<f64>())
    });
}

fn local_optimization(c: &mut Criterion) {
    let (scene, _) = scene_and_pool(500, 1);
    let spec = ScoreSpec::msac(3.0).unwrap();
    let cfg = LmaConfig::default();
    let start = scorekit::synth::perturb_model(&scene.gt_pose, scorekit::synth::PerturbMode::RandomRot, 3.0, 5).unwrap();
    c.bench_function("irls_lma_500", |b| {
        b.iter(|| irls_lma(&spec, black_box(&start), &scene.correspondences, &cfg, scene.config.focal()).unwrap())
    });
}

fn fits(c: &mut Criterion) {
    let (scene, _) = scene_and_pool(2000, 1);
    let rv = scorekit::geometry::residual_vector(&scene.gt_model, &scene.correspondences);
    let hist = histogram_residuals(&rv, 10.0, 500).unwrap();
    let mut g = c.benchmark_group("fits");
    g.sample_size(10);
    g.bench_function("learned_density_3000_iters", |b| b.iter(|| fit_inlier_density(black_box(&hist), 0.8, 3000).unwrap()));
    g.bench_function("magsac_to_gau_nu4", |b| b.iter(|| fit_magsac_to_gau(black_box(4)).unwrap()));
    g.finish();
}

criterion_group!(benches, direct_scoring, histogram_sweep, local_optimization, fits);
criterion_main!(benches);
