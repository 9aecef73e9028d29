//! Fixtures shared by the criterion benchmarks.

use scorekit::eval::log_thresholds;
use scorekit::geometry::residual_vector;
use scorekit::synth::{generate_pool, generate_scene, PoolMix};
use scorekit::{ModelKind, ModelPool, ResidualVector, SceneConfig, SyntheticScene};

/// An essential-matrix scene with `n` correspondences and its pool.
pub fn scene_and_pool(n: usize, m: usize) -> (SyntheticScene, ModelPool) {
    let scene = generate_scene(&SceneConfig::new(ModelKind::Essential, n, 0.8, 1.0, 11)).expect("valid config");
    let pool = generate_pool(&scene, m, &PoolMix::minimal_only(), 12).expect("valid mix");
    (scene, pool)
}

/// Residuals of every pool model.
pub fn pool_residuals(scene: &SyntheticScene, pool: &ModelPool) -> Vec<ResidualVector> {
    pool.models.iter().map(|m| residual_vector(m, &scene.correspondences)).collect()
}

pub fn thresholds(t: usize) -> Vec<f64> {
    log_thresholds(0.1, 10.0, t).expect("valid range")
}
