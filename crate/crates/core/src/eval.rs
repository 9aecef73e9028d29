//! Evaluation methodology: error grids over thresholds, validation sweeps,
//! small-validation sensitivity, summary metrics, the MAGSAC++ to GaU fit,
//! and the consistency / selectivity experiments.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{g_function, MarginalizedChiSpec};
use crate::error::{invalid, Error, Result};
use crate::geometry::{residual_vector, residuals_of, ModelKind, Pose};
use crate::rng::{derive_seed, seeded};
use crate::scoring::{
    rho, score_residuals, select_best, sigmoid, ResidualHistogram, ScoreFamily, ScoreMatrix, ScoreSpec,
    MAGSAC_QUANTILE,
};
use crate::synth::{model_error, model_for_pose, perturb_with_axis, ModelPool, PerturbMode, SyntheticScene};

/// A model-selection method evaluated on an error grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum Method {
    /// Per-instance minimum error over the pool.
    Oracle,
    Score {
        family: ScoreFamily,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nu: Option<u32>,
    },
}

impl Method {
    pub fn score(family: ScoreFamily) -> Self {
        Method::Score { family, nu: None }
    }

    pub fn spec(&self, tau: f64) -> Result<ScoreSpec> {
        match self {
            Method::Oracle => Err(invalid("the oracle has no score")),
            Method::Score { family, nu } => ScoreSpec::with_params(*family, tau, None, *nu),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Method::Oracle => "oracle".into(),
            Method::Score { family, .. } => family.name().into(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("oracle") {
            return Ok(Method::Oracle);
        }
        let family: ScoreFamily = s.parse()?;
        if family == ScoreFamily::Learned {
            return Err(invalid("learned tables have a fixed threshold and cannot be swept"));
        }
        Ok(Method::score(family))
    }
}

/// `T` thresholds log-spaced over `[lo, hi]`.
pub fn log_thresholds(lo: f64, hi: f64, t: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && t >= 2) {
        return Err(invalid("need 0 < lo < hi and at least two thresholds"));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..t).map(|i| (a + (b - a) * i as f64 / (t - 1) as f64).exp()).collect())
}

/// Default threshold grid: 200 values over [0.1, 10] px.
pub fn default_thresholds() -> Vec<f64> {
    log_thresholds(0.1, 10.0, 200).expect("valid default grid")
}

/// Histogram discretization used by the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub tau_max: f64,
    pub k: usize,
}

impl GridConfig {
    /// `tau_max` = 4 × the largest threshold (covers the GaU tail), 1000 bins.
    pub fn for_thresholds(thresholds: &[f64]) -> Self {
        let hi = thresholds.iter().cloned().fold(0.0, f64::max);
        Self {
            tau_max: 4.0 * hi,
            k: 1000,
        }
    }
}

/// Pose errors (degrees) of the selected model per instance and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorGrid {
    pub method: String,
    pub instance_ids: Vec<String>,
    pub thresholds: Vec<f64>,
    /// `instances × T`.
    pub errors: Vec<Vec<f64>>,
}

impl ErrorGrid {
    pub fn new(method: String, instance_ids: Vec<String>, thresholds: Vec<f64>, errors: Vec<Vec<f64>>) -> Result<Self> {
        if instance_ids.len() != errors.len() {
            return Err(invalid("one error row per instance is required"));
        }
        if errors.iter().any(|row| row.len() != thresholds.len()) {
            return Err(invalid("error rows must have one entry per threshold"));
        }
        if errors.iter().flatten().any(|e| e.is_nan() || *e < 0.0) {
            return Err(invalid("errors must be non-negative"));
        }
        Ok(Self {
            method,
            instance_ids,
            thresholds,
            errors,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.errors.len()
    }

    /// Median over instances, per threshold.
    pub fn median_curve(&self) -> Vec<f64> {
        median_curve_of(&self.errors, (0..self.n_instances()).collect::<Vec<_>>().as_slice(), self.thresholds.len())
    }
}

fn median_curve_of(errors: &[Vec<f64>], rows: &[usize], t: usize) -> Vec<f64> {
    let mut col = Vec::with_capacity(rows.len());
    (0..t)
        .map(|j| {
            col.clear();
            col.extend(rows.iter().map(|&i| errors[i][j]));
            lower_median(&mut col)
        })
        .collect()
}

/// Lower middle element for even lengths; NaN for an empty slice.
pub fn lower_median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mid = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Index of the smallest value, lowest index on ties.
fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Per-pool precomputation shared by every method: model errors and one
/// residual histogram per model.
struct PoolData {
    errors: Vec<f64>,
    hists: Vec<ResidualHistogram>,
}

fn pool_data(scene: &SyntheticScene, pool: &ModelPool, grid: &GridConfig) -> Result<PoolData> {
    if pool.is_empty() {
        return Err(Error::Empty("model pool"));
    }
    let mut errors = Vec::with_capacity(pool.len());
    let mut hists = Vec::with_capacity(pool.len());
    for m in &pool.models {
        errors.push(model_error(scene, m)?);
        let mut h = ResidualHistogram::empty(grid.tau_max, grid.k)?;
        for r in residual_vector(m, &scene.correspondences).values {
            h.add(r);
        }
        hists.push(h);
    }
    Ok(PoolData { errors, hists })
}

fn grid_row(data: &PoolData, method: &Method, matrix: Option<&ScoreMatrix>, t: usize) -> Result<Vec<f64>> {
    match (method, matrix) {
        (Method::Oracle, _) => {
            let best = data.errors.iter().cloned().fold(f64::INFINITY, f64::min);
            Ok(vec![best; t])
        }
        (_, Some(w)) => {
            // running argmax per threshold; ties keep the lowest model index
            let mut best = vec![f64::NEG_INFINITY; t];
            let mut idx = vec![0usize; t];
            let mut scores = vec![0.0; t];
            for (m, h) in data.hists.iter().enumerate() {
                w.sweep_into(h, &mut scores)?;
                for j in 0..t {
                    if scores[j] > best[j] {
                        best[j] = scores[j];
                        idx[j] = m;
                    }
                }
            }
            Ok(idx.iter().map(|&i| data.errors[i]).collect())
        }
        _ => Err(invalid("missing score matrix")),
    }
}

fn method_matrix(method: &Method, thresholds: &[f64], grid: &GridConfig) -> Result<Option<ScoreMatrix>> {
    match method {
        Method::Oracle => Ok(None),
        m => {
            let specs = thresholds.iter().map(|&t| m.spec(t)).collect::<Result<Vec<_>>>()?;
            Ok(Some(ScoreMatrix::from_specs(&specs, grid.tau_max, grid.k)?))
        }
    }
}

/// Error grids for several methods sharing one pass over the pools.
pub fn precompute_error_grids(
    scenes: &[SyntheticScene],
    pools: &[ModelPool],
    methods: &[Method],
    thresholds: &[f64],
    grid: &GridConfig,
) -> Result<Vec<ErrorGrid>> {
    let sweeps: Vec<(Method, Vec<f64>)> = methods.iter().map(|m| (*m, thresholds.to_vec())).collect();
    precompute_error_grids_with(scenes, pools, &sweeps, grid)
}

/// Like [`precompute_error_grids`] with a threshold list per method.
pub fn precompute_error_grids_with(
    scenes: &[SyntheticScene],
    pools: &[ModelPool],
    sweeps: &[(Method, Vec<f64>)],
    grid: &GridConfig,
) -> Result<Vec<ErrorGrid>> {
    if scenes.len() != pools.len() {
        return Err(invalid("one pool per scene is required"));
    }
    if sweeps.iter().any(|(_, t)| t.is_empty()) {
        return Err(Error::Empty("thresholds"));
    }
    let matrices = sweeps
        .iter()
        .map(|(m, t)| method_matrix(m, t, grid))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<Vec<f64>>> = scenes
        .par_iter()
        .zip(pools.par_iter())
        .map(|(scene, pool)| {
            let data = pool_data(scene, pool, grid)?;
            sweeps
                .iter()
                .zip(&matrices)
                .map(|((m, t), w)| grid_row(&data, m, w.as_ref(), t.len()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = scenes.iter().map(|s| s.config.seed.to_string()).collect();
    sweeps
        .iter()
        .enumerate()
        .map(|(k, (m, t))| {
            let errors = rows.iter().map(|r| r[k].clone()).collect();
            ErrorGrid::new(m.name(), ids.clone(), t.clone(), errors)
        })
        .collect()
}

pub fn precompute_error_grid(
    scenes: &[SyntheticScene],
    pools: &[ModelPool],
    method: &Method,
    thresholds: &[f64],
    grid: &GridConfig,
) -> Result<ErrorGrid> {
    Ok(precompute_error_grids(scenes, pools, std::slice::from_ref(method), thresholds, grid)?.remove(0))
}

/// Model chosen by exact per-residual scoring, without histograms.
pub fn direct_selection(scene: &SyntheticScene, pool: &ModelPool, spec: &ScoreSpec) -> Option<usize> {
    let scores: Vec<f64> = pool
        .models
        .iter()
        .map(|m| score_residuals(spec, &residual_vector(m, &scene.correspondences)))
        .collect();
    select_best(&scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub best_index: usize,
    pub best_threshold: f64,
    pub best_median: f64,
    pub curve: Vec<f64>,
}

/// Median-error curve and its minimizer (lowest threshold on ties).
pub fn large_validation(grid: &ErrorGrid) -> Result<ValidationResult> {
    if grid.n_instances() == 0 {
        return Err(Error::Empty("error grid"));
    }
    let curve = grid.median_curve();
    let best_index = argmin(&curve);
    Ok(ValidationResult {
        best_index,
        best_threshold: grid.thresholds[best_index],
        best_median: curve[best_index],
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub n_values: Vec<usize>,
    pub expected_error: Vec<f64>,
    pub error_std: Vec<f64>,
}

/// Test median at thresholds validated on `n` random validation instances,
/// averaged over `trials` draws (population standard deviation).
pub fn small_validation_sensitivity(
    val: &ErrorGrid,
    test: &ErrorGrid,
    n_values: &[usize],
    trials: usize,
    seed: u64,
) -> Result<SensitivityReport> {
    if val.thresholds != test.thresholds {
        return Err(invalid("validation and test grids must share thresholds"));
    }
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    if test.n_instances() == 0 {
        return Err(Error::Empty("test grid"));
    }
    let t = val.thresholds.len();
    let test_curve = test.median_curve();
    let mut report = SensitivityReport {
        n_values: n_values.to_vec(),
        expected_error: Vec::new(),
        error_std: Vec::new(),
    };
    for (ni, &n) in n_values.iter().enumerate() {
        if n == 0 || n > val.n_instances() {
            return Err(invalid(format!("validation size {n} outside 1..={}", val.n_instances())));
        }
        let errs: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = seeded(derive_seed(derive_seed(seed, ni as u64), trial as u64));
                let rows = sample(&mut rng, val.n_instances(), n).into_vec();
                let curve = median_curve_of(&val.errors, &rows, t);
                test_curve[argmin(&curve)]
            })
            .collect();
        // shifted by the first draw so identical draws give exactly zero spread
        let e0 = errs[0];
        let shift = errs.iter().map(|e| e - e0).sum::<f64>() / trials as f64;
        let var = errs.iter().map(|e| (e - e0 - shift).powi(2)).sum::<f64>() / trials as f64;
        report.expected_error.push(e0 + shift);
        report.error_std.push(var.sqrt());
    }
    Ok(report)
}

/// Median and mean average accuracy `mean(max(0, 1 − e/cap))`.
pub fn median_and_maa(errors: &[f64], cap: f64) -> Result<(f64, f64)> {
    if errors.is_empty() {
        return Err(Error::Empty("errors"));
    }
    if !(cap > 0.0) {
        return Err(invalid("cap must be positive"));
    }
    let mut v = errors.to_vec();
    let median = lower_median(&mut v);
    let maa = errors.iter().map(|e| (1.0 - e / cap).max(0.0)).sum::<f64>() / errors.len() as f64;
    Ok((median, maa))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagsacFit {
    pub nu: u32,
    pub kappa: f64,
    pub tau: f64,
    pub sigma: f64,
    /// Sup-norm error of the weight fit on the fitting grid.
    pub sup_err: f64,
    /// Sup-norm distance between the normalized scores on `[0, 2 kappa]`.
    pub score_gap: f64,
}

/// Least-squares fit of the GaU posterior shape
/// `sigm((τ² − x²)/2σ²) / sigm(τ²/2σ²)` to the MAGSAC++ weight
/// `G(x)/G(0)` (`sigma_bar` = 1) on 512 points over `[0, kappa]`.
pub fn fit_magsac_to_gau(nu: u32) -> Result<MagsacFit> {
    if !(2..=32).contains(&nu) {
        return Err(invalid("nu must lie in 2..=32"));
    }
    let chi = MarginalizedChiSpec::from_quantile(nu, MAGSAC_QUANTILE, 1.0)?;
    let kappa = chi.kappa();
    let xs: Vec<f64> = (0..512).map(|i| kappa * i as f64 / 511.0).collect();
    let g0 = g_function(0.0, kappa, nu);
    let target: Vec<f64> = xs.iter().map(|&x| g_function(x, kappa, nu) / g0).collect();
    let model = |tau: f64, sigma: f64, x: f64| {
        let s2 = 2.0 * sigma * sigma;
        sigmoid((tau * tau - x * x) / s2) / sigmoid(tau * tau / s2)
    };
    let sse = |tau: f64, sigma: f64| -> f64 {
        xs.iter()
            .zip(&target)
            .map(|(&x, &y)| {
                let d = model(tau, sigma, x) - y;
                d * d
            })
            .sum()
    };
    // coarse grid, then coordinate descent with shrinking steps
    let mut best = (1.0, 1.0, f64::INFINITY);
    for i in 0..=60 {
        for j in 1..=40 {
            let (tau, sigma) = (0.1 * i as f64, 0.075 * j as f64);
            let v = sse(tau, sigma);
            if v < best.2 {
                best = (tau, sigma, v);
            }
        }
    }
    let mut step = 0.05;
    while step > 1e-10 {
        let mut improved = false;
        for (dt, ds) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
            let (tau, sigma) = (best.0 + dt * step, best.1 + ds * step);
            if sigma <= 0.0 || tau < 0.0 {
                continue;
            }
            let v = sse(tau, sigma);
            if v < best.2 {
                best = (tau, sigma, v);
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let (tau, sigma) = (best.0, best.1);
    let sup_err = xs
        .iter()
        .zip(&target)
        .map(|(&x, &y)| (model(tau, sigma, x) - y).abs())
        .fold(0.0, f64::max);
    let score_gap = magsac_gau_score_gap(nu, tau, sigma)?;
    Ok(MagsacFit {
        nu,
        kappa,
        tau,
        sigma,
        sup_err,
        score_gap,
    })
}

/// Sup-norm distance between the normalized MAGSAC++ score (`sigma_bar` = 1)
/// and the normalized GaU marginal score `(tau, sigma)` on `[0, 2 kappa]`.
pub fn magsac_gau_score_gap(nu: u32, tau: f64, sigma: f64) -> Result<f64> {
    let kappa = MarginalizedChiSpec::from_quantile(nu, MAGSAC_QUANTILE, 1.0)?.kappa();
    let magsac = ScoreSpec::magsac(kappa, nu)?;
    let gau = ScoreSpec::gau_marginal_with_sigma(tau, sigma)?;
    Ok((0..=2000)
        .map(|i| {
            let r = 2.0 * kappa * i as f64 / 2000.0;
            (rho(&magsac, r) - rho(&gau, r)).abs()
        })
        .fold(0.0, f64::max))
}

fn random_axis(seed: u64) -> Vector3<f64> {
    let mut rng = seeded(seed);
    loop {
        let v = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
        if v.norm() > 1e-9 {
            return v / v.norm();
        }
    }
}

fn require_essential(scenes: &[SyntheticScene]) -> Result<()> {
    if let Some(s) = scenes.iter().find(|s| s.config.kind != ModelKind::Essential) {
        return Err(Error::KindMismatch {
            expected: ModelKind::Essential,
            got: s.config.kind,
        });
    }
    Ok(())
}

fn quality(scene: &SyntheticScene, pose: &Pose, spec: &ScoreSpec) -> Result<f64> {
    let m = model_for_pose(scene, pose)?;
    Ok(score_residuals(spec, &residuals_of(&m, scene.correspondences.items())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityCurve {
    pub mode: PerturbMode,
    /// Mean of `Q(perturbed) / Q(GT)` per angle.
    pub mean: Vec<f64>,
    /// Standard error of the mean per angle.
    pub sem: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityReport {
    pub thetas: Vec<f64>,
    pub scenes_used: usize,
    pub curves: Vec<SelectivityCurve>,
}

/// Minimum GT quality for a scene to enter the selectivity average.
pub const SELECTIVITY_MIN_GT_SCORE: f64 = 5.0;

/// Relative score of GT perturbations. Each scene draws one random axis
/// (from `seed`) used for every angle and random mode.
pub fn selectivity_experiment(
    scenes: &[SyntheticScene],
    spec: &ScoreSpec,
    modes: &[PerturbMode],
    thetas: &[f64],
    seed: u64,
) -> Result<SelectivityReport> {
    require_essential(scenes)?;
    let per_scene: Vec<Option<Vec<Vec<f64>>>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let q_gt = quality(scene, &scene.gt_pose, spec)?;
            if q_gt < SELECTIVITY_MIN_GT_SCORE {
                return Ok(None);
            }
            let axis = random_axis(derive_seed(seed, i as u64));
            modes
                .iter()
                .map(|&mode| {
                    thetas
                        .iter()
                        .map(|&th| Ok(quality(scene, &perturb_with_axis(&scene.gt_pose, mode, th, axis), spec)? / q_gt))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<&Vec<Vec<f64>>> = per_scene.iter().flatten().collect();
    let n = used.len();
    let curves = modes
        .iter()
        .enumerate()
        .map(|(mi, &mode)| {
            let (mut mean, mut sem) = (Vec::new(), Vec::new());
            for ti in 0..thetas.len() {
                let vals: Vec<f64> = used.iter().map(|s| s[mi][ti]).collect();
                let (m, s) = mean_sem(&vals);
                mean.push(m);
                sem.push(s);
            }
            SelectivityCurve { mode, mean, sem }
        })
        .collect();
    Ok(SelectivityReport {
        thetas: thetas.to_vec(),
        scenes_used: n,
        curves,
    })
}

fn mean_sem(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub error_bins: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// `bins × thresholds` mean inlier counts.
    pub mean_inliers: Vec<Vec<f64>>,
}

/// Mean number of residuals below each threshold for models at the
/// prescribed pose errors (random-axis rotations of the GT pose).
pub fn consistency_experiment(
    scenes: &[SyntheticScene],
    thresholds: &[f64],
    error_bins: &[f64],
    seed: u64,
) -> Result<ConsistencyReport> {
    require_essential(scenes)?;
    if scenes.is_empty() {
        return Err(Error::Empty("scenes"));
    }
    let per_scene: Vec<Vec<Vec<f64>>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let axis = random_axis(derive_seed(seed, i as u64));
            error_bins
                .iter()
                .map(|&e| {
                    let pose = perturb_with_axis(&scene.gt_pose, PerturbMode::RandomRot, e, axis);
                    let m = model_for_pose(scene, &pose)?;
                    let r = residuals_of(&m, scene.correspondences.items()).values;
                    Ok(thresholds
                        .iter()
                        .map(|&tau| r.iter().filter(|&&x| x < tau).count() as f64)
                        .collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scenes.len() as f64;
    let mean_inliers = (0..error_bins.len())
        .map(|b| {
            (0..thresholds.len())
                .map(|t| per_scene.iter().map(|s| s[b][t]).sum::<f64>() / n)
                .collect()
        })
        .collect();
    Ok(ConsistencyReport {
        error_bins: error_bins.to_vec(),
        thresholds: thresholds.to_vec(),
        mean_inliers,
    })
}
