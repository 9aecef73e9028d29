//! Subcommand parameters and implementations.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use scorekit::eval::{
    consistency_experiment, fit_magsac_to_gau, large_validation, log_thresholds, median_and_maa,
    precompute_error_grids_with, selectivity_experiment, small_validation_sensitivity, ErrorGrid, GridConfig, Method,
};
use scorekit::geometry::{decompose_essential, residual_vector};
use scorekit::io::{
    load_error_grid, read_json, save_error_grid, write_correspondences_csv, write_curve_csv, write_json,
    write_report_json, write_sweep_csv, write_trace_csv,
};
use scorekit::learnscore::{equivalent_threshold, fit_inlier_density_with, learned_score_table, DEFAULT_R_MAX};
use scorekit::localopt::{irls_lma, irls_lma_homography, LmaConfig};
use scorekit::rng::derive_seed;
use scorekit::scoring::{rho, score_residuals, select_best, ResidualHistogram, MAGSAC_QUANTILE};
use scorekit::synth::{generate_pool, generate_scene, model_error, PerturbMode, PoolMix};
use scorekit::{pose_error, ModelKind, ModelPool, SceneConfig, ScoreFamily, ScoreSpec, ScoreTable, SyntheticScene};

use crate::config::{required, usage, ConfigFile};

/// Resolved global settings.
pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
    pub config: ConfigFile,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn parse_kind(s: &str) -> anyhow::Result<ModelKind> {
    match s.to_ascii_lowercase().as_str() {
        "essential" | "e" => Ok(ModelKind::Essential),
        "homography" | "h" => Ok(ModelKind::Homography),
        other => Err(usage(format!("unknown kind `{other}` (expected essential or homography)"))),
    }
}

fn parse_methods(names: &[String]) -> anyhow::Result<Vec<Method>> {
    names
        .iter()
        .map(|n| n.parse::<Method>().map_err(|e| usage(e.to_string())))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PoolFile {
    scene_seed: u64,
    pool: ModelPool,
}

fn scene_name(i: usize) -> String {
    format!("scene_{i:04}.json")
}

fn numbered(dir: &Path, prefix: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_scenes(dir: &Path) -> anyhow::Result<Vec<SyntheticScene>> {
    let files = numbered(dir, "scene_")?;
    if files.is_empty() {
        bail!("no scene_*.json files in {}", dir.display());
    }
    files
        .iter()
        .map(|p| read_json(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn load_pools(dir: &Path, scenes: &[SyntheticScene]) -> anyhow::Result<Vec<ModelPool>> {
    let files = numbered(dir, "pool_")?;
    if files.len() != scenes.len() {
        bail!("{} pool files for {} scenes", files.len(), scenes.len());
    }
    files
        .iter()
        .zip(scenes)
        .map(|(p, s)| {
            let f: PoolFile = read_json(p).with_context(|| format!("reading {}", p.display()))?;
            if f.scene_seed != s.config.seed {
                bail!("{} was generated for scene seed {}, not {}", p.display(), f.scene_seed, s.config.seed);
            }
            Ok(f.pool)
        })
        .collect()
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    /// Model kind: essential or homography.
    #[arg(long)]
    pub kind: Option<String>,
    /// Correspondences per scene.
    #[arg(long)]
    pub n: Option<usize>,
    /// Inlier ratio in (0, 1]. Default 0.8.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Inlier noise scale in pixels. Default 1.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Image width and height in pixels. Default 1000.
    #[arg(long)]
    pub extent: Option<f64>,
    /// Focal length in pixels. Default: the image extent.
    #[arg(long)]
    pub focal: Option<f64>,
    /// Number of scenes. Default 1.
    #[arg(long)]
    pub count: Option<usize>,
}

pub fn synth(ctx: &Context, a: SynthArgs) -> anyhow::Result<()> {
    let kind = parse_kind(&required(a.kind, "kind")?)?;
    let n = required(a.n, "n")?;
    let count = a.count.unwrap_or(1);
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    for i in 0..count {
        let seed = if count == 1 { ctx.seed } else { derive_seed(ctx.seed, i as u64) };
        let mut cfg = SceneConfig::new(kind, n, a.gamma.unwrap_or(0.8), a.sigma.unwrap_or(1.0), seed);
        if let Some(e) = a.extent {
            cfg.image_extent = e;
        }
        cfg.focal = a.focal;
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        let scene = generate_scene(&cfg)?;
        write_json(&ctx.path(&scene_name(i)), &scene)?;
        write_correspondences_csv(File::create(ctx.path(&format!("correspondences_{i:04}.csv")))?, &scene.correspondences)?;
    }
    println!(
        "synth: {count} scene(s), kind={}, n={n}, gamma={}, sigma={}",
        match kind {
            ModelKind::Homography => "homography",
            _ => "essential",
        },
        a.gamma.unwrap_or(0.8),
        a.sigma.unwrap_or(1.0)
    );
    Ok(())
}

// ---------------------------------------------------------------- pool

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolArgs {
    /// Directory holding scene_*.json files.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Models per pool. Default 1000.
    #[arg(long)]
    pub m: Option<usize>,
    /// Fraction of minimal-sample models. Default 1.
    #[arg(long)]
    pub minimal: Option<f64>,
    /// Fraction of GT perturbations. Default 0.
    #[arg(long)]
    pub perturbation: Option<f64>,
    /// Fraction of GT copies. Default 0.
    #[arg(long)]
    pub ground_truth: Option<f64>,
    /// Largest perturbation angle in degrees. Default 10.
    #[arg(long)]
    pub theta_max: Option<f64>,
}

pub fn pool(ctx: &Context, a: PoolArgs) -> anyhow::Result<()> {
    let scenes = load_scenes(&required(a.scenes, "scenes")?)?;
    let mix = PoolMix {
        minimal: a.minimal.unwrap_or(1.0),
        perturbation: a.perturbation.unwrap_or(0.0),
        ground_truth: a.ground_truth.unwrap_or(0.0),
        theta_max: a.theta_max.unwrap_or(10.0),
    };
    let m = a.m.unwrap_or(1000);
    mix.counts(m).map_err(|e| usage(e.to_string()))?;
    for (i, s) in scenes.iter().enumerate() {
        let pool = generate_pool(s, m, &mix, derive_seed(ctx.seed, s.config.seed))?;
        write_json(
            &ctx.path(&format!("pool_{i:04}.json")),
            &PoolFile {
                scene_seed: s.config.seed,
                pool,
            },
        )?;
    }
    println!("pool: {} pools of {m} models", scenes.len());
    Ok(())
}

// ---------------------------------------------------------------- score

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreArgs {
    /// Scene JSON file.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Pool JSON file; the GT model is scored when omitted.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Score family.
    #[arg(long)]
    pub family: Option<ScoreFamily>,
    /// Decision threshold in pixels (the support for MAGSAC++).
    #[arg(long)]
    pub tau: Option<f64>,
    /// GaU scale. Default: tau.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// MAGSAC++ degrees of freedom. Default 4.
    #[arg(long)]
    pub nu: Option<u32>,
    /// Score table JSON for the learned family.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Sweep `lo,hi,count` thresholds for the selected model and write sweep.csv.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
}

fn build_spec(family: ScoreFamily, tau: Option<f64>, sigma: Option<f64>, nu: Option<u32>, table: Option<&Path>) -> anyhow::Result<ScoreSpec> {
    if family == ScoreFamily::Learned {
        let table: ScoreTable = read_json(&required(table.map(Path::to_path_buf), "table")?)?;
        return Ok(match tau {
            Some(t) => ScoreSpec::learned_with_tau(table, t)?,
            None => ScoreSpec::learned(table)?,
        });
    }
    ScoreSpec::with_params(family, required(tau, "tau")?, sigma, nu).map_err(|e| usage(e.to_string()))
}

pub fn score(ctx: &Context, a: ScoreArgs) -> anyhow::Result<()> {
    let scene: SyntheticScene = read_json(&required(a.scene, "scene")?)?;
    let family = required(a.family, "family")?;
    let spec = build_spec(family, a.tau, a.sigma, a.nu, a.table.as_deref())?;
    let pool = match &a.pool {
        Some(p) => read_json::<PoolFile>(p)?.pool,
        None => ModelPool::new(vec![scene.gt_model], vec![scorekit::Provenance::GroundTruth])?,
    };
    let scores: Vec<f64> = pool
        .models
        .iter()
        .map(|m| score_residuals(&spec, &residual_vector(m, &scene.correspondences)))
        .collect();
    let best = select_best(&scores).context("no finite score")?;
    let error = model_error(&scene, &pool.models[best])?;
    let report = json!({
        "family": family,
        "tau": spec.tau(),
        "scores": scores,
        "best_index": best,
        "best_error": error,
    });
    write_report_json(&ctx.path("score.json"), &report)?;
    if let Some(sw) = a.sweep {
        if sw.len() != 3 || sw[2].fract() != 0.0 {
            return Err(usage("--sweep takes lo,hi,count with an integer count"));
        }
        let count = sw[2] as usize;
        let th = log_thresholds(sw[0], sw[1], count).map_err(|e| usage(e.to_string()))?;
        let rv = residual_vector(&pool.models[best], &scene.correspondences);
        let vals = th
            .iter()
            .map(|&t| {
                let s = build_spec(family, Some(t), a.sigma, a.nu, a.table.as_deref())?;
                Ok(rv.values.iter().map(|&r| rho(&s, r)).sum())
            })
            .collect::<anyhow::Result<Vec<f64>>>()?;
        write_sweep_csv(File::create(ctx.path("sweep.csv"))?, &th, &vals)?;
    }
    println!("score: best model {best} of {}, score {:.6}, error {error:.6}", pool.len(), scores[best]);
    Ok(())
}

// ---------------------------------------------------------------- lo

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoArgs {
    /// Scene JSON file.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Pool JSON file; LO starts from its best-scoring model, else from GT.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<ScoreFamily>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub nu: Option<u32>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Outer iterations. Default 25.
    #[arg(long)]
    pub max_iter: Option<usize>,
}

pub fn lo(ctx: &Context, a: LoArgs) -> anyhow::Result<()> {
    let scene: SyntheticScene = read_json(&required(a.scene, "scene")?)?;
    let family = required(a.family, "family")?;
    let spec = build_spec(family, a.tau, a.sigma, a.nu, a.table.as_deref())?;
    let init = match &a.pool {
        Some(p) => {
            let pool = read_json::<PoolFile>(p)?.pool;
            let scores: Vec<f64> = pool
                .models
                .iter()
                .map(|m| score_residuals(&spec, &residual_vector(m, &scene.correspondences)))
                .collect();
            pool.models[select_best(&scores).context("no finite score")?]
        }
        None => scene.gt_model,
    };
    let cfg = LmaConfig {
        max_iter: a.max_iter.unwrap_or(25),
        ..LmaConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let before = model_error(&scene, &init)?;
    let (after, trace) = match scene.config.kind {
        ModelKind::Homography => {
            let (m, t) = irls_lma_homography(&spec, &init, &scene.correspondences, &cfg)?;
            (model_error(&scene, &m)?, t)
        }
        _ => {
            let pose = decompose_essential(&init, &scene.gt_pose)?;
            let (p, t) = irls_lma(&spec, &pose, &scene.correspondences, &cfg, scene.config.focal())?;
            (pose_error(&p, &scene.gt_pose).e, t)
        }
    };
    write_trace_csv(File::create(ctx.path("trace.csv"))?, &trace)?;
    write_report_json(
        &ctx.path("lo.json"),
        &json!({
            "family": family,
            "tau": spec.tau(),
            "error_before": before,
            "error_after": after,
            "status": trace.status,
            "iterations": trace.iterations.len(),
            "monotone": trace.is_monotone(),
        }),
    )?;
    println!("lo: error {before:.6} -> {after:.6} ({:?})", trace.status);
    Ok(())
}

// ---------------------------------------------------------------- learn

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnArgs {
    /// Directory holding training scene_*.json files.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Inlier ratio; default: the labeled inlier fraction.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Histogram range in pixels. Default 10.
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Histogram bins. Default 500.
    #[arg(long)]
    pub k: Option<usize>,
    /// Outlier residual range. Default 100.
    #[arg(long)]
    pub r_max: Option<f64>,
    /// Ascent iterations. Default 30000.
    #[arg(long)]
    pub iters: Option<usize>,
}

pub fn learn(ctx: &Context, a: LearnArgs) -> anyhow::Result<()> {
    let scenes = load_scenes(&required(a.scenes, "scenes")?)?;
    let (tau_max, k) = (a.tau_max.unwrap_or(10.0), a.k.unwrap_or(500));
    let mut hist = ResidualHistogram::empty(tau_max, k).map_err(|e| usage(e.to_string()))?;
    let (mut inliers, mut labeled) = (0usize, 0usize);
    for s in &scenes {
        for r in residual_vector(&s.gt_model, &s.correspondences).values {
            hist.add(r);
        }
        if let Some(l) = s.correspondences.labels() {
            labeled += l.len();
            inliers += l.iter().filter(|&&b| b).count();
        }
    }
    let gamma = match a.gamma {
        Some(g) => g,
        None if labeled > 0 => inliers as f64 / labeled as f64,
        None => return Err(usage("missing --gamma and the scenes carry no labels")),
    };
    let fit = fit_inlier_density_with(&hist, gamma, a.r_max.unwrap_or(DEFAULT_R_MAX), a.iters.unwrap_or(30_000))?;
    let table = learned_score_table(&fit.params, tau_max, k)?;
    write_json(&ctx.path("table.json"), &table)?;
    write_json(
        &ctx.path("learned.json"),
        &json!({
            "params": fit.params,
            "equivalent_threshold": equivalent_threshold(&fit.params),
            "objective": fit.objective_trace.last(),
        }),
    )?;
    println!(
        "learn: gamma {gamma:.4}, equivalent threshold {}",
        equivalent_threshold(&fit.params).map_or("none".into(), |t| format!("{t:.4}"))
    );
    Ok(())
}

// ---------------------------------------------------------------- magsac-fit

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagsacFitArgs {
    /// Degrees of freedom to fit. Default 4,6,8.
    #[arg(long, value_delimiter = ',')]
    pub nu: Option<Vec<u32>>,
}

fn magsac_fits(nus: &[u32]) -> anyhow::Result<Vec<serde_json::Value>> {
    nus.iter()
        .map(|&nu| {
            let f = fit_magsac_to_gau(nu).map_err(|e| usage(e.to_string()))?;
            Ok(json!({
                "nu": nu,
                "kappa": f.kappa,
                "quantile": MAGSAC_QUANTILE,
                "tau": f.tau,
                "sigma": f.sigma,
                "sup_err": f.sup_err,
                "score_gap": f.score_gap,
            }))
        })
        .collect()
}

pub fn magsac_fit(ctx: &Context, a: MagsacFitArgs) -> anyhow::Result<()> {
    let nus = a.nu.unwrap_or_else(|| vec![4, 6, 8]);
    let fits = magsac_fits(&nus)?;
    write_report_json(&ctx.path("magsac_fit.json"), &fits)?;
    for f in &fits {
        println!(
            "magsac-fit: nu={} kappa={:.4} tau={:.4} sigma={:.4} gap={:.4}",
            f["nu"], f["kappa"].as_f64().unwrap_or(f64::NAN), f["tau"].as_f64().unwrap_or(f64::NAN),
            f["sigma"].as_f64().unwrap_or(f64::NAN), f["score_gap"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- sweep

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Directory holding pool_*.json files. Default: the scenes directory.
    #[arg(long)]
    pub pools: Option<PathBuf>,
    /// Methods: oracle, ransac, msac, gau-marginal, gau-profile, magsac-plus-plus.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Lowest threshold. Default 0.1.
    #[arg(long)]
    pub lo: Option<f64>,
    /// Highest threshold. Default 10.
    #[arg(long)]
    pub hi: Option<f64>,
    /// Thresholds, log-spaced. Default 200.
    #[arg(long)]
    pub count: Option<usize>,
    /// Threshold multiplier for MAGSAC++ supports. Default 3.
    #[arg(long)]
    pub magsac_scale: Option<f64>,
    /// Histogram range. Default 4 x the largest non-MAGSAC threshold.
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Histogram bins. Default 2000.
    #[arg(long)]
    pub k: Option<usize>,
}

pub fn sweep(ctx: &Context, a: SweepArgs) -> anyhow::Result<()> {
    let scene_dir = required(a.scenes, "scenes")?;
    let scenes = load_scenes(&scene_dir)?;
    let pools = load_pools(&a.pools.unwrap_or(scene_dir), &scenes)?;
    let names = a.methods.unwrap_or_else(|| {
        ["oracle", "ransac", "msac", "gau-marginal", "magsac-plus-plus"].map(String::from).to_vec()
    });
    let methods = parse_methods(&names)?;
    let base = log_thresholds(a.lo.unwrap_or(0.1), a.hi.unwrap_or(10.0), a.count.unwrap_or(200)).map_err(|e| usage(e.to_string()))?;
    let scale = a.magsac_scale.unwrap_or(3.0);
    let sweeps: Vec<(Method, Vec<f64>)> = methods
        .iter()
        .map(|m| {
            let t = match m {
                Method::Score {
                    family: ScoreFamily::MagsacPlusPlus,
                    ..
                } => base.iter().map(|t| t * scale).collect(),
                _ => base.clone(),
            };
            (*m, t)
        })
        .collect();
    let hi = *base.last().unwrap_or(&10.0);
    let grid_cfg = GridConfig {
        tau_max: a.tau_max.unwrap_or(4.0 * hi),
        k: a.k.unwrap_or(2000),
    };
    let grids = precompute_error_grids_with(&scenes, &pools, &sweeps, &grid_cfg)?;
    let mut chosen = Vec::new();
    let mut curves = Vec::new();
    for g in &grids {
        save_error_grid(&ctx.out, &format!("grid_{}", g.method), g)?;
        let v = large_validation(g)?;
        chosen.push(json!({
            "method": g.method,
            "best_index": v.best_index,
            "best_threshold": v.best_threshold,
            "best_median": v.best_median,
        }));
        curves.push((g.method.clone(), v.curve));
    }
    let cols: Vec<(&str, &[f64])> = curves.iter().map(|(n, c)| (n.as_str(), c.as_slice())).collect();
    write_curve_csv(File::create(ctx.path("curve.csv"))?, "threshold", &base, &cols)?;
    write_report_json(&ctx.path("chosen.json"), &chosen)?;
    for c in &chosen {
        println!(
            "sweep: {} best threshold {:.4} median {:.4}",
            c["method"].as_str().unwrap_or("?"),
            c["best_threshold"].as_f64().unwrap_or(f64::NAN),
            c["best_median"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- sensitivity

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityArgs {
    /// Directory with validation grids (sweep output).
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Directory with test grids. Default: split the validation grids in half.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Validation sizes. Default 2,4,8,16,32.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Random validation sets per size. Default 1000.
    #[arg(long)]
    pub trials: Option<usize>,
}

fn split_grid(g: &ErrorGrid, range: std::ops::Range<usize>) -> anyhow::Result<ErrorGrid> {
    Ok(ErrorGrid::new(
        g.method.clone(),
        g.instance_ids[range.clone()].to_vec(),
        g.thresholds.clone(),
        g.errors[range].to_vec(),
    )?)
}

fn val_test(val: &Path, test: Option<&Path>, method: &str) -> anyhow::Result<(ErrorGrid, ErrorGrid)> {
    let stem = format!("grid_{method}");
    let v = load_error_grid(val, &stem).with_context(|| format!("missing {stem} in {}", val.display()))?;
    match test {
        Some(t) => {
            let t = load_error_grid(t, &stem).with_context(|| format!("missing {stem} in {}", t.display()))?;
            Ok((v, t))
        }
        None => {
            let half = v.n_instances() / 2;
            if half == 0 {
                bail!("{stem} has fewer than two instances to split");
            }
            Ok((split_grid(&v, 0..half)?, split_grid(&v, half..v.n_instances())?))
        }
    }
}

fn sensitivity_reports(
    ctx: &Context,
    val: &Path,
    test: Option<&Path>,
    methods: &[String],
    ns: &[usize],
    trials: usize,
) -> anyhow::Result<Vec<serde_json::Value>> {
    methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let (v, t) = val_test(val, test, m)?;
            let usable: Vec<usize> = ns.iter().copied().filter(|&n| n <= v.n_instances()).collect();
            let r = small_validation_sensitivity(&v, &t, &usable, trials, derive_seed(ctx.seed, i as u64))?;
            Ok(json!({
                "method": m,
                "n": r.n_values,
                "expected_error": r.expected_error,
                "error_std": r.error_std,
            }))
        })
        .collect()
}

pub fn sensitivity(ctx: &Context, a: SensitivityArgs) -> anyhow::Result<()> {
    let val = required(a.val, "val")?;
    let methods = a.methods.unwrap_or_else(|| ["ransac", "msac", "gau-marginal", "magsac-plus-plus"].map(String::from).to_vec());
    parse_methods(&methods)?;
    let ns = a.n.unwrap_or_else(|| vec![2, 4, 8, 16, 32]);
    let reports = sensitivity_reports(ctx, &val, a.test.as_deref(), &methods, &ns, a.trials.unwrap_or(1000))?;
    write_report_json(&ctx.path("sensitivity.json"), &reports)?;
    for r in &reports {
        println!("sensitivity: {} {}", r["method"].as_str().unwrap_or("?"), r["expected_error"]);
    }
    Ok(())
}

// ---------------------------------------------------------------- report

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportArgs {
    /// Directory with grids from `sweep`.
    #[arg(long)]
    pub grids: Option<PathBuf>,
    /// Directory with test grids for the sensitivity section.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// mAA cap in degrees. Default 10.
    #[arg(long)]
    pub cap: Option<f64>,
}

pub fn report(ctx: &Context, a: ReportArgs) -> anyhow::Result<()> {
    let dir = required(a.grids, "grids")?;
    let methods = a.methods.unwrap_or_else(|| {
        ["oracle", "ransac", "msac", "gau-marginal", "magsac-plus-plus"].map(String::from).to_vec()
    });
    parse_methods(&methods)?;
    let missing: Vec<String> = methods
        .iter()
        .flat_map(|m| [format!("grid_{m}.csv"), format!("grid_{m}.json")])
        .filter(|f| !dir.join(f).exists())
        .collect();
    if !missing.is_empty() {
        bail!("missing inputs in {}: {}", dir.display(), missing.join(", "));
    }
    let cap = a.cap.unwrap_or(10.0);
    let mut summary = Vec::new();
    for m in &methods {
        let g = load_error_grid(&dir, &format!("grid_{m}"))?;
        let v = large_validation(&g)?;
        let column: Vec<f64> = g.errors.iter().map(|row| row[v.best_index]).collect();
        let (median, maa) = median_and_maa(&column, cap)?;
        summary.push(json!({
            "method": m,
            "instances": g.n_instances(),
            "best_threshold": v.best_threshold,
            "median": median,
            "maa": maa,
        }));
    }
    let scored: Vec<String> = methods.iter().filter(|m| m.as_str() != "oracle").cloned().collect();
    let ns = a.n.unwrap_or_else(|| vec![2, 4, 8, 16, 32]);
    let sens = sensitivity_reports(ctx, &dir, a.test.as_deref(), &scored, &ns, a.trials.unwrap_or(1000))?;
    let report = json!({
        "seed": ctx.seed,
        "validation": summary,
        "sensitivity": sens,
        "magsac_fit": magsac_fits(&[4, 6, 8])?,
    });
    write_report_json(&ctx.path("report.json"), &report)?;
    for s in &summary {
        println!(
            "report: {} median {:.4} mAA {:.4}",
            s["method"].as_str().unwrap_or("?"),
            s["median"].as_f64().unwrap_or(f64::NAN),
            s["maa"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- selectivity

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectivityArgs {
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Score family. Default msac.
    #[arg(long)]
    pub family: Option<ScoreFamily>,
    /// Threshold. Default 3.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub nu: Option<u32>,
    /// Largest angle in degrees. Default 20.
    #[arg(long)]
    pub theta_max: Option<f64>,
    /// Angle step in degrees. Default 1.
    #[arg(long)]
    pub theta_step: Option<f64>,
}

pub fn selectivity(ctx: &Context, a: SelectivityArgs) -> anyhow::Result<()> {
    let scenes = load_scenes(&required(a.scenes, "scenes")?)?;
    let spec = build_spec(a.family.unwrap_or(ScoreFamily::Msac), Some(a.tau.unwrap_or(3.0)), a.sigma, a.nu, None)?;
    let (max, step) = (a.theta_max.unwrap_or(20.0), a.theta_step.unwrap_or(1.0));
    if !(step > 0.0 && max >= 0.0) {
        return Err(usage("--theta-step must be positive and --theta-max non-negative"));
    }
    let thetas: Vec<f64> = (0..=(max / step + 1e-9).floor() as usize).map(|i| i as f64 * step).collect();
    let r = selectivity_experiment(&scenes, &spec, &PerturbMode::ALL, &thetas, ctx.seed)?;
    write_report_json(&ctx.path("selectivity.json"), &r)?;
    let names: Vec<String> = r.curves.iter().map(|c| c.mode.name().to_string()).collect();
    let cols: Vec<(&str, &[f64])> = names.iter().zip(&r.curves).map(|(n, c)| (n.as_str(), c.mean.as_slice())).collect();
    write_curve_csv(File::create(ctx.path("selectivity.csv"))?, "theta", &thetas, &cols)?;
    println!("selectivity: {} of {} scenes used", r.scenes_used, scenes.len());
    Ok(())
}

// ---------------------------------------------------------------- consistency

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyArgs {
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Inlier thresholds. Default 0.5,1,2,3,5,10.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Pose-error bins in degrees. Default 0,2,5,10,20.
    #[arg(long, value_delimiter = ',')]
    pub bins: Option<Vec<f64>>,
}

pub fn consistency(ctx: &Context, a: ConsistencyArgs) -> anyhow::Result<()> {
    let scenes = load_scenes(&required(a.scenes, "scenes")?)?;
    let thresholds = a.thresholds.unwrap_or_else(|| vec![0.5, 1.0, 2.0, 3.0, 5.0, 10.0]);
    let bins = a.bins.unwrap_or_else(|| vec![0.0, 2.0, 5.0, 10.0, 20.0]);
    let r = consistency_experiment(&scenes, &thresholds, &bins, ctx.seed)?;
    write_report_json(&ctx.path("consistency.json"), &r)?;
    let names: Vec<String> = bins.iter().map(|b| format!("error_{b}")).collect();
    let cols: Vec<(&str, &[f64])> = names.iter().zip(&r.mean_inliers).map(|(n, c)| (n.as_str(), c.as_slice())).collect();
    write_curve_csv(File::create(ctx.path("consistency.csv"))?, "threshold", &thresholds, &cols)?;
    println!("consistency: {} scenes, {} bins", scenes.len(), bins.len());
    Ok(())
}
