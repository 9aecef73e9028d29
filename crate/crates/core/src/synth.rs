//! Synthetic two-view scenes under the Gaussian-inlier / uniform-outlier
//! model, minimal solvers, candidate pools and controlled perturbations.
//!
//! Image coordinates are pixels centered on the principal point, so both
//! images cover `[-E/2, E/2]²` for image extent `E`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Unit, UnitQuaternion, Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    compose_essential, decompose_essential, pose_error, project_to_essential, Correspondence,
    CorrespondenceSet, GeometricModel, ModelKind, Pose,
};
use crate::rng::{derive_seed, seeded, Rng};

fn default_extent() -> f64 {
    1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub kind: ModelKind,
    pub n: usize,
    pub gamma: f64,
    pub sigma: f64,
    #[serde(default = "default_extent")]
    pub image_extent: f64,
    /// Focal length in pixels; defaults to the image extent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal: Option<f64>,
    pub seed: u64,
}

impl SceneConfig {
    pub fn new(kind: ModelKind, n: usize, gamma: f64, sigma: f64, seed: u64) -> Self {
        Self {
            kind,
            n,
            gamma,
            sigma,
            image_extent: default_extent(),
            focal: None,
            seed,
        }
    }

    pub fn focal(&self) -> f64 {
        self.focal.unwrap_or(self.image_extent)
    }

    /// `gamma = 1` and `sigma = 0` are accepted for noiseless, outlier-free
    /// checks.
    pub fn validate(&self) -> Result<()> {
        if self.kind == ModelKind::Fundamental {
            return Err(invalid("scenes are generated for homography or essential models"));
        }
        if self.n < 8 {
            return Err(invalid("a scene needs at least 8 correspondences"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid("sigma must be non-negative"));
        }
        if !(self.image_extent.is_finite() && self.image_extent > 0.0) {
            return Err(invalid("image extent must be positive"));
        }
        if !(self.focal().is_finite() && self.focal() > 0.0) {
            return Err(invalid("focal length must be positive"));
        }
        Ok(())
    }
}

/// World plane `normal · X = distance` in the first camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub gt_model: GeometricModel,
    /// Relative camera pose with unit baseline.
    pub gt_pose: Pose,
    /// Scene plane for homography scenes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<Plane>,
    pub correspondences: CorrespondenceSet,
}

fn calibration(f: f64) -> Matrix3<f64> {
    Matrix3::new(f, 0.0, 0.0, 0.0, f, 0.0, 0.0, 0.0, 1.0)
}

/// `K (R + t nᵀ / d) K⁻¹` for the relative pose and plane.
pub fn plane_homography(pose: &Pose, plane: &Plane, focal: f64) -> Result<GeometricModel> {
    let k = calibration(focal);
    let k_inv = calibration(1.0 / focal);
    let h = k * (pose.rotation_matrix() + pose.t() * plane.normal.transpose() / plane.distance) * k_inv;
    GeometricModel::homography(h / h.norm())
}

fn essential_model(pose: &Pose, focal: f64) -> GeometricModel {
    compose_essential(pose).with_focal(focal)
}

fn random_unit(rng: &mut Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut Rng, max_deg: f64) -> UnitQuaternion<f64> {
    let axis = Unit::new_normalize(random_unit(rng));
    UnitQuaternion::from_axis_angle(&axis, rng.random_range(0.0..=max_deg).to_radians())
}

fn in_image(p: &Vector2<f64>, extent: f64) -> bool {
    p.x.abs() <= 0.5 * extent && p.y.abs() <= 0.5 * extent
}

fn uniform_point(rng: &mut Rng, extent: f64) -> Vector2<f64> {
    let h = 0.5 * extent;
    Vector2::new(rng.random_range(-h..h), rng.random_range(-h..h))
}

/// Noise-free true correspondence on the model manifold.
struct TruePoints<'a> {
    pose: &'a Pose,
    plane: Option<&'a Plane>,
    focal: f64,
    extent: f64,
}

impl TruePoints<'_> {
    fn draw(&self, rng: &mut Rng) -> Option<(Vector2<f64>, Vector2<f64>)> {
        let u = uniform_point(rng, self.extent);
        let ray = Vector3::new(u.x / self.focal, u.y / self.focal, 1.0);
        let depth = match self.plane {
            Some(pl) => {
                let denom = pl.normal.dot(&ray);
                if denom.abs() < 1e-9 {
                    return None;
                }
                pl.distance / denom
            }
            None => rng.random_range(4.0..8.0),
        };
        if depth <= 0.0 {
            return None;
        }
        let x2 = self.pose.rotation_matrix() * (ray * depth) + self.pose.t();
        if x2.z <= 1e-3 {
            return None;
        }
        let v = Vector2::new(self.focal * x2.x / x2.z, self.focal * x2.y / x2.z);
        in_image(&v, self.extent).then_some((u, v))
    }

    fn acceptance(&self, rng: &mut Rng, tries: usize) -> f64 {
        (0..tries).filter(|_| self.draw(rng).is_some()).count() as f64 / tries as f64
    }
}

fn random_pose(rng: &mut Rng) -> Pose {
    let rotation = random_rotation(rng, 30.0);
    Pose {
        rotation,
        translation: Unit::new_normalize(random_unit(rng)),
    }
}

fn random_plane(rng: &mut Rng) -> Plane {
    // normal within 30 degrees of the optical axis, 4 to 8 units away
    let tilt = random_rotation(rng, 30.0);
    Plane {
        normal: tilt * Vector3::z(),
        distance: rng.random_range(4.0..8.0),
    }
}

/// Draws a scene; inliers are true correspondences plus isotropic
/// Gaussian noise in R⁴, outliers are uniform in both images.
pub fn generate_scene(config: &SceneConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let focal = config.focal();
    let extent = config.image_extent;
    let (pose, plane) = loop {
        let pose = random_pose(&mut rng);
        let plane = (config.kind == ModelKind::Homography).then(|| random_plane(&mut rng));
        let pts = TruePoints {
            pose: &pose,
            plane: plane.as_ref(),
            focal,
            extent,
        };
        if pts.acceptance(&mut rng, 200) >= 0.1 {
            break (pose, plane);
        }
    };
    let gt_model = match &plane {
        Some(pl) => plane_homography(&pose, pl, focal)?,
        None => essential_model(&pose, focal),
    };
    let pts = TruePoints {
        pose: &pose,
        plane: plane.as_ref(),
        focal,
        extent,
    };
    let noise = Normal::new(0.0, config.sigma).map_err(|e| invalid(e.to_string()))?;
    let mut items = Vec::with_capacity(config.n);
    let mut labels = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let inlier = rng.random::<f64>() < config.gamma;
        let c = if inlier {
            let (u, v) = loop {
                if let Some(p) = pts.draw(&mut rng) {
                    break p;
                }
            };
            let mut d = [0.0; 4];
            d.iter_mut().for_each(|x| *x = noise.sample(&mut rng));
            Correspondence::from_coords(u.x + d[0], u.y + d[1], v.x + d[2], v.y + d[3])
        } else {
            Correspondence::new(uniform_point(&mut rng, extent), uniform_point(&mut rng, extent))
        };
        items.push(c);
        labels.push(inlier);
    }
    Ok(SyntheticScene {
        config: *config,
        gt_model,
        gt_pose: pose,
        plane,
        correspondences: CorrespondenceSet::with_labels(items, labels)?,
    })
}

/// Isotropic normalization: centroid to the origin, mean distance √2.
fn normalizing_transform(points: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean.is_finite() && mean > 1e-12 * (1.0 + c.norm())) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = t * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Null vector of `A` (rows of length 9) with the ratio of the two smallest
/// eigenvalues of `AᵀA` to the largest.
fn null_vector(rows: &[[f64; 9]]) -> (Matrix3<f64>, f64) {
    let a = DMatrix::from_fn(rows.len(), 9, |i, j| rows[i][j]);
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let v = eig.eigenvectors.column(order[0]);
    let max = eig.eigenvalues[order[8]].max(1e-300);
    let gap = eig.eigenvalues[order[1]] / max;
    (Matrix3::from_row_slice(v.as_slice()), gap)
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> f64 {
    (b - a).perp(&(c - a))
}

fn has_collinear_triple(p: &[Vector2<f64>; 4]) -> bool {
    let scale = p.iter().map(|q| q.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale * scale;
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        if cross2(&p[i], &p[j], &p[k]).abs() <= tol {
            return true;
        }
    }
    false
}

/// Normalized direct linear transform from four correspondences.
pub fn solver_homography_4pt(samples: &[Correspondence]) -> Option<GeometricModel> {
    if samples.len() != 4 {
        return None;
    }
    let src: [Vector2<f64>; 4] = std::array::from_fn(|i| samples[i].u);
    let dst: [Vector2<f64>; 4] = std::array::from_fn(|i| samples[i].v);
    if has_collinear_triple(&src) || has_collinear_triple(&dst) {
        return None;
    }
    let t1 = normalizing_transform(&src)?;
    let t2 = normalizing_transform(&dst)?;
    let mut rows = Vec::with_capacity(8);
    for (s, d) in src.iter().zip(&dst) {
        let (x, y) = {
            let p = apply(&t1, s);
            (p.x, p.y)
        };
        let q = apply(&t2, d);
        rows.push([-x, -y, -1.0, 0.0, 0.0, 0.0, q.x * x, q.x * y, q.x]);
        rows.push([0.0, 0.0, 0.0, -x, -y, -1.0, q.y * x, q.y * y, q.y]);
    }
    let (hn, gap) = null_vector(&rows);
    if gap < 1e-14 {
        return None;
    }
    let h = t2.try_inverse()? * hn * t1;
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    GeometricModel::homography(h / h.norm()).ok()
}

/// Normalized 8-point algorithm. With `want_essential` the points are first
/// calibrated with `focal` and the estimate is projected onto the essential
/// manifold; otherwise a rank-2 fundamental matrix in pixels is returned.
pub fn solver_eightpoint(samples: &[Correspondence], want_essential: bool, focal: f64) -> Option<GeometricModel> {
    if samples.len() < 8 || !(focal.is_finite() && focal > 0.0) {
        return None;
    }
    let scale = if want_essential { 1.0 / focal } else { 1.0 };
    let src: Vec<Vector2<f64>> = samples.iter().map(|c| c.u * scale).collect();
    let dst: Vec<Vector2<f64>> = samples.iter().map(|c| c.v * scale).collect();
    let t1 = normalizing_transform(&src)?;
    let t2 = normalizing_transform(&dst)?;
    let rows: Vec<[f64; 9]> = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| {
            let u = apply(&t1, s);
            let v = apply(&t2, d);
            [v.x * u.x, v.x * u.y, v.x, v.y * u.x, v.y * u.y, v.y, u.x, u.y, 1.0]
        })
        .collect();
    let (fn_, gap) = null_vector(&rows);
    if gap < 1e-12 {
        return None;
    }
    let f = t2.transpose() * fn_ * t1;
    if !f.iter().all(|v| v.is_finite()) {
        return None;
    }
    if want_essential {
        let e = project_to_essential(&f).ok()?;
        let m = e.matrix / e.matrix.norm();
        GeometricModel::essential(m, focal).ok()
    } else {
        let svd = f.svd(true, true);
        let (u, v_t) = (svd.u?, svd.v_t?);
        let mut s = svd.singular_values;
        let imin = s.imin();
        s[imin] = 0.0;
        let f2 = u * Matrix3::from_diagonal(&s) * v_t;
        GeometricModel::fundamental(f2 / f2.norm()).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    MinimalSample,
    Perturbation,
    GroundTruth,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelPool {
    pub models: Vec<GeometricModel>,
    pub provenance: Vec<Provenance>,
}

impl ModelPool {
    pub fn new(models: Vec<GeometricModel>, provenance: Vec<Provenance>) -> Result<Self> {
        if models.len() != provenance.len() {
            return Err(invalid("one provenance tag per model is required"));
        }
        for m in &models {
            m.validate()?;
        }
        Ok(Self { models, provenance })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn push(&mut self, model: GeometricModel, tag: Provenance) {
        self.models.push(model);
        self.provenance.push(tag);
    }
}

/// Proportions of pool entries by provenance, plus the maximum
/// perturbation angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolMix {
    pub minimal: f64,
    pub perturbation: f64,
    pub ground_truth: f64,
    #[serde(default = "default_theta_max")]
    pub theta_max: f64,
}

fn default_theta_max() -> f64 {
    10.0
}

impl Default for PoolMix {
    fn default() -> Self {
        Self::minimal_only()
    }
}

impl PoolMix {
    pub fn minimal_only() -> Self {
        Self {
            minimal: 1.0,
            perturbation: 0.0,
            ground_truth: 0.0,
            theta_max: default_theta_max(),
        }
    }

    pub fn ground_truth_only() -> Self {
        Self {
            minimal: 0.0,
            perturbation: 0.0,
            ground_truth: 1.0,
            theta_max: default_theta_max(),
        }
    }

    /// Entry counts summing to `m`, by largest-remainder rounding.
    pub fn counts(&self, m: usize) -> Result<[usize; 3]> {
        let w = [self.minimal, self.perturbation, self.ground_truth];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(invalid("pool proportions must be non-negative"));
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(invalid("pool proportions must not all be zero"));
        }
        let exact: Vec<f64> = w.iter().map(|x| x / total * m as f64).collect();
        let mut counts: [usize; 3] = std::array::from_fn(|i| exact[i].floor() as usize);
        let mut rest = m - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        for &i in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            if w[i] > 0.0 {
                counts[i] += 1;
                rest -= 1;
            }
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    Pitch,
    Yaw,
    Roll,
    RandomRot,
    RandomTransRot,
}

impl PerturbMode {
    pub const ALL: [PerturbMode; 5] = [
        PerturbMode::Pitch,
        PerturbMode::Yaw,
        PerturbMode::Roll,
        PerturbMode::RandomRot,
        PerturbMode::RandomTransRot,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PerturbMode::Pitch => "pitch",
            PerturbMode::Yaw => "yaw",
            PerturbMode::Roll => "roll",
            PerturbMode::RandomRot => "random-rot",
            PerturbMode::RandomTransRot => "random-trans-rot",
        }
    }
}

impl fmt::Display for PerturbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        PerturbMode::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| invalid(format!("unknown perturbation mode '{s}'")))
    }
}

/// Rotates `R` (rotation modes) or `t` (`RandomTransRot`) by `theta`
/// degrees; the random axes are drawn from `seed`.
pub fn perturb_model(gt: &Pose, mode: PerturbMode, theta: f64, seed: u64) -> Result<Pose> {
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(invalid("perturbation angle must be non-negative"));
    }
    let mut rng = seeded(seed);
    Ok(perturb_with_axis(gt, mode, theta, random_unit(&mut rng)))
}

/// Same as [`perturb_model`] with an explicit random axis; for
/// `RandomTransRot` the axis is projected orthogonal to `t`.
pub fn perturb_with_axis(gt: &Pose, mode: PerturbMode, theta: f64, axis: Vector3<f64>) -> Pose {
    let angle = theta.to_radians();
    let rotate = |axis: Vector3<f64>| Pose {
        rotation: UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle) * gt.rotation,
        ..*gt
    };
    match mode {
        PerturbMode::Pitch => rotate(Vector3::x()),
        PerturbMode::Yaw => rotate(Vector3::y()),
        PerturbMode::Roll => rotate(Vector3::z()),
        PerturbMode::RandomRot => rotate(axis),
        PerturbMode::RandomTransRot => {
            let t = gt.t();
            let mut a = axis - t * t.dot(&axis);
            if a.norm() < 1e-9 {
                a = t.cross(&Vector3::x());
                if a.norm() < 1e-9 {
                    a = t.cross(&Vector3::y());
                }
            }
            let q = UnitQuaternion::from_axis_angle(&Unit::new_normalize(a), angle);
            Pose {
                translation: Unit::new_normalize(q * t),
                ..*gt
            }
        }
    }
}

/// The scene's model for a perturbed relative pose.
pub fn model_for_pose(scene: &SyntheticScene, pose: &Pose) -> Result<GeometricModel> {
    let focal = scene.config.focal();
    match scene.config.kind {
        ModelKind::Homography => {
            let plane = scene.plane.as_ref().ok_or(Error::Empty("scene plane"))?;
            plane_homography(pose, plane, focal)
        }
        _ => Ok(essential_model(pose, focal)),
    }
}

fn minimal_model(scene: &SyntheticScene, rng: &mut Rng) -> Option<GeometricModel> {
    let items = scene.correspondences.items();
    let (size, essential) = match scene.config.kind {
        ModelKind::Homography => (4, false),
        _ => (8, true),
    };
    for _ in 0..100 {
        let idx = sample(rng, items.len(), size);
        let picked: Vec<Correspondence> = idx.iter().map(|i| items[i]).collect();
        let model = if essential {
            solver_eightpoint(&picked, true, scene.config.focal())
        } else {
            solver_homography_4pt(&picked)
        };
        if let Some(m) = model.filter(|m| m.matrix.iter().all(|v| v.is_finite())) {
            return Some(m);
        }
    }
    None
}

/// Candidate pool: minimal-sample models first, then perturbations of the
/// GT pose, then GT copies.
pub fn generate_pool(scene: &SyntheticScene, m: usize, mix: &PoolMix, seed: u64) -> Result<ModelPool> {
    if m == 0 {
        return Err(invalid("pool size must be at least 1"));
    }
    let [n_min, n_pert, n_gt] = mix.counts(m)?;
    let mut rng = seeded(seed);
    let mut pool = ModelPool::default();
    for _ in 0..n_min {
        let model = minimal_model(scene, &mut rng).ok_or_else(|| Error::Degenerate("no non-degenerate minimal sample".into()))?;
        pool.push(model, Provenance::MinimalSample);
    }
    for i in 0..n_pert {
        let mode = PerturbMode::ALL[rng.random_range(0..PerturbMode::ALL.len())];
        let theta = rng.random_range(0.0..mix.theta_max.max(f64::MIN_POSITIVE));
        let pose = perturb_model(&scene.gt_pose, mode, theta, derive_seed(seed, i as u64))?;
        pool.push(model_for_pose(scene, &pose)?, Provenance::Perturbation);
    }
    for _ in 0..n_gt {
        pool.push(scene.gt_model, Provenance::GroundTruth);
    }
    Ok(pool)
}

/// Error of `model` against the scene: pose error `e` in degrees for
/// essential scenes, mean corner transfer error in pixels for homographies.
pub fn model_error(scene: &SyntheticScene, model: &GeometricModel) -> Result<f64> {
    match model.kind {
        ModelKind::Essential => {
            let pose = decompose_essential(model, &scene.gt_pose)?;
            Ok(pose_error(&pose, &scene.gt_pose).e)
        }
        ModelKind::Homography => {
            let h = 0.5 * scene.config.image_extent;
            let map = |m: &Matrix3<f64>, x: f64, y: f64| {
                let p = m * Vector3::new(x, y, 1.0);
                Vector2::new(p.x / p.z, p.y / p.z)
            };
            let corners = [(-h, -h), (h, -h), (h, h), (-h, h)];
            let err = corners
                .iter()
                .map(|&(x, y)| (map(&model.matrix, x, y) - map(&scene.gt_model.matrix, x, y)).norm())
                .sum::<f64>()
                / 4.0;
            Ok(if err.is_finite() { err } else { f64::INFINITY })
        }
        ModelKind::Fundamental => Err(Error::KindMismatch {
            expected: ModelKind::Essential,
            got: ModelKind::Fundamental,
        }),
    }
}

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
mod oracle;
