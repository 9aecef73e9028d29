//! Geometric models, Sampson residuals, poses and pose errors.
//!
//! Correspondences are pixel pairs `(u, v)`. Calibrated models (essential
//! matrices) carry the focal length of a pinhole camera with its principal
//! point at the pixel origin, so residuals are always measured in pixels.

use nalgebra::{Matrix2, Matrix3, Rotation3, Unit, UnitQuaternion, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub u: Vector2<f64>,
    pub v: Vector2<f64>,
}

impl Correspondence {
    pub fn new(u: Vector2<f64>, v: Vector2<f64>) -> Self {
        Self { u, v }
    }

    pub fn from_coords(ux: f64, uy: f64, vx: f64, vy: f64) -> Self {
        Self::new(Vector2::new(ux, uy), Vector2::new(vx, vy))
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.u.x, self.u.y, self.v.x, self.v.y)
    }

    pub fn is_finite(&self) -> bool {
        self.as_vector().iter().all(|x| x.is_finite())
    }
}

/// Ordered correspondences with optional ground-truth inlier flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    items: Vec<Correspondence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<bool>>,
}

impl CorrespondenceSet {
    pub fn new(items: Vec<Correspondence>) -> Result<Self> {
        if let Some(i) = items.iter().position(|c| !c.is_finite()) {
            return Err(invalid(format!("correspondence {i} has non-finite coordinates")));
        }
        Ok(Self { items, labels: None })
    }

    pub fn with_labels(items: Vec<Correspondence>, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != items.len() {
            return Err(invalid(format!(
                "{} labels for {} correspondences",
                labels.len(),
                items.len()
            )));
        }
        let mut set = Self::new(items)?;
        set.labels = Some(labels);
        Ok(set)
    }

    pub fn items(&self) -> &[Correspondence] {
        &self.items
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Subset of the correspondences flagged as inliers (empty without labels).
    pub fn labeled_inliers(&self) -> Vec<Correspondence> {
        match &self.labels {
            Some(l) => self
                .items
                .iter()
                .zip(l)
                .filter(|(_, &k)| k)
                .map(|(c, _)| *c)
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Relative pose `X2 = R X1 + t` with direction-only translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Unit<Vector3<f64>>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Result<Self> {
        let norm = translation.norm();
        if !(norm.is_finite() && norm > 1e-300) {
            return Err(invalid("pose translation must be a non-zero finite vector"));
        }
        Ok(Self {
            rotation,
            translation: Unit::new_normalize(translation),
        })
    }

    pub fn from_rotation(rotation: &Rotation3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::new(UnitQuaternion::from_rotation_matrix(rotation), translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn t(&self) -> Vector3<f64> {
        self.translation.into_inner()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Homography,
    Essential,
    Fundamental,
}

/// A 3x3 two-view model. `focal` only matters for essential matrices and maps
/// pixel coordinates to calibrated rays `(x, y, focal)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelRecord", try_from = "ModelRecord")]
pub struct GeometricModel {
    pub kind: ModelKind,
    pub matrix: Matrix3<f64>,
    pub focal: f64,
}

const RANK_TOL: f64 = 1e-9;

/// Wire form of a model: kind tag, row-major matrix, focal length.
#[derive(Serialize, Deserialize)]
struct ModelRecord {
    kind: ModelKind,
    matrix: [f64; 9],
    #[serde(default = "unit_focal")]
    focal: f64,
}

fn unit_focal() -> f64 {
    1.0
}

impl From<GeometricModel> for ModelRecord {
    fn from(m: GeometricModel) -> Self {
        let mut matrix = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                matrix[3 * r + c] = m.matrix[(r, c)];
            }
        }
        Self {
            kind: m.kind,
            matrix,
            focal: m.focal,
        }
    }
}

impl TryFrom<ModelRecord> for GeometricModel {
    type Error = Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        GeometricModel::checked(r.kind, Matrix3::from_row_slice(&r.matrix), r.focal)
    }
}

impl GeometricModel {
    pub fn homography(matrix: Matrix3<f64>) -> Result<Self> {
        Self::checked(ModelKind::Homography, matrix, 1.0)
    }

    pub fn essential(matrix: Matrix3<f64>, focal: f64) -> Result<Self> {
        Self::checked(ModelKind::Essential, matrix, focal)
    }

    pub fn fundamental(matrix: Matrix3<f64>) -> Result<Self> {
        Self::checked(ModelKind::Fundamental, matrix, 1.0)
    }

    pub fn checked(kind: ModelKind, matrix: Matrix3<f64>, focal: f64) -> Result<Self> {
        let m = Self { kind, matrix, focal };
        m.validate()?;
        Ok(m)
    }

    pub fn with_focal(mut self, focal: f64) -> Self {
        self.focal = focal;
        self
    }

    /// Checks the kind-specific invariants.
    pub fn validate(&self) -> Result<()> {
        if !self.matrix.iter().all(|x| x.is_finite()) {
            return Err(invalid("model matrix has non-finite entries"));
        }
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(invalid("focal length must be positive"));
        }
        let sv = sorted_singular_values(&self.matrix);
        if sv[0] <= 0.0 {
            return Err(Error::Degenerate("zero model matrix".into()));
        }
        match self.kind {
            ModelKind::Homography => {
                if sv[2] <= 1e-12 * sv[0] {
                    return Err(Error::Degenerate("singular homography".into()));
                }
            }
            ModelKind::Essential => {
                let (a, b, c) = (1.0, sv[1] / sv[0], sv[2] / sv[0]);
                if (a - b).abs() > RANK_TOL || c > RANK_TOL {
                    return Err(invalid(format!(
                        "essential spectrum ({a}, {b}, {c}) is not proportional to (1, 1, 0)"
                    )));
                }
            }
            ModelKind::Fundamental => {
                if sv[2] > RANK_TOL * sv[0] {
                    return Err(invalid("fundamental matrix is not rank 2"));
                }
            }
        }
        Ok(())
    }

    /// Matrix acting on homogeneous pixel coordinates.
    pub fn pixel_matrix(&self) -> Matrix3<f64> {
        match self.kind {
            ModelKind::Essential => {
                let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, self.focal));
                d * self.matrix * d
            }
            _ => self.matrix,
        }
    }
}

pub(crate) fn sorted_singular_values(m: &Matrix3<f64>) -> [f64; 3] {
    let sv = m.svd(false, false).singular_values;
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Non-negative residuals in pixels. `+inf` marks a degenerate evaluation
/// (all Jacobian rows of the constraint vanish).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualVector {
    pub values: Vec<f64>,
}

impl ResidualVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn degenerate_count(&self) -> usize {
        self.values.iter().filter(|r| r.is_infinite()).count()
    }
}

fn homog(p: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(p.x, p.y, 1.0)
}

/// Signed first-order distance for an epipolar matrix acting on pixels.
/// Returns `None` when the gradient of the epipolar constraint vanishes.
pub(crate) fn epipolar_signed(f: &Matrix3<f64>, c: &Correspondence) -> Option<f64> {
    let x1 = homog(&c.u);
    let x2 = homog(&c.v);
    let l = f * x1;
    let m = f.transpose() * x2;
    let e = x2.dot(&l);
    let a = l.x * l.x + l.y * l.y + m.x * m.x + m.y * m.y;
    if a <= 0.0 || !a.is_finite() {
        return None;
    }
    Some(e / a.sqrt())
}

/// Whitened two-equation homography residual `C^-1 g` with `C C^T = J J^T`,
/// so that its squared norm is the squared Sampson distance.
pub(crate) fn homography_whitened(h: &Matrix3<f64>, c: &Correspondence) -> Option<Vector2<f64>> {
    let x = homog(&c.u);
    let hx = h * x;
    let g = Vector2::new(hx.x - c.v.x * hx.z, hx.y - c.v.y * hx.z);
    // Jacobian of g w.r.t. (u_x, u_y, v_x, v_y)
    let j1 = Vector4::new(
        h[(0, 0)] - c.v.x * h[(2, 0)],
        h[(0, 1)] - c.v.x * h[(2, 1)],
        -hx.z,
        0.0,
    );
    let j2 = Vector4::new(
        h[(1, 0)] - c.v.y * h[(2, 0)],
        h[(1, 1)] - c.v.y * h[(2, 1)],
        0.0,
        -hx.z,
    );
    let jjt = Matrix2::new(j1.dot(&j1), j1.dot(&j2), j2.dot(&j1), j2.dot(&j2));
    let chol = jjt.cholesky()?;
    let w = chol.l().solve_lower_triangular(&g)?;
    if w.iter().all(|x| x.is_finite()) {
        Some(w)
    } else {
        None
    }
}

/// First-order (Sampson) distance from `c` to the model manifold, in pixels.
/// Degenerate evaluations return `f64::INFINITY`.
pub fn sampson_residual(model: &GeometricModel, c: &Correspondence) -> f64 {
    let m = model.pixel_matrix();
    let r = match model.kind {
        ModelKind::Homography => homography_whitened(&m, c).map(|w| w.norm()),
        ModelKind::Essential | ModelKind::Fundamental => epipolar_signed(&m, c).map(f64::abs),
    };
    r.unwrap_or(f64::INFINITY)
}

pub fn residual_vector(model: &GeometricModel, set: &CorrespondenceSet) -> ResidualVector {
    residuals_of(model, set.items())
}

pub fn residuals_of(model: &GeometricModel, items: &[Correspondence]) -> ResidualVector {
    ResidualVector {
        values: items.iter().map(|c| sampson_residual(model, c)).collect(),
    }
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// `E = [t]x R`, calibrated (focal 1).
pub fn compose_essential(p: &Pose) -> GeometricModel {
    GeometricModel {
        kind: ModelKind::Essential,
        matrix: skew(&p.t()) * p.rotation_matrix(),
        focal: 1.0,
    }
}

/// The four `(R, t)` pairs consistent with an essential matrix.
pub fn essential_candidates(m: &GeometricModel) -> Result<[Pose; 4]> {
    if m.kind != ModelKind::Essential {
        return Err(Error::KindMismatch {
            expected: ModelKind::Essential,
            got: m.kind,
        });
    }
    let svd = m.matrix.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::Degenerate("SVD failed".into()));
    };
    // order singular values descending so the null direction is column 2
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    u = Matrix3::from_columns(&[u.column(idx[0]), u.column(idx[1]), u.column(idx[2])]);
    let mut v = Matrix3::from_columns(&[
        v_t.row(idx[0]).transpose(),
        v_t.row(idx[1]).transpose(),
        v_t.row(idx[2]).transpose(),
    ]);
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v.determinant() < 0.0 {
        v.column_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v.transpose();
    let r2 = u * w.transpose() * v.transpose();
    let t: Vector3<f64> = u.column(2).into();
    let rot = |r: Matrix3<f64>| UnitQuaternion::from_matrix(&r);
    Ok([
        Pose::new(rot(r1), t)?,
        Pose::new(rot(r1), -t)?,
        Pose::new(rot(r2), t)?,
        Pose::new(rot(r2), -t)?,
    ])
}

/// Picks the decomposition closest to `gt`; the correct branch is assumed
/// identifiable.
pub fn decompose_essential(m: &GeometricModel, gt: &Pose) -> Result<Pose> {
    let candidates = essential_candidates(m)?;
    let best = candidates
        .iter()
        .min_by(|a, b| pose_error(a, gt).e.total_cmp(&pose_error(b, gt).e))
        .copied()
        .expect("four candidates");
    Ok(best)
}

/// Nearest essential matrix in Frobenius norm: the two largest singular values
/// are replaced by their mean and the smallest by zero.
pub fn project_to_essential(m: &Matrix3<f64>) -> Result<GeometricModel> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::Degenerate("SVD failed".into()));
    };
    let s = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mean = 0.5 * (s[idx[0]] + s[idx[1]]);
    if mean <= 0.0 {
        return Err(Error::Degenerate("zero matrix".into()));
    }
    let mut d = Vector3::zeros();
    d[idx[0]] = mean;
    d[idx[1]] = mean;
    Ok(GeometricModel {
        kind: ModelKind::Essential,
        matrix: u * Matrix3::from_diagonal(&d) * v_t,
        focal: 1.0,
    })
}

/// Rotation, translation-direction and combined pose errors in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub e_r: f64,
    pub e_t: f64,
    pub e: f64,
}

/// Unsigned angle between two directions, in radians, stable near 0 and pi.
pub(crate) fn vector_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

pub fn rotation_angle_deg(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    // angle of a b^T; equals acos((tr(a b^T) - 1) / 2) without the precision loss near 0
    let d = a * b.inverse();
    2.0 * d.imag().norm().atan2(d.scalar().abs()).to_degrees()
}

pub fn pose_error(estimate: &Pose, gt: &Pose) -> PoseError {
    let e_r = rotation_angle_deg(&estimate.rotation, &gt.rotation);
    let e_t = vector_angle(&estimate.t(), &gt.t()).to_degrees();
    PoseError { e_r, e_t, e: e_r.max(e_t) }
}
