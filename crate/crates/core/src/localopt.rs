//! IRLS / Levenberg-Marquardt local optimization under a score.
//!
//! Each outer iteration freezes the weights `wᵢ = −ρ̂'(rᵢ)/rᵢ` at the current
//! model and takes damped Gauss-Newton steps on `Σ wᵢ rᵢ²`. Every family in
//! [`ScoreFamily`] except `Learned` has a loss `1 − ρ̂` that is concave in
//! `r²`, so a decrease of the frozen objective also decreases the robust
//! loss; the robust loss is checked as well and is what the trace records.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    epipolar_signed, homography_whitened, residual_vector, skew, Correspondence, CorrespondenceSet,
    GeometricModel, ModelKind, Pose,
};
use crate::scoring::{inlier_posterior, irls_weight, rho, smax, ScoreFamily, ScoreSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmaConfig {
    pub max_iter: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub accept_factor: f64,
    pub tol_step: f64,
}

impl Default for LmaConfig {
    fn default() -> Self {
        Self {
            max_iter: 25,
            lambda1: 1e-3,
            lambda2: 1e-8,
            accept_factor: 10.0,
            tol_step: 1e-10,
        }
    }
}

impl LmaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(invalid("damping must be non-negative"));
        }
        if !(self.accept_factor > 1.0) {
            return Err(invalid("accept_factor must exceed 1"));
        }
        Ok(())
    }
}

/// One attempted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Outer iteration, 0 for the starting point.
    pub iter: usize,
    /// Robust loss `Σ (1 − ρ̂(rᵢ))` at the attempted parameters.
    pub objective: f64,
    pub step_norm: f64,
    pub accepted: bool,
    /// Frozen-weight objective `Σ wᵢ rᵢ²` before and after the step.
    pub weighted_before: f64,
    pub weighted_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptStatus {
    Converged,
    MaxIter,
    /// Damping grew without finding a descent step.
    Stalled,
    /// All weights vanished (e.g. RANSAC scores); the model is unchanged.
    NoWeights,
    NonFinite,
    /// Homography with a vanishing last entry.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub iterations: Vec<TraceEntry>,
    pub status: OptStatus,
}

impl OptTrace {
    /// Objectives of the start point and of every accepted step.
    pub fn accepted_objectives(&self) -> Vec<f64> {
        self.iterations.iter().filter(|e| e.accepted).map(|e| e.objective).collect()
    }

    pub fn is_monotone(&self) -> bool {
        let obj = self.accepted_objectives();
        obj.windows(2).all(|w| w[1] <= w[0])
            && self
                .iterations
                .iter()
                .filter(|e| e.accepted && e.iter > 0)
                .all(|e| e.weighted_after < e.weighted_before)
    }
}

/// Parameterization for the damped solver: residual blocks per
/// correspondence and their Jacobian rows.
trait LocalParam: Sized + Clone {
    const BLOCK: usize;

    fn n_params(&self) -> usize;

    /// Residual block of one correspondence, `None` when degenerate.
    fn block(&self, c: &Correspondence) -> Option<[f64; 2]>;

    /// Jacobian rows (`BLOCK × n_params`, row-major) for one correspondence.
    fn jacobian_rows(&self, c: &Correspondence) -> Option<Vec<f64>>;

    fn step(&self, delta: &DVector<f64>) -> Option<Self>;
}

/// `(q, t)` with `E = [t]x R(q)` and `F = D E D`, `D = diag(1, 1, f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialParams {
    /// Quaternion `(w, x, y, z)`; rotation uses its normalized value.
    pub q: Vector4<f64>,
    pub t: Vector3<f64>,
    pub focal: f64,
}

/// `∂M/∂q_k` for the homogeneous rotation matrix `M(q)` (`R = M / |q|²`).
fn dm_dq(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Matrix3::new(w, -z, y, z, w, -x, -y, x, w) * 2.0,
        Matrix3::new(x, y, z, y, -x, -w, z, w, -x) * 2.0,
        Matrix3::new(-y, x, w, x, y, z, -w, z, -y) * 2.0,
        Matrix3::new(-z, -w, x, w, -z, y, x, y, z) * 2.0,
    ]
}

fn homogeneous_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

impl EssentialParams {
    pub fn from_pose(p: &Pose, focal: f64) -> Self {
        let q = p.rotation.quaternion();
        Self {
            q: Vector4::new(q.w, q.i, q.j, q.k),
            t: p.t(),
            focal,
        }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        let q = nalgebra::Quaternion::new(self.q[0], self.q[1], self.q[2], self.q[3]);
        Pose::new(UnitQuaternion::from_quaternion(q), self.t)
    }

    fn rotation(&self) -> Matrix3<f64> {
        homogeneous_rotation(&self.q) / self.q.norm_squared()
    }

    fn pixel_matrix(&self) -> Matrix3<f64> {
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, self.focal));
        d * skew(&self.t) * self.rotation() * d
    }

    /// Signed Sampson residual in pixels.
    pub fn residual(&self, c: &Correspondence) -> Option<f64> {
        epipolar_signed(&self.pixel_matrix(), c)
    }

    /// Analytic gradient of [`EssentialParams::residual`] with respect to
    /// `(q_w, q_x, q_y, q_z, t_x, t_y, t_z)`.
    pub fn gradient(&self, c: &Correspondence) -> Option<[f64; 7]> {
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, self.focal));
        let r = self.rotation();
        let f = d * skew(&self.t) * r * d;
        let x1 = Vector3::new(c.u.x, c.u.y, 1.0);
        let x2 = Vector3::new(c.v.x, c.v.y, 1.0);
        let l = f * x1;
        let m = f.transpose() * x2;
        let e = x2.dot(&l);
        let a = l.x * l.x + l.y * l.y + m.x * m.x + m.y * m.y;
        if !(a > 0.0 && a.is_finite()) {
            return None;
        }
        let sa = a.sqrt();
        // ∂a/∂F
        let mut da = Matrix3::zeros();
        for j in 0..3 {
            da[(0, j)] += 2.0 * l.x * x1[j];
            da[(1, j)] += 2.0 * l.y * x1[j];
        }
        for i in 0..3 {
            da[(i, 0)] += 2.0 * m.x * x2[i];
            da[(i, 1)] += 2.0 * m.y * x2[i];
        }
        let ds_df = x2 * x1.transpose() / sa - da * (e / (2.0 * a * sa));
        let ds_de = d * ds_df * d;
        let n2 = self.q.norm_squared();
        let m_hom = homogeneous_rotation(&self.q);
        let tx = skew(&self.t);
        let dm = dm_dq(&self.q);
        let mut g = [0.0; 7];
        for k in 0..4 {
            // derivative of M / |q|²
            let dr = dm[k] / n2 - m_hom * (2.0 * self.q[k] / (n2 * n2));
            g[k] = ds_de.component_mul(&(tx * dr)).sum();
        }
        for k in 0..3 {
            let ek = Vector3::ith(k, 1.0);
            g[4 + k] = ds_de.component_mul(&(skew(&ek) * r)).sum();
        }
        Some(g)
    }
}

impl LocalParam for EssentialParams {
    const BLOCK: usize = 1;

    fn n_params(&self) -> usize {
        7
    }

    fn block(&self, c: &Correspondence) -> Option<[f64; 2]> {
        self.residual(c).map(|s| [s, 0.0])
    }

    fn jacobian_rows(&self, c: &Correspondence) -> Option<Vec<f64>> {
        self.gradient(c).map(|g| g.to_vec())
    }

    fn step(&self, delta: &DVector<f64>) -> Option<Self> {
        let q = self.q + Vector4::new(delta[0], delta[1], delta[2], delta[3]);
        let t = self.t + Vector3::new(delta[4], delta[5], delta[6]);
        let (nq, nt) = (q.norm(), t.norm());
        if !(nq > 1e-12 && nt > 1e-12 && nq.is_finite() && nt.is_finite()) {
            return None;
        }
        Some(Self {
            q: q / nq,
            t: t / nt,
            focal: self.focal,
        })
    }
}

/// Homography with `H₃₃ = 1` and the remaining 8 entries free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyParams {
    pub h: [f64; 8],
}

impl HomographyParams {
    pub fn from_matrix(m: &Matrix3<f64>) -> Option<Self> {
        let h33 = m[(2, 2)];
        if !(h33.abs() > 1e-8 * m.norm()) {
            return None;
        }
        let n = m / h33;
        Some(Self {
            h: [n[(0, 0)], n[(0, 1)], n[(0, 2)], n[(1, 0)], n[(1, 1)], n[(1, 2)], n[(2, 0)], n[(2, 1)]],
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let h = &self.h;
        Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0)
    }
}

impl LocalParam for HomographyParams {
    const BLOCK: usize = 2;

    fn n_params(&self) -> usize {
        8
    }

    fn block(&self, c: &Correspondence) -> Option<[f64; 2]> {
        homography_whitened(&self.matrix(), c).map(|g| [g.x, g.y])
    }

    /// Central differences; the whitened residual is smooth away from
    /// degenerate configurations.
    fn jacobian_rows(&self, c: &Correspondence) -> Option<Vec<f64>> {
        let mut rows = vec![0.0; 16];
        for k in 0..8 {
            let h = 1e-7 * self.h[k].abs().max(1e-3);
            let mut plus = *self;
            let mut minus = *self;
            plus.h[k] += h;
            minus.h[k] -= h;
            let (a, b) = (plus.block(c)?, minus.block(c)?);
            rows[k] = (a[0] - b[0]) / (2.0 * h);
            rows[8 + k] = (a[1] - b[1]) / (2.0 * h);
        }
        Some(rows)
    }

    fn step(&self, delta: &DVector<f64>) -> Option<Self> {
        let mut out = *self;
        for k in 0..8 {
            out.h[k] += delta[k];
        }
        out.h.iter().all(|v| v.is_finite()).then_some(out)
    }
}

struct Evaluation {
    blocks: Vec<Option<[f64; 2]>>,
    residuals: Vec<f64>,
}

fn evaluate<P: LocalParam>(p: &P, items: &[Correspondence]) -> Evaluation {
    let blocks: Vec<Option<[f64; 2]>> = items.iter().map(|c| p.block(c)).collect();
    let residuals = blocks
        .iter()
        .map(|b| b.map_or(f64::INFINITY, |b| (b[0] * b[0] + b[1] * b[1]).sqrt()))
        .collect();
    Evaluation { blocks, residuals }
}

fn robust_loss(spec: &ScoreSpec, residuals: &[f64]) -> f64 {
    residuals.iter().map(|&r| 1.0 - rho(spec, r)).sum()
}

fn weighted(weights: &[f64], ev: &Evaluation) -> f64 {
    weights
        .iter()
        .zip(&ev.residuals)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, r)| w * r * r)
        .sum()
}

fn weights_for(spec: &ScoreSpec, residuals: &[f64]) -> Vec<f64> {
    residuals
        .iter()
        .map(|&r| if r.is_finite() { irls_weight(spec, r.max(1e-12)) } else { 0.0 })
        .collect()
}

/// Normal equations `G = Jᵀ W J`, `b = Jᵀ W s`.
fn normal_equations<P: LocalParam>(
    p: &P,
    items: &[Correspondence],
    weights: &[f64],
    ev: &Evaluation,
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let n = p.n_params();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for ((c, &w), blk) in items.iter().zip(weights).zip(&ev.blocks) {
        let Some(blk) = blk else { continue };
        if w <= 0.0 {
            continue;
        }
        let rows = p.jacobian_rows(c)?;
        if rows.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for d in 0..P::BLOCK {
            let row = &rows[d * n..(d + 1) * n];
            for i in 0..n {
                b[i] += w * row[i] * blk[d];
                for j in 0..=i {
                    g[(i, j)] += w * row[i] * row[j];
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    Some((g, b))
}

fn damped_solve(g: &DMatrix<f64>, b: &DVector<f64>, l1: f64, l2: f64) -> Option<DVector<f64>> {
    let mut a = g.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += l1 * g[(i, i)] + l2;
    }
    let delta = a.cholesky()?.solve(&(-b));
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

fn run_lma<P: LocalParam>(
    spec: &ScoreSpec,
    init: P,
    items: &[Correspondence],
    cfg: &LmaConfig,
) -> Result<(P, OptTrace)> {
    cfg.validate()?;
    let mut p = init;
    let mut ev = evaluate(&p, items);
    let mut loss = robust_loss(spec, &ev.residuals);
    let mut trace = vec![TraceEntry {
        iter: 0,
        objective: loss,
        step_norm: 0.0,
        accepted: true,
        weighted_before: f64::NAN,
        weighted_after: f64::NAN,
    }];
    let (mut l1, mut l2) = (cfg.lambda1, cfg.lambda2);
    let mut status = OptStatus::MaxIter;
    'outer: for iter in 1..=cfg.max_iter {
        let weights = weights_for(spec, &ev.residuals);
        if weights.iter().all(|&w| w < 1e-12) {
            status = OptStatus::NoWeights;
            break;
        }
        let before = weighted(&weights, &ev);
        let Some((g, b)) = normal_equations(&p, items, &weights, &ev) else {
            status = OptStatus::NonFinite;
            break;
        };
        loop {
            if l1 > 1e12 {
                status = OptStatus::Stalled;
                break 'outer;
            }
            let candidate = damped_solve(&g, &b, l1, l2).and_then(|d| {
                let n = d.norm();
                p.step(&d).map(|q| (q, n))
            });
            let Some((q, step_norm)) = candidate else {
                l1 = (l1 * cfg.accept_factor).max(1e-12);
                l2 *= cfg.accept_factor;
                continue;
            };
            let ev_new = evaluate(&q, items);
            let after = weighted(&weights, &ev_new);
            let loss_new = robust_loss(spec, &ev_new.residuals);
            let accepted = after < before && loss_new <= loss;
            trace.push(TraceEntry {
                iter,
                objective: loss_new,
                step_norm,
                accepted,
                weighted_before: before,
                weighted_after: after,
            });
            if accepted {
                p = q;
                ev = ev_new;
                loss = loss_new;
                l1 /= cfg.accept_factor;
                l2 /= cfg.accept_factor;
                if step_norm < cfg.tol_step {
                    status = OptStatus::Converged;
                    break 'outer;
                }
                break;
            }
            if step_norm < cfg.tol_step {
                status = OptStatus::Converged;
                break 'outer;
            }
            l1 = (l1 * cfg.accept_factor).max(1e-12);
            l2 *= cfg.accept_factor;
        }
    }
    Ok((
        p,
        OptTrace {
            iterations: trace,
            status,
        },
    ))
}

/// Damped IRLS refinement of an essential pose; residuals are Sampson
/// distances in pixels for focal length `focal`.
pub fn irls_lma(
    spec: &ScoreSpec,
    init: &Pose,
    set: &CorrespondenceSet,
    cfg: &LmaConfig,
    focal: f64,
) -> Result<(Pose, OptTrace)> {
    if !(focal.is_finite() && focal > 0.0) {
        return Err(invalid("focal length must be positive"));
    }
    let (p, trace) = run_lma(spec, EssentialParams::from_pose(init, focal), set.items(), cfg)?;
    Ok((p.to_pose()?, trace))
}

/// Damped IRLS refinement of a homography with `H₃₃` fixed to 1.
pub fn irls_lma_homography(
    spec: &ScoreSpec,
    init: &GeometricModel,
    set: &CorrespondenceSet,
    cfg: &LmaConfig,
) -> Result<(GeometricModel, OptTrace)> {
    if init.kind != ModelKind::Homography {
        return Err(Error::KindMismatch {
            expected: ModelKind::Homography,
            got: init.kind,
        });
    }
    let Some(params) = HomographyParams::from_matrix(&init.matrix) else {
        return Ok((
            *init,
            OptTrace {
                iterations: Vec::new(),
                status: OptStatus::Degenerate,
            },
        ));
    };
    let (p, trace) = run_lma(spec, params, set.items(), cfg)?;
    let m = p.matrix();
    Ok((GeometricModel::homography(m / m.norm())?, trace))
}

/// Result of one generalized EM step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmStep {
    /// Posteriors `qᵢ` at the input pose.
    pub weights: Vec<f64>,
    pub pose: Pose,
    pub step_norm: f64,
    /// No update was made because every posterior was below 1e-12.
    pub no_update: bool,
}

/// E-step posteriors and one damped Gauss-Newton pass on `Σ qᵢ rᵢ²`.
pub fn em_irls_step(spec: &ScoreSpec, pose: &Pose, set: &CorrespondenceSet, focal: f64) -> Result<EmStep> {
    if spec.family() != ScoreFamily::GauMarginal {
        return Err(invalid("the EM step is defined for gau-marginal scores"));
    }
    let p = EssentialParams::from_pose(pose, focal);
    let items = set.items();
    let ev = evaluate(&p, items);
    let weights = ev
        .residuals
        .iter()
        .map(|&r| if r.is_finite() { inlier_posterior(spec, r) } else { Ok(0.0) })
        .collect::<Result<Vec<f64>>>()?;
    let unchanged = |no_update| EmStep {
        weights: weights.clone(),
        pose: *pose,
        step_norm: 0.0,
        no_update,
    };
    if weights.iter().all(|&w| w < 1e-12) {
        return Ok(unchanged(true));
    }
    let before = weighted(&weights, &ev);
    let Some((g, b)) = normal_equations(&p, items, &weights, &ev) else {
        return Ok(unchanged(false));
    };
    let cfg = LmaConfig::default();
    let (mut l1, mut l2) = (cfg.lambda1, cfg.lambda2);
    while l1 <= 1e12 {
        if let Some(d) = damped_solve(&g, &b, l1, l2) {
            if let Some(q) = p.step(&d) {
                if weighted(&weights, &evaluate(&q, items)) < before {
                    return Ok(EmStep {
                        weights,
                        pose: q.to_pose()?,
                        step_norm: d.norm(),
                        no_update: false,
                    });
                }
            }
        }
        l1 = (l1 * cfg.accept_factor).max(1e-12);
        l2 *= cfg.accept_factor;
    }
    Ok(unchanged(false))
}

/// `Σᵢ smax((τ² − rᵢ²) / 2σ², 0)`, the marginal log-likelihood up to an
/// additive constant.
pub fn marginal_log_likelihood(spec: &ScoreSpec, model: &GeometricModel, set: &CorrespondenceSet) -> Result<f64> {
    if spec.family() != ScoreFamily::GauMarginal {
        return Err(invalid("marginal log-likelihood needs a gau-marginal score"));
    }
    let (tau, sigma) = (spec.tau(), spec.sigma());
    Ok(residual_vector(model, set)
        .values
        .iter()
        .map(|&r| {
            if r.is_finite() {
                smax((tau * tau - r * r) / (2.0 * sigma * sigma), 0.0)
            } else {
                0.0
            }
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compose_essential, pose_error, sampson_residual};
    use crate::rng::seeded;
    use crate::synth::{generate_scene, perturb_model, PerturbMode, SceneConfig};
    use rand::Rng;

    fn scene(n: usize, gamma: f64, sigma: f64, seed: u64) -> crate::SyntheticScene {
        generate_scene(&SceneConfig::new(ModelKind::Essential, n, gamma, sigma, seed)).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded(5);
        for trial in 0..100 {
            let s = scene(10, 0.5, 1.0, 100 + trial);
            let c = s.correspondences.items()[rng.random_range(0..10)];
            let p = EssentialParams::from_pose(&s.gt_pose, s.config.focal());
            let mut p = p;
            p.q += Vector4::new(0.01, -0.02, 0.005, 0.01);
            let g = p.gradient(&c).unwrap();
            for k in 0..7 {
                let h = 1e-6;
                let mut a = p;
                let mut b = p;
                if k < 4 {
                    a.q[k] += h;
                    b.q[k] -= h;
                } else {
                    a.t[k - 4] += h;
                    b.t[k - 4] -= h;
                }
                let fd = (a.residual(&c).unwrap() - b.residual(&c).unwrap()) / (2.0 * h);
                let scale = g.iter().map(|v| v.abs()).fold(1e-3, f64::max);
                assert!((fd - g[k]).abs() <= 1e-4 * scale, "k={k} fd={fd} g={}", g[k]);
            }
        }
    }

    #[test]
    fn residual_matches_model() {
        let s = scene(20, 0.5, 1.0, 3);
        let p = EssentialParams::from_pose(&s.gt_pose, s.config.focal());
        let m = compose_essential(&s.gt_pose).with_focal(s.config.focal());
        for c in s.correspondences.items() {
            assert!((p.residual(c).unwrap().abs() - sampson_residual(&m, c)).abs() < 1e-9);
        }
    }

    #[test]
    fn gt_is_stationary_on_noiseless_data() {
        let s = scene(200, 1.0, 0.0, 8);
        let spec = ScoreSpec::msac(2.0).unwrap();
        let (pose, trace) = irls_lma(&spec, &s.gt_pose, &s.correspondences, &LmaConfig::default(), s.config.focal()).unwrap();
        assert!(pose_error(&pose, &s.gt_pose).e <= 1e-6);
        assert!(trace.is_monotone());
    }

    #[test]
    fn ransac_has_no_weights() {
        let s = scene(50, 0.8, 1.0, 2);
        let spec = ScoreSpec::ransac(2.0).unwrap();
        let (pose, trace) = irls_lma(&spec, &s.gt_pose, &s.correspondences, &LmaConfig::default(), s.config.focal()).unwrap();
        assert_eq!(trace.status, OptStatus::NoWeights);
        assert_eq!(pose, s.gt_pose);
    }

    #[test]
    fn lma_improves_perturbed_start() {
        let s = scene(300, 0.8, 1.0, 12);
        let start = perturb_model(&s.gt_pose, PerturbMode::RandomRot, 0.15, 4).unwrap();
        for spec in [
            ScoreSpec::msac(3.0).unwrap(),
            ScoreSpec::gau_marginal(3.0).unwrap(),
            ScoreSpec::magsac(6.0, 4).unwrap(),
        ] {
            let cfg = LmaConfig::default();
            let (pose, trace) = irls_lma(&spec, &start, &s.correspondences, &cfg, s.config.focal()).unwrap();
            assert!(trace.is_monotone());
            // both starts reach the same data optimum
            let (opt, _) = irls_lma(&spec, &s.gt_pose, &s.correspondences, &cfg, s.config.focal()).unwrap();
            let e = pose_error(&pose, &opt).e;
            assert!(e < 0.01, "{} {e} {:?}", spec.family(), trace.status);
        }
    }

    #[test]
    fn em_step_fixed_point_and_weights() {
        let s = scene(100, 1.0, 0.0, 9);
        let spec = ScoreSpec::gau_marginal(2.0).unwrap();
        let step = em_irls_step(&spec, &s.gt_pose, &s.correspondences, s.config.focal()).unwrap();
        assert!(step.weights.iter().all(|&w| w > 0.5));
        assert!(step.step_norm <= 1e-9);

        let s = scene(200, 0.7, 1.0, 10);
        let m = compose_essential(&s.gt_pose).with_focal(s.config.focal());
        let step = em_irls_step(&spec, &s.gt_pose, &s.correspondences, s.config.focal()).unwrap();
        for (w, c) in step.weights.iter().zip(s.correspondences.items()) {
            let q = inlier_posterior(&spec, sampson_residual(&m, c)).unwrap();
            assert!((w - q).abs() <= 1e-12 * q.max(1e-300));
        }
        assert!(em_irls_step(&ScoreSpec::msac(1.0).unwrap(), &s.gt_pose, &s.correspondences, 1000.0).is_err());
    }

    #[test]
    fn em_steps_increase_marginal_likelihood() {
        let s = scene(300, 0.7, 1.0, 13);
        let f = s.config.focal();
        let spec = ScoreSpec::gau_marginal(2.0).unwrap();
        let mut pose = perturb_model(&s.gt_pose, PerturbMode::RandomRot, 5.0, 1).unwrap();
        let q = |p: &Pose| marginal_log_likelihood(&spec, &compose_essential(p).with_focal(f), &s.correspondences).unwrap();
        let mut prev = q(&pose);
        for _ in 0..10 {
            pose = em_irls_step(&spec, &pose, &s.correspondences, f).unwrap().pose;
            let cur = q(&pose);
            assert!(cur >= prev);
            prev = cur;
        }
    }

    #[test]
    fn marginal_likelihood_identities() {
        let spec = ScoreSpec::gau_marginal_with_sigma(2.0, 1.5).unwrap();
        let m = GeometricModel::homography(Matrix3::identity()).unwrap();
        let empty = CorrespondenceSet::new(vec![]).unwrap();
        assert_eq!(marginal_log_likelihood(&spec, &m, &empty).unwrap(), 0.0);
        // residual of (0,0) -> (a,0) under identity is a / sqrt(2)
        let a = 2.0 * std::f64::consts::SQRT_2;
        let one = CorrespondenceSet::new(vec![Correspondence::from_coords(0.0, 0.0, a, 0.0)]).unwrap();
        assert!((marginal_log_likelihood(&spec, &m, &one).unwrap() - 2f64.ln()).abs() < 1e-12);

        let s = scene(100, 0.6, 1.0, 4);
        let em = compose_essential(&s.gt_pose).with_focal(s.config.focal());
        let beta = smax(4.0 / (2.0 * 2.25), 0.0);
        let direct: f64 = residual_vector(&em, &s.correspondences).values.iter().map(|&r| rho(&spec, r)).sum::<f64>() * beta;
        let q = marginal_log_likelihood(&spec, &em, &s.correspondences).unwrap();
        assert!((q - direct).abs() <= 1e-12 * q.abs());
    }

    #[test]
    fn homography_refinement() {
        let s = generate_scene(&SceneConfig::new(ModelKind::Homography, 300, 0.8, 1.0, 31)).unwrap();
        let spec = ScoreSpec::msac(4.0).unwrap();
        let mut m = s.gt_model;
        m.matrix[(0, 2)] += 2e-3 * m.matrix.norm();
        let before = residual_vector(&m, &s.correspondences);
        let (out, trace) = irls_lma_homography(&spec, &m, &s.correspondences, &LmaConfig::default()).unwrap();
        assert!(trace.is_monotone());
        let after = residual_vector(&out, &s.correspondences);
        let loss = |rv: &crate::ResidualVector| robust_loss(&spec, &rv.values);
        assert!(loss(&after) < loss(&before));
        let mut degenerate = s.gt_model;
        degenerate.matrix[(2, 2)] = 0.0;
        let (_, t) = irls_lma_homography(&spec, &degenerate, &s.correspondences, &LmaConfig::default()).unwrap();
        assert_eq!(t.status, OptStatus::Degenerate);
    }
}
