//! Maximum-likelihood fitting of a monotone, discretized inlier density from
//! ground-truth residual histograms, and the score table it induces.
//!
//! The density on `K` bins over `[0, tau_max)` is `p_k ∝ exp(w_k)` with
//! `w_k = Σ_{l>k} softplus(η_l)`, which is non-increasing for every `η`.
//! Outliers are uniform on `[0, r_max]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scoring::{sigmoid, ResidualHistogram, ScoreTable};

pub const DEFAULT_R_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneDensityParams {
    pub eta: Vec<f64>,
    pub gamma: f64,
    pub r_max: f64,
    pub tau_max: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl MonotoneDensityParams {
    pub fn new(eta: Vec<f64>, gamma: f64, r_max: f64, tau_max: f64) -> Result<Self> {
        if eta.len() < 2 {
            return Err(invalid("at least two bins are required"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if !(r_max.is_finite() && r_max > 0.0 && tau_max.is_finite() && tau_max > 0.0) {
            return Err(invalid("r_max and tau_max must be positive"));
        }
        if eta.iter().any(|v| v.is_nan()) {
            return Err(invalid("eta must not contain NaN"));
        }
        Ok(Self {
            eta,
            gamma,
            r_max,
            tau_max,
        })
    }

    pub fn k(&self) -> usize {
        self.eta.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.tau_max / self.k() as f64
    }

    /// Outlier density level `(1 − γ) / r_max`.
    pub fn outlier_level(&self) -> f64 {
        (1.0 - self.gamma) / self.r_max
    }

    /// Cumulative log-weights `w_k`.
    fn log_weights(&self) -> Vec<f64> {
        let k = self.k();
        let mut w = vec![0.0; k];
        for i in (0..k - 1).rev() {
            w[i] = w[i + 1] + softplus(self.eta[i + 1]);
        }
        w
    }
}

/// Bin densities `p_k` with `Σ p_k Δ = 1`, non-increasing in `k`.
pub fn density_from_params(p: &MonotoneDensityParams) -> Vec<f64> {
    let w = p.log_weights();
    let max = w[0];
    let e: Vec<f64> = w.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    let delta = p.bin_width();
    e.iter().map(|x| x / (s * delta)).collect()
}

/// Binned marginal log-likelihood `Σ_k H_k log(γ p_k + c)` per histogrammed
/// residual.
fn objective(p: &MonotoneDensityParams, counts: &[f64], total: f64) -> f64 {
    let c = p.outlier_level();
    density_from_params(p)
        .iter()
        .zip(counts)
        .filter(|(_, &h)| h > 0.0)
        .map(|(d, h)| h * (p.gamma * d + c).ln())
        .sum::<f64>()
        / total
}

fn gradient(p: &MonotoneDensityParams, counts: &[f64], total: f64) -> Vec<f64> {
    let c = p.outlier_level();
    let dens = density_from_params(p);
    let delta = p.bin_width();
    let a: Vec<f64> = dens.iter().zip(counts).map(|(d, h)| h * p.gamma / (p.gamma * d + c) / total).collect();
    let mean: f64 = a.iter().zip(&dens).map(|(a, d)| a * d).sum();
    // dL/dw_j = a_j p_j − p_j Δ Σ_k a_k p_k
    let dw: Vec<f64> = a.iter().zip(&dens).map(|(a, d)| a * d - d * delta * mean).collect();
    let mut g = vec![0.0; p.k()];
    let mut prefix = 0.0;
    for l in 0..p.k() {
        // dw_k/dη_l = sigm(η_l) for k < l
        g[l] = sigmoid(p.eta[l]) * prefix;
        prefix += dw[l];
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFit {
    pub params: MonotoneDensityParams,
    /// Objective after every accepted step, starting at the initial value.
    pub objective_trace: Vec<f64>,
}

/// Gradient ascent with backtracking from `η = 0` (`r_max` = 100).
pub fn fit_inlier_density(hist: &ResidualHistogram, gamma: f64, iters: usize) -> Result<DensityFit> {
    fit_inlier_density_with(hist, gamma, DEFAULT_R_MAX, iters)
}

pub fn fit_inlier_density_with(hist: &ResidualHistogram, gamma: f64, r_max: f64, iters: usize) -> Result<DensityFit> {
    let mut p = MonotoneDensityParams::new(vec![0.0; hist.k()], gamma, r_max, hist.tau_max())?;
    let counts: Vec<f64> = hist.counts().iter().map(|&c| c as f64).collect();
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Empty("residual histogram"));
    }
    let mut value = objective(&p, &counts, total);
    let mut trace = vec![value];
    let mut step = 1.0;
    for _ in 0..iters {
        let g = gradient(&p, &counts, total);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2 < 1e-30 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let eta: Vec<f64> = p.eta.iter().zip(&g).map(|(e, d)| e + step * d).collect();
            let cand = MonotoneDensityParams { eta, ..p.clone() };
            let v = objective(&cand, &counts, total);
            if v >= value + 1e-4 * step * g2 {
                p = cand;
                value = v;
                step *= 2.0;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(value);
    }
    Ok(DensityFit {
        params: p,
        objective_trace: trace,
    })
}

/// Marginal-likelihood weights `log(γ p_k + c)` normalized to `[0, 1]`.
/// A constant table is uninformative and reported as degenerate.
pub fn learned_score_table(p: &MonotoneDensityParams, tau_max: f64, k: usize) -> Result<ScoreTable> {
    if k != p.k() || tau_max != p.tau_max {
        return Err(Error::DiscretizationMismatch);
    }
    let c = p.outlier_level();
    let w: Vec<f64> = density_from_params(p).iter().map(|d| (p.gamma * d + c).ln()).collect();
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max - min > 1e-12 * (1.0 + max.abs())) {
        return Err(Error::Degenerate("learned score table is constant (uninformative)".into()));
    }
    ScoreTable::new(tau_max, w.iter().map(|x| (x - min) / (max - min)).collect())
}

/// Residual at which `γ p(r) = (1 − γ) / r_max`, i.e. the inlier posterior
/// crosses 0.5, interpolated linearly in log-density between bin centers.
pub fn equivalent_threshold(p: &MonotoneDensityParams) -> Option<f64> {
    let c = p.outlier_level();
    let d: Vec<f64> = density_from_params(p).iter().map(|x| (p.gamma * x).ln() - c.ln()).collect();
    let delta = p.bin_width();
    if d[0] < 0.0 {
        return None;
    }
    let k = d.iter().position(|&v| v < 0.0)?;
    let t = d[k - 1] / (d[k - 1] - d[k]);
    Some((k as f64 - 0.5 + t) * delta)
}
