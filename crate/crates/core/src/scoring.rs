//! Normalized residual scores, inlier posteriors, IRLS weights and the
//! histogram scoring engine.
//!
//! Every score is exposed in normalized form `ρ̂` with `ρ̂(0) = 1` and
//! `ρ̂(∞) = 0`; model quality is `Q = Σᵢ ρ̂(rᵢ)` and larger is better.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::{magsac_rho, marginalized_inlier_density, MarginalizedChiSpec};
use crate::error::{invalid, Error, Result};
use crate::geometry::ResidualVector;

/// Default chi degrees of freedom for MAGSAC++ on two-view residuals.
pub const DEFAULT_NU: u32 = 4;
/// Quantile of chi_nu that fixes the truncation point kappa.
pub const MAGSAC_QUANTILE: f64 = 0.99;

/// `log(eˣ + eʸ)` without overflow.
pub fn smax(x: f64, y: f64) -> f64 {
    let m = x.max(y);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (-(x - y).abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreFamily {
    Ransac,
    Msac,
    GauMarginal,
    GauProfile,
    MagsacPlusPlus,
    Learned,
}

impl ScoreFamily {
    pub const ALL: [ScoreFamily; 6] = [
        ScoreFamily::Ransac,
        ScoreFamily::Msac,
        ScoreFamily::GauMarginal,
        ScoreFamily::GauProfile,
        ScoreFamily::MagsacPlusPlus,
        ScoreFamily::Learned,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScoreFamily::Ransac => "ransac",
            ScoreFamily::Msac => "msac",
            ScoreFamily::GauMarginal => "gau-marginal",
            ScoreFamily::GauProfile => "gau-profile",
            ScoreFamily::MagsacPlusPlus => "magsac-plus-plus",
            ScoreFamily::Learned => "learned",
        }
    }
}

impl fmt::Display for ScoreFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ransac" => Ok(ScoreFamily::Ransac),
            "msac" => Ok(ScoreFamily::Msac),
            "gau" | "gau-marginal" | "gaumarginal" => Ok(ScoreFamily::GauMarginal),
            "gau-profile" | "gauprofile" => Ok(ScoreFamily::GauProfile),
            "magsac" | "magsac++" | "magsac-plus-plus" | "magsacplusplus" => Ok(ScoreFamily::MagsacPlusPlus),
            "learned" => Ok(ScoreFamily::Learned),
            other => Err(invalid(format!("unknown score family '{other}'"))),
        }
    }
}

/// A discretized score `w_k = ρ̂(μ_k)` on `K` bins of width `tau_max / K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRecord", into = "TableRecord")]
pub struct ScoreTable {
    tau_max: f64,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableRecord {
    tau_max: f64,
    #[serde(rename = "K")]
    k: usize,
    weights: Vec<f64>,
}

impl From<ScoreTable> for TableRecord {
    fn from(t: ScoreTable) -> Self {
        Self {
            tau_max: t.tau_max,
            k: t.weights.len(),
            weights: t.weights,
        }
    }
}

impl TryFrom<TableRecord> for ScoreTable {
    type Error = Error;

    fn try_from(r: TableRecord) -> Result<Self> {
        if r.k != r.weights.len() {
            return Err(invalid(format!("table declares K={} but has {} weights", r.k, r.weights.len())));
        }
        ScoreTable::new(r.tau_max, r.weights)
    }
}

fn check_discretization(tau_max: f64, k: usize) -> Result<()> {
    if !(tau_max.is_finite() && tau_max > 0.0) {
        return Err(invalid("tau_max must be positive"));
    }
    if k < 2 {
        return Err(invalid("at least two bins are required"));
    }
    Ok(())
}

/// Lower edge of bin `k`; `bin_edge(K)` is `tau_max`.
fn bin_edge(tau_max: f64, k_bins: usize, k: usize) -> f64 {
    tau_max * k as f64 / k_bins as f64
}

/// Half-open bin index for `r`, or `None` for overflow.
fn bin_index(tau_max: f64, k_bins: usize, r: f64) -> Option<usize> {
    if !(r < tau_max) {
        return None;
    }
    if r <= 0.0 {
        return Some(0);
    }
    let mut k = ((r * k_bins as f64 / tau_max).floor() as usize).min(k_bins - 1);
    while k > 0 && r < bin_edge(tau_max, k_bins, k) {
        k -= 1;
    }
    while k + 1 < k_bins && r >= bin_edge(tau_max, k_bins, k + 1) {
        k += 1;
    }
    Some(k)
}

impl ScoreTable {
    pub fn new(tau_max: f64, weights: Vec<f64>) -> Result<Self> {
        check_discretization(tau_max, weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("score table weights must be finite"));
        }
        Ok(Self { tau_max, weights })
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bin_width(&self) -> f64 {
        self.tau_max / self.k() as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width()
    }

    pub fn same_discretization(&self, tau_max: f64, k: usize) -> bool {
        self.tau_max == tau_max && self.k() == k
    }

    /// Piecewise-linear interpolation through the bin centers, constant
    /// outside them and zero from `tau_max` on.
    pub fn interpolate(&self, r: f64) -> f64 {
        self.locate(r).map_or(0.0, |(k, t)| {
            if t == 0.0 {
                self.weights[k]
            } else {
                self.weights[k] * (1.0 - t) + self.weights[k + 1] * t
            }
        })
    }

    /// Derivative of [`ScoreTable::interpolate`].
    pub fn slope(&self, r: f64) -> f64 {
        if !(r < self.tau_max) {
            return 0.0;
        }
        let x = r / self.bin_width() - 0.5;
        let last = self.k() - 1;
        if x <= 0.0 || x >= last as f64 {
            return 0.0;
        }
        let k = (x.floor() as usize).min(last - 1);
        (self.weights[k + 1] - self.weights[k]) / self.bin_width()
    }

    /// Segment index and fraction along it; fraction 0 on the clamped ends.
    fn locate(&self, r: f64) -> Option<(usize, f64)> {
        if !(r < self.tau_max) {
            return None;
        }
        let x = r / self.bin_width() - 0.5;
        if x <= 0.0 {
            return Some((0, 0.0));
        }
        let last = self.k() - 1;
        if x >= last as f64 {
            return Some((last, 0.0));
        }
        let k = (x.floor() as usize).min(last - 1);
        Some((k, x - k as f64))
    }

    /// Affine re-scaling `a·w + b`.
    pub fn affine(&self, a: f64, b: f64) -> Result<Self> {
        Self::new(self.tau_max, self.weights.iter().map(|w| a * w + b).collect())
    }
}

/// A residual score with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRecord", into = "SpecRecord")]
pub struct ScoreSpec {
    family: ScoreFamily,
    tau: f64,
    sigma: f64,
    nu: u32,
    table: Option<ScoreTable>,
    magsac: Option<MarginalizedChiSpec>,
}

#[derive(Serialize, Deserialize)]
struct SpecRecord {
    family: ScoreFamily,
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<ScoreTable>,
}

impl From<ScoreSpec> for SpecRecord {
    fn from(s: ScoreSpec) -> Self {
        let gau = matches!(s.family, ScoreFamily::GauMarginal | ScoreFamily::GauProfile);
        Self {
            family: s.family,
            tau: Some(s.tau),
            sigma: gau.then_some(s.sigma),
            nu: (s.family == ScoreFamily::MagsacPlusPlus).then_some(s.nu),
            table: s.table,
        }
    }
}

impl TryFrom<SpecRecord> for ScoreSpec {
    type Error = Error;

    fn try_from(r: SpecRecord) -> Result<Self> {
        match r.family {
            ScoreFamily::Learned => {
                let table = r.table.ok_or_else(|| invalid("learned score needs a table"))?;
                match r.tau {
                    Some(tau) => ScoreSpec::learned_with_tau(table, tau),
                    None => ScoreSpec::learned(table),
                }
            }
            family => {
                let tau = r.tau.ok_or_else(|| invalid("score spec needs tau"))?;
                ScoreSpec::with_params(family, tau, r.sigma, r.nu)
            }
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ScoreSpec {
    fn simple(family: ScoreFamily, tau: f64) -> Result<Self> {
        check_positive("tau", tau)?;
        Ok(Self {
            family,
            tau,
            sigma: tau,
            nu: DEFAULT_NU,
            table: None,
            magsac: None,
        })
    }

    pub fn ransac(tau: f64) -> Result<Self> {
        Self::simple(ScoreFamily::Ransac, tau)
    }

    pub fn msac(tau: f64) -> Result<Self> {
        Self::simple(ScoreFamily::Msac, tau)
    }

    /// GaU marginal score with the default `sigma = tau`.
    pub fn gau_marginal(tau: f64) -> Result<Self> {
        Self::gau_marginal_with_sigma(tau, tau)
    }

    pub fn gau_marginal_with_sigma(tau: f64, sigma: f64) -> Result<Self> {
        check_positive("sigma", sigma)?;
        Ok(Self {
            sigma,
            ..Self::simple(ScoreFamily::GauMarginal, tau)?
        })
    }

    pub fn gau_profile(tau: f64, sigma: f64) -> Result<Self> {
        check_positive("sigma", sigma)?;
        Ok(Self {
            sigma,
            ..Self::simple(ScoreFamily::GauProfile, tau)?
        })
    }

    /// MAGSAC++ with support end `tau`, i.e. `sigma_bar = tau / kappa`.
    pub fn magsac(tau: f64, nu: u32) -> Result<Self> {
        check_positive("tau", tau)?;
        let unit = MarginalizedChiSpec::from_quantile(nu, MAGSAC_QUANTILE, 1.0)?;
        let spec = unit.with_sigma_bar(tau / unit.kappa())?;
        Ok(Self {
            nu,
            magsac: Some(spec),
            ..Self::simple(ScoreFamily::MagsacPlusPlus, tau)?
        })
    }

    /// Learned table score; `tau` is set to the table's `tau_max`.
    pub fn learned(table: ScoreTable) -> Result<Self> {
        let tau = table.tau_max();
        Self::learned_with_tau(table, tau)
    }

    pub fn learned_with_tau(table: ScoreTable, tau: f64) -> Result<Self> {
        Ok(Self {
            table: Some(table),
            ..Self::simple(ScoreFamily::Learned, tau)?
        })
    }

    /// Family at threshold `tau` with defaults `sigma = tau`, `nu = 4`.
    pub fn for_family(family: ScoreFamily, tau: f64) -> Result<Self> {
        Self::with_params(family, tau, None, None)
    }

    pub fn with_params(family: ScoreFamily, tau: f64, sigma: Option<f64>, nu: Option<u32>) -> Result<Self> {
        match family {
            ScoreFamily::Ransac => Self::ransac(tau),
            ScoreFamily::Msac => Self::msac(tau),
            ScoreFamily::GauMarginal => Self::gau_marginal_with_sigma(tau, sigma.unwrap_or(tau)),
            ScoreFamily::GauProfile => Self::gau_profile(tau, sigma.unwrap_or(tau)),
            ScoreFamily::MagsacPlusPlus => Self::magsac(tau, nu.unwrap_or(DEFAULT_NU)),
            ScoreFamily::Learned => Err(invalid("learned scores are built from a table")),
        }
    }

    pub fn family(&self) -> ScoreFamily {
        self.family
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn nu(&self) -> u32 {
        self.nu
    }

    pub fn table(&self) -> Option<&ScoreTable> {
        self.table.as_ref()
    }

    pub fn magsac_spec(&self) -> Option<&MarginalizedChiSpec> {
        self.magsac.as_ref()
    }

    /// `smax(τ²/2σ², 0)`, the GaU normalizer.
    fn gau_beta(&self) -> f64 {
        smax(self.tau * self.tau / (2.0 * self.sigma * self.sigma), 0.0)
    }

    fn gau_z(&self, r: f64) -> f64 {
        (self.tau * self.tau - r * r) / (2.0 * self.sigma * self.sigma)
    }
}

/// Normalized score `ρ̂(r)`; infinite residuals score 0.
pub fn rho(spec: &ScoreSpec, r: f64) -> f64 {
    let tau = spec.tau;
    match spec.family {
        ScoreFamily::Ransac => {
            if r < tau {
                1.0
            } else {
                0.0
            }
        }
        ScoreFamily::Msac | ScoreFamily::GauProfile => (1.0 - (r / tau) * (r / tau)).max(0.0),
        ScoreFamily::GauMarginal => {
            if r.is_infinite() {
                0.0
            } else {
                smax(spec.gau_z(r), 0.0) / spec.gau_beta()
            }
        }
        ScoreFamily::MagsacPlusPlus => {
            let m = spec.magsac.as_ref().expect("magsac spec");
            1.0 - magsac_rho(m, r.min(m.support())) / m.rho_floor()
        }
        ScoreFamily::Learned => spec.table.as_ref().expect("learned table").interpolate(r),
    }
}

/// GaU inlier posterior `sigm((τ² − r²) / 2σ²)`.
pub fn inlier_posterior(spec: &ScoreSpec, r: f64) -> Result<f64> {
    if spec.family != ScoreFamily::GauMarginal {
        return Err(invalid(format!("inlier posterior is defined for gau-marginal only, not {}", spec.family)));
    }
    Ok(sigmoid(spec.gau_z(r)))
}

/// IRLS weight `−ρ̂'(r) / r`.
pub fn irls_weight(spec: &ScoreSpec, r: f64) -> f64 {
    let tau = spec.tau;
    match spec.family {
        ScoreFamily::Ransac => 0.0,
        ScoreFamily::Msac | ScoreFamily::GauProfile => {
            if r <= tau {
                2.0 / (tau * tau)
            } else {
                0.0
            }
        }
        ScoreFamily::GauMarginal => {
            if r.is_infinite() {
                0.0
            } else {
                sigmoid(spec.gau_z(r)) / (spec.sigma * spec.sigma * spec.gau_beta())
            }
        }
        ScoreFamily::MagsacPlusPlus => {
            let m = spec.magsac.as_ref().expect("magsac spec");
            marginalized_inlier_density(m, r) / (-m.rho_floor())
        }
        ScoreFamily::Learned => {
            if r <= 0.0 {
                return 0.0;
            }
            (-spec.table.as_ref().expect("learned table").slope(r) / r).max(0.0)
        }
    }
}

/// Normalized profile-likelihood score for a generic inlier log-density
/// and outlier level `log_mu`.
pub fn profile_score_generic(log_p_r: f64, log_p_0: f64, log_mu: f64) -> f64 {
    let v = (log_p_r - log_mu) / (log_p_0 - log_mu);
    if v.is_nan() {
        0.0
    } else {
        v.max(0.0)
    }
}

/// Normalized marginal-likelihood score for a generic inlier log-density.
pub fn marginal_score_generic(log_p_r: f64, log_p_0: f64, log_mu: f64) -> f64 {
    smax(log_p_r - log_mu, 0.0) / smax(log_p_0 - log_mu, 0.0)
}

/// Direct quality `Σᵢ ρ̂(rᵢ)`.
pub fn score_residuals(spec: &ScoreSpec, rv: &ResidualVector) -> f64 {
    rv.values.iter().map(|&r| rho(spec, r)).sum()
}

pub fn build_score_table(spec: &ScoreSpec, tau_max: f64, k: usize) -> Result<ScoreTable> {
    check_discretization(tau_max, k)?;
    let delta = tau_max / k as f64;
    let weights = (0..k).map(|i| rho(spec, (i as f64 + 0.5) * delta)).collect();
    ScoreTable::new(tau_max, weights)
}

/// Residual counts on `K` half-open bins over `[0, tau_max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualHistogram {
    tau_max: f64,
    counts: Vec<u64>,
    overflow: u64,
}

impl ResidualHistogram {
    pub fn empty(tau_max: f64, k: usize) -> Result<Self> {
        check_discretization(tau_max, k)?;
        Ok(Self {
            tau_max,
            counts: vec![0; k],
            overflow: 0,
        })
    }

    pub fn from_counts(tau_max: f64, counts: Vec<u64>, overflow: u64) -> Result<Self> {
        check_discretization(tau_max, counts.len())?;
        Ok(Self {
            tau_max,
            counts,
            overflow,
        })
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    pub fn bin_width(&self) -> f64 {
        self.tau_max / self.k() as f64
    }

    /// Lower edge of bin `k`.
    pub fn edge(&self, k: usize) -> f64 {
        bin_edge(self.tau_max, self.k(), k)
    }

    pub fn add(&mut self, r: f64) {
        match bin_index(self.tau_max, self.k(), r) {
            Some(k) => self.counts[k] += 1,
            None => self.overflow += 1,
        }
    }

    /// Drops all counts, keeping the discretization.
    pub fn clear(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.overflow = 0;
    }
}

pub fn histogram_residuals(rv: &ResidualVector, tau_max: f64, k: usize) -> Result<ResidualHistogram> {
    let mut h = ResidualHistogram::empty(tau_max, k)?;
    for &r in &rv.values {
        h.add(r);
    }
    Ok(h)
}

/// `Q = wᵀh`; overflow carries weight 0.
pub fn score_from_histogram(table: &ScoreTable, hist: &ResidualHistogram) -> Result<f64> {
    if !table.same_discretization(hist.tau_max, hist.k()) {
        return Err(Error::DiscretizationMismatch);
    }
    Ok(table
        .weights
        .iter()
        .zip(&hist.counts)
        .filter(|(_, &c)| c > 0)
        .map(|(w, &c)| w * c as f64)
        .sum())
}

/// `T` score tables stacked into the `T × K` matrix `W`, stored bin-major
/// so that a sparse histogram touches one contiguous column per bin.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    tau_max: f64,
    k: usize,
    t: usize,
    columns: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(tables: &[ScoreTable]) -> Result<Self> {
        let first = tables.first().ok_or(Error::Empty("score tables"))?;
        let (tau_max, k) = (first.tau_max, first.k());
        if tables.iter().any(|t| !t.same_discretization(tau_max, k)) {
            return Err(Error::DiscretizationMismatch);
        }
        let t = tables.len();
        let mut columns = vec![0.0; k * t];
        for (row, table) in tables.iter().enumerate() {
            for (bin, w) in table.weights.iter().enumerate() {
                columns[bin * t + row] = *w;
            }
        }
        Ok(Self { tau_max, k, t, columns })
    }

    pub fn from_specs(specs: &[ScoreSpec], tau_max: f64, k: usize) -> Result<Self> {
        let tables = specs
            .iter()
            .map(|s| build_score_table(s, tau_max, k))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&tables)
    }

    pub fn rows(&self) -> usize {
        self.t
    }

    pub fn bins(&self) -> usize {
        self.k
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    /// Accumulates `W h` into `out` (length `T`, overwritten).
    pub fn sweep_into(&self, hist: &ResidualHistogram, out: &mut [f64]) -> Result<()> {
        if hist.tau_max != self.tau_max || hist.k() != self.k {
            return Err(Error::DiscretizationMismatch);
        }
        if out.len() != self.t {
            return Err(invalid("output length must equal the number of tables"));
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for (bin, &c) in hist.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            let col = &self.columns[bin * self.t..(bin + 1) * self.t];
            for (o, w) in out.iter_mut().zip(col) {
                *o += w * c;
            }
        }
        Ok(())
    }

    pub fn sweep(&self, hist: &ResidualHistogram) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.t];
        self.sweep_into(hist, &mut out)?;
        Ok(out)
    }
}

pub fn sweep_scores(tables: &[ScoreTable], hist: &ResidualHistogram) -> Result<Vec<f64>> {
    ScoreMatrix::new(tables)?.sweep(hist)
}

/// Index of the largest score; ties go to the lowest index, NaN never wins.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}
