//! Special functions and the chi, truncated-chi and scale-marginalized
//! densities behind the MAGSAC++ score.
//!
//! The scale-marginalized inlier density with maximum noise scale `sigma_bar`
//! satisfies `p(r; sigma_bar) = p(r / sigma_bar; 1) / sigma_bar`, and its base
//! form is proportional to
//!
//! ```text
//! G(x, kappa, nu) = (Γ((nu-1)/2, x²/2) - Γ((nu-1)/2, kappa²/2)) · [x < kappa]
//! ```
//!
//! with normalizer `Z = sqrt(2) · γ(nu/2, kappa²/2)` (lower incomplete gamma).
//! The associated score `rho(r) = -∫₀ʳ x p(x) dx` is
//!
//! ```text
//! rho(x; 1) = -(γ((nu+1)/2, x²/2) + x²/2 · G(x, kappa, nu)) / Z,   x < kappa
//! ```
//!
//! which equals `(2 G(x,kappa,nu+2) - x² G(x,kappa,nu)) / (2Z)` shifted so that
//! `rho(0) = 0`. Scores are non-positive and constant beyond `sigma_bar·kappa`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EPS: f64 = 1e-16;
const MAX_ITER: usize = 1000;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn gamma(x: f64) -> f64 {
    ln_gamma(x).exp()
}

/// Lower series for the regularized P(s, x); converges for x < s + 1.
fn gamma_p_series(s: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mut ap = s;
    let mut term = 1.0 / s;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + s * x.ln() - ln_gamma(s)).exp()
}

/// Continued fraction (modified Lentz) for the regularized Q(s, x); x ≥ s + 1.
fn gamma_q_cf(s: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + s * x.ln() - ln_gamma(s)).exp() * h
}

/// Regularized lower incomplete gamma P(s, x).
pub fn regularized_lower_gamma(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < s + 1.0 {
        gamma_p_series(s, x)
    } else {
        1.0 - gamma_q_cf(s, x)
    }
}

/// Regularized upper incomplete gamma Q(s, x).
pub fn regularized_upper_gamma(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < s + 1.0 {
        1.0 - gamma_p_series(s, x)
    } else {
        gamma_q_cf(s, x)
    }
}

/// Lower incomplete gamma γ(s, x) for s > 0.
pub fn lower_incomplete_gamma(s: f64, x: f64) -> f64 {
    gamma(s) * regularized_lower_gamma(s, x)
}

/// Exponential integral E1(x) = Γ(0, x) for x > 0.
fn exp_integral_e1(x: f64) -> f64 {
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..MAX_ITER {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < sum.abs().max(1.0) * EPS {
                break;
            }
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Upper incomplete gamma Γ(s, x) = ∫ₓ^∞ t^(s-1) e^(-t) dt.
///
/// `s = 0` is accepted and evaluates the exponential integral (infinite at
/// `x = 0`); it is needed by the one-degree-of-freedom marginalized density.
pub fn upper_incomplete_gamma(s: f64, x: f64) -> Result<f64> {
    if !s.is_finite() || !x.is_finite() {
        return Err(invalid("incomplete gamma arguments must be finite"));
    }
    if s < 0.0 || x < 0.0 {
        return Err(invalid(format!("incomplete gamma needs s >= 0, x >= 0 (got {s}, {x})")));
    }
    Ok(upper_gamma_unchecked(s, x))
}

fn upper_gamma_unchecked(s: f64, x: f64) -> f64 {
    if s == 0.0 {
        if x == 0.0 {
            f64::INFINITY
        } else {
            exp_integral_e1(x)
        }
    } else if x == 0.0 {
        gamma(s)
    } else if x < s + 1.0 {
        gamma(s) * (1.0 - gamma_p_series(s, x))
    } else {
        (-x + s * x.ln()).exp() * gamma_q_cf_unscaled(s, x)
    }
}

/// Continued fraction part of Γ(s, x) without the Γ(s) normalization, to
/// keep relative accuracy deep in the tail.
fn gamma_q_cf_unscaled(s: f64, x: f64) -> f64 {
    gamma_q_cf(s, x) / (-x + s * x.ln() - ln_gamma(s)).exp()
}

/// Chi distribution with `nu` degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChiSpec {
    nu: u32,
}

impl ChiSpec {
    pub fn new(nu: u32) -> Result<Self> {
        if nu == 0 {
            return Err(invalid("chi degrees of freedom must be >= 1"));
        }
        Ok(Self { nu })
    }

    pub fn nu(&self) -> u32 {
        self.nu
    }

    pub fn pdf(&self, x: f64) -> f64 {
        chi_pdf(*self, x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            regularized_lower_gamma(0.5 * self.nu as f64, 0.5 * x * x)
        }
    }
}

pub fn chi_pdf(spec: ChiSpec, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let nu = spec.nu as f64;
    let ln_norm = (0.5 * nu - 1.0) * std::f64::consts::LN_2 + ln_gamma(0.5 * nu);
    if x == 0.0 {
        return if spec.nu == 1 { (-ln_norm).exp() } else { 0.0 };
    }
    ((nu - 1.0) * x.ln() - 0.5 * x * x - ln_norm).exp()
}

/// Inverse CDF by bisection; |CDF(result) - p| ≤ 1e-10.
pub fn chi_quantile(spec: ChiSpec, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("quantile level must lie in (0, 1), got {p}")));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while spec.cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if spec.cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `G(x, kappa, nu)`, the unnormalized base density of the scale-marginalized
/// truncated chi distribution.
pub fn g_function(x: f64, kappa: f64, nu: u32) -> f64 {
    if x >= kappa || x < 0.0 {
        return 0.0;
    }
    let a = 0.5 * (nu as f64 - 1.0);
    upper_gamma_unchecked(a, 0.5 * x * x) - upper_gamma_unchecked(a, 0.5 * kappa * kappa)
}

/// Truncated chi distribution marginalized over a uniform noise scale on
/// `[0, sigma_bar]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarginalizedChiParams", into = "MarginalizedChiParams")]
pub struct MarginalizedChiSpec {
    nu: u32,
    kappa: f64,
    sigma_bar: f64,
    /// ∫₀^kappa G(x) dx
    norm: f64,
    /// base score value beyond the truncation point
    rho_tail: f64,
}

#[derive(Serialize, Deserialize)]
struct MarginalizedChiParams {
    nu: u32,
    kappa: f64,
    sigma_bar: f64,
}

impl From<MarginalizedChiSpec> for MarginalizedChiParams {
    fn from(s: MarginalizedChiSpec) -> Self {
        Self {
            nu: s.nu,
            kappa: s.kappa,
            sigma_bar: s.sigma_bar,
        }
    }
}

impl TryFrom<MarginalizedChiParams> for MarginalizedChiSpec {
    type Error = crate::Error;

    fn try_from(p: MarginalizedChiParams) -> Result<Self> {
        Self::new(p.nu, p.kappa, p.sigma_bar)
    }
}

impl MarginalizedChiSpec {
    pub fn new(nu: u32, kappa: f64, sigma_bar: f64) -> Result<Self> {
        ChiSpec::new(nu)?;
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(invalid("kappa must be positive"));
        }
        if !(sigma_bar.is_finite() && sigma_bar > 0.0) {
            return Err(invalid("sigma_bar must be positive"));
        }
        let big_k = 0.5 * kappa * kappa;
        let half_nu = 0.5 * nu as f64;
        let norm = std::f64::consts::SQRT_2 * lower_incomplete_gamma(half_nu, big_k);
        let rho_tail = -lower_incomplete_gamma(half_nu + 0.5, big_k) / norm;
        Ok(Self {
            nu,
            kappa,
            sigma_bar,
            norm,
            rho_tail,
        })
    }

    /// Spec whose truncation point is the `p`-quantile of chi_nu.
    pub fn from_quantile(nu: u32, p: f64, sigma_bar: f64) -> Result<Self> {
        let kappa = chi_quantile(ChiSpec::new(nu)?, p)?;
        Self::new(nu, kappa, sigma_bar)
    }

    pub fn nu(&self) -> u32 {
        self.nu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar
    }

    /// Normalizer of the base density, `∫₀^kappa G(x, kappa, nu) dx`.
    pub fn normalizer(&self) -> f64 {
        self.norm
    }

    pub fn with_sigma_bar(&self, sigma_bar: f64) -> Result<Self> {
        Self::new(self.nu, self.kappa, sigma_bar)
    }

    /// Support end `sigma_bar · kappa`.
    pub fn support(&self) -> f64 {
        self.sigma_bar * self.kappa
    }

    pub(crate) fn base_density(&self, x: f64) -> f64 {
        g_function(x, self.kappa, self.nu) / self.norm
    }

    pub(crate) fn base_rho(&self, x: f64) -> f64 {
        if x >= self.kappa {
            return self.rho_tail;
        }
        let big_x = 0.5 * x * x;
        let a1 = 0.5 * (self.nu as f64 + 1.0);
        let lower = lower_incomplete_gamma(a1, big_x);
        let tail = if big_x > 0.0 { big_x * g_function(x, self.kappa, self.nu) } else { 0.0 };
        -(lower + tail) / self.norm
    }

    /// Constant score value reached at and beyond the support end.
    pub fn rho_floor(&self) -> f64 {
        self.sigma_bar * self.rho_tail
    }
}

pub fn marginalized_inlier_density(spec: &MarginalizedChiSpec, r: f64) -> f64 {
    spec.base_density(r / spec.sigma_bar) / spec.sigma_bar
}

/// Non-positive MAGSAC++ score `-∫₀ʳ x p(x; sigma_bar) dx`.
pub fn magsac_rho(spec: &MarginalizedChiSpec, r: f64) -> f64 {
    spec.sigma_bar * spec.base_rho(r / spec.sigma_bar)
}

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
mod oracle;

#[cfg(test)]
mod tests {
    use super::oracle::{integrate, integrate_to_infinity};
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn upper_gamma_closed_forms() {
        for x in [0.0, 1.0, 5.0] {
            assert!(rel(upper_incomplete_gamma(1.0, x).unwrap(), (-x).exp()) <= 1e-12);
        }
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert!(rel(upper_incomplete_gamma(0.5, 0.0).unwrap(), sqrt_pi) <= 1e-12);
        for (s, g) in [(0.5, sqrt_pi), (1.0, 1.0), (1.5, 0.5 * sqrt_pi), (2.5, 0.75 * sqrt_pi)] {
            assert!(rel(upper_incomplete_gamma(s, 0.0).unwrap(), g) <= 1e-12, "s={s}");
        }
    }

    #[test]
    fn upper_gamma_matches_quadrature() {
        let q = integrate_to_infinity(|t| t.sqrt() * (-t).exp(), 2.0);
        assert!(rel(upper_incomplete_gamma(1.5, 2.0).unwrap(), q) <= 1e-10);
        let mut rng = seeded(1);
        for _ in 0..30 {
            let s = rng.random_range(0.2..6.0);
            let x = rng.random_range(0.5..15.0);
            let q = integrate_to_infinity(|t| t.powf(s - 1.0) * (-t).exp(), x);
            if x > 0.0 {
                assert!(rel(upper_incomplete_gamma(s, x).unwrap(), q) <= 1e-9, "s={s} x={x}");
            }
        }
    }

    #[test]
    fn upper_gamma_rejects_bad_input() {
        assert!(upper_incomplete_gamma(f64::NAN, 1.0).is_err());
        assert!(upper_incomplete_gamma(1.0, f64::INFINITY).is_err());
        assert!(upper_incomplete_gamma(-1.0, 1.0).is_err());
        assert!(upper_incomplete_gamma(0.0, 0.0).unwrap().is_infinite());
        // E1(1) = 0.219383934395520...
        assert!(rel(upper_incomplete_gamma(0.0, 1.0).unwrap(), 0.219_383_934_395_520_27) < 1e-13);
    }

    #[test]
    fn chi_pdf_values_and_mass() {
        let c1 = ChiSpec::new(1).unwrap();
        assert!(rel(chi_pdf(c1, 0.0), (2.0 / std::f64::consts::PI).sqrt()) < 1e-14);
        assert_eq!(chi_pdf(ChiSpec::new(2).unwrap(), 0.0), 0.0);
        for nu in [1, 2, 4, 6, 8] {
            let c = ChiSpec::new(nu).unwrap();
            let mass = integrate(|x| chi_pdf(c, x), 0.0, 40.0);
            assert!((mass - 1.0).abs() <= 1e-9, "nu={nu} mass={mass}");
        }
        assert!(ChiSpec::new(0).is_err());
    }

    #[test]
    fn chi_quantiles() {
        let q = |nu| chi_quantile(ChiSpec::new(nu).unwrap(), 0.99).unwrap();
        assert!((q(4) - 3.64).abs() <= 0.01);
        assert!((q(6) - 4.1).abs() <= 0.01);
        // the 99% quantile of chi_8 is 4.4822 (chi-square quantile 20.090)
        assert!((q(8) - 4.482_213).abs() <= 1e-5);

        // inversion oracle: quadrature of the pdf, then bisection
        let c2 = ChiSpec::new(2).unwrap();
        let cdf = |x: f64| integrate(|t| chi_pdf(c2, t), 0.0, x);
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            if cdf(m) < 0.5 {
                lo = m
            } else {
                hi = m
            }
        }
        let got = chi_quantile(c2, 0.5).unwrap();
        assert!((got - lo).abs() < 1e-9);
        assert!((c2.cdf(got) - 0.5).abs() <= 1e-10);
        assert!(chi_quantile(c2, 0.0).is_err());
        assert!(chi_quantile(c2, 1.0).is_err());
    }

    #[test]
    fn g_function_cases() {
        assert_eq!(g_function(4.0, 3.0, 4), 0.0);
        let kappa = 2.7;
        let expected = 1.0 - (-kappa * kappa / 2.0f64).exp();
        assert!(rel(g_function(0.0, kappa, 3), expected) < 1e-13);
        // quadrature oracle for both incomplete gammas
        let (x, kappa) = (1.0, 3.64);
        let up = |lo: f64| integrate_to_infinity(|t| t.sqrt() * (-t).exp(), lo);
        let oracle = up(0.5 * x * x) - up(0.5 * kappa * kappa);
        assert!(rel(g_function(x, kappa, 4), oracle) <= 1e-9);
    }

    #[test]
    fn marginalized_density_matches_scale_mixture() {
        // direct oracle: (1/sigma_bar) ∫₀^sigma_bar (1/s) truncchi(r/s) ds
        for nu in [2u32, 4, 6] {
            let spec = MarginalizedChiSpec::from_quantile(nu, 0.99, 1.7).unwrap();
            let c = ChiSpec::new(nu).unwrap();
            let trunc = c.cdf(spec.kappa());
            for r in [0.3, 1.0, 2.5, 5.0] {
                let f = |s: f64| {
                    let x = r / s;
                    if s <= 0.0 || x >= spec.kappa() {
                        0.0
                    } else {
                        chi_pdf(c, x) / trunc / s
                    }
                };
                let oracle = integrate(f, r / spec.kappa(), 1.7) / 1.7;
                let got = marginalized_inlier_density(&spec, r);
                assert!(rel(got, oracle) < 1e-8, "nu={nu} r={r} {got} vs {oracle}");
            }
        }
    }

    #[test]
    fn marginalized_density_normalized() {
        for nu in [2u32, 4, 6] {
            for sb in [0.5, 1.0, 3.0] {
                let spec = MarginalizedChiSpec::from_quantile(nu, 0.99, sb).unwrap();
                let mass = integrate(|r| marginalized_inlier_density(&spec, r), 0.0, spec.support());
                assert!((mass - 1.0).abs() < 1e-9, "nu={nu} sb={sb} mass={mass}");
            }
        }
    }

    #[test]
    fn marginalized_density_shape() {
        let one = MarginalizedChiSpec::from_quantile(1, 0.99, 1.0).unwrap();
        let p = |r| marginalized_inlier_density(&one, r);
        assert!(p(1e-6) > p(1e-3) && p(1e-3) > p(1.0));

        let four = MarginalizedChiSpec::from_quantile(4, 0.99, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..1000 {
            let r = i as f64 * 4.0 / 999.0;
            let v = marginalized_inlier_density(&four, r);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn scale_identities() {
        let mut rng = seeded(4);
        for _ in 0..20 {
            let nu = [2u32, 4, 6, 8][rng.random_range(0..4)];
            let sb = rng.random_range(0.1..5.0);
            let spec = MarginalizedChiSpec::from_quantile(nu, 0.99, sb).unwrap();
            let unit = spec.with_sigma_bar(1.0).unwrap();
            let r = rng.random_range(0.0..spec.support());
            let lhs = marginalized_inlier_density(&spec, r);
            let rhs = marginalized_inlier_density(&unit, r / sb) / sb;
            assert!(rel(lhs, rhs) <= 1e-10);
            let lhs = magsac_rho(&spec, r);
            let rhs = sb * magsac_rho(&unit, r / sb);
            assert!(rel(lhs, rhs) <= 1e-9 || (lhs - rhs).abs() < 1e-300);
        }
    }

    #[test]
    fn rho_closed_form_matches_integral() {
        for nu in [1u32, 2, 4, 6, 8] {
            let spec = MarginalizedChiSpec::from_quantile(nu, 0.99, 1.3).unwrap();
            assert_eq!(magsac_rho(&spec, 0.0), 0.0);
            for r in [0.2f64, 1.0, 2.0, 4.0, 5.0, 9.0] {
                let end = r.min(spec.support());
                let q = -integrate(|x| x * marginalized_inlier_density(&spec, x), 0.0, end);
                assert!(rel(magsac_rho(&spec, r), q) <= 1e-8, "nu={nu} r={r}");
            }
            assert_eq!(magsac_rho(&spec, 100.0), spec.rho_floor());
        }
    }

    #[test]
    fn rho_derivative_is_density() {
        let spec = MarginalizedChiSpec::from_quantile(4, 0.99, 1.0).unwrap();
        let h = 1e-5;
        for i in 1..60 {
            let r = i as f64 * 0.06;
            let d = (magsac_rho(&spec, r + h) - magsac_rho(&spec, r - h)) / (2.0 * h);
            assert!(rel(-d / r, marginalized_inlier_density(&spec, r)) <= 1e-5);
        }
    }
}
