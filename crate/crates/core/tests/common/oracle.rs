//! Independent numerical oracles shared by unit and integration tests.
#![allow(dead_code)]

// Gauss-Kronrod 7/15 nodes and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (val, err) = gk15(f, a, b);
    if err <= tol.max(1e-15 * val.abs()) || depth == 0 {
        return val;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    adapt(&f, a, b, 1e-13, 50)
}

/// `∫_a^∞ f`, through the substitution `t = a + u / (1 - u)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64) -> f64 {
    let g = |u: f64| {
        let w = 1.0 - u;
        if w <= 0.0 {
            return 0.0;
        }
        let v = f(a + u / w) / (w * w);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    adapt(&g, 0.0, 1.0, 1e-14, 50)
}

/// Central finite difference.
pub fn derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Minimizes `f` over the plane by grid search around `start` followed by
/// a shrinking compass search.
pub fn minimize_2d<F: Fn(f64, f64) -> f64>(f: F, start: (f64, f64), radius: f64) -> (f64, f64, f64) {
    let mut best = (start.0, start.1, f(start.0, start.1));
    let n = 40;
    for i in 0..=n {
        for j in 0..=n {
            let x = start.0 - radius + 2.0 * radius * i as f64 / n as f64;
            let y = start.1 - radius + 2.0 * radius * j as f64 / n as f64;
            let v = f(x, y);
            if v < best.2 {
                best = (x, y, v);
            }
        }
    }
    let mut step = 2.0 * radius / n as f64;
    while step > 1e-12 * radius.max(1.0) {
        let mut moved = false;
        for (dx, dy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (0.7, 0.7), (-0.7, -0.7), (0.7, -0.7), (-0.7, 0.7)] {
            let x = best.0 + dx * step;
            let y = best.1 + dy * step;
            let v = f(x, y);
            if v < best.2 {
                best = (x, y, v);
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}

/// Brute-force two-view geometric (reprojection) distance for a
/// homography `h` (row-major) and a correspondence `u ↔ v`.
pub fn geometric_distance_homography(h: &[f64; 9], u: (f64, f64), v: (f64, f64), radius: f64) -> f64 {
    let cost = |x: f64, y: f64| {
        let w = h[6] * x + h[7] * y + h[8];
        let px = (h[0] * x + h[1] * y + h[2]) / w;
        let py = (h[3] * x + h[4] * y + h[5]) / w;
        (x - u.0).powi(2) + (y - u.1).powi(2) + (px - v.0).powi(2) + (py - v.1).powi(2)
    };
    minimize_2d(cost, u, radius).2.sqrt()
}

/// Brute-force geometric distance to the epipolar constraint of `f`
/// (row-major, `v^T F u = 0`): the best `u'` is searched directly and the
/// matching `v'` is the projection of `v` onto the epipolar line of `u'`.
pub fn geometric_distance_epipolar(f: &[f64; 9], u: (f64, f64), v: (f64, f64), radius: f64) -> f64 {
    let cost = |x: f64, y: f64| {
        let l0 = f[0] * x + f[1] * y + f[2];
        let l1 = f[3] * x + f[4] * y + f[5];
        let l2 = f[6] * x + f[7] * y + f[8];
        let d = (l0 * v.0 + l1 * v.1 + l2).powi(2) / (l0 * l0 + l1 * l1);
        (x - u.0).powi(2) + (y - u.1).powi(2) + d
    };
    minimize_2d(cost, u, radius).2.sqrt()
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s: Vec<f64> = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in s.iter().enumerate() {
        let c = cdf(*x);
        d = d.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs());
    }
    d
}

/// Asymptotic KS critical value at significance `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}
