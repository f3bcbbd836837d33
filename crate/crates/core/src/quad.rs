//! One-dimensional quadrature: Gauss–Legendre rules and an adaptive
//! Gauss–Kronrod (7/15) integrator with helpers for singular and
//! semi-infinite ranges.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    (
        x.iter().map(|t| c + h * t).collect(),
        w.iter().map(|v| v * h).collect(),
    )
}

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
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Returns `(value, error_estimate)`. Subdivides the interval with the
/// largest error estimate until the total estimate drops below
/// `max(abs_tol, rel_tol·|value|)` or the interval budget runs out.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> (f64, f64) {
    let f = &f as &dyn Fn(f64) -> f64;
    let (v, e) = gk15(f, a, b);
    let mut parts = vec![(a, b, v, e)];
    for _ in 0..2000 {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (lo, hi, _, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
    parts.sort_by(|x, y| x.0.total_cmp(&y.0));
    (parts.iter().map(|p| p.2).sum(), parts.iter().map(|p| p.3).sum())
}

/// `∫_a^∞ f`, summed over dyadic panels `[a·2^j, a·2^{j+1}]` until the
/// geometric remainder estimate is below `rel_tol`. Suited to algebraic
/// decay. Requires `a > 0`.
pub fn integrate_to_infinity(f: impl Fn(f64) -> f64, a: f64, rel_tol: f64) -> f64 {
    dyadic_sum(&f, a, 2.0, rel_tol)
}

/// `∫_0^b f` for an integrable algebraic singularity at 0, summed over
/// panels `[b·2^{-j-1}, b·2^{-j}]`.
pub fn integrate_from_zero(f: impl Fn(f64) -> f64, b: f64, rel_tol: f64) -> f64 {
    dyadic_sum(&f, b, 0.5, rel_tol)
}

fn dyadic_sum(f: &dyn Fn(f64) -> f64, start: f64, ratio: f64, rel_tol: f64) -> f64 {
    let mut total = 0.0;
    let mut prev = f64::NAN;
    let mut prev_ratio = f64::NAN;
    let mut lo = start;
    for _ in 0..4000 {
        let hi = lo * ratio;
        let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let (v, _) = integrate(f, a, b, rel_tol * 0.01, 0.0);
        total += v;
        if v == 0.0 && prev == 0.0 {
            break;
        }
        if prev.is_finite() && prev != 0.0 {
            let r = (v / prev).abs();
            if r < 1.0 {
                let remainder = v.abs() * r / (1.0 - r);
                // A settled panel ratio means the integrand is a pure power
                // from here on, and the geometric tail is exact.
                let settled = (r - prev_ratio).abs() <= rel_tol * r;
                if settled || remainder <= rel_tol * 0.1 * total.abs() {
                    total += v * r / (1.0 - r);
                    break;
                }
            }
            prev_ratio = r;
        }
        prev = v;
        lo = hi;
    }
    total
}
