//! Angular rules on the unit sphere.
//!
//! Every integrand handled here is even in the direction, so rules cover a
//! hemisphere and their weights sum to `|S^{d-1}|/2`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::gamma;

use crate::quad::gauss_legendre_on;

/// Surface area `|S^{d-1}| = 2π^{d/2}/Γ(d/2)` of the unit sphere in `ℝ^d`.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => 2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0),
    }
}

/// Directions (row-major, `dim` entries each) with weights.
#[derive(Clone, Debug)]
pub struct AngularRule {
    pub dim: usize,
    pub dirs: Vec<f64>,
    pub weights: Vec<f64>,
    /// Set when the rule is a random sample; callers report a standard error.
    pub monte_carlo: bool,
}

impl AngularRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dir(&self, i: usize) -> &[f64] {
        &self.dirs[i * self.dim..(i + 1) * self.dim]
    }

    /// Rotates every direction by `frame` (columns are the new axes).
    pub fn rotated(&self, frame: &DMatrix<f64>) -> Self {
        let d = self.dim;
        let mut dirs = Vec::with_capacity(self.dirs.len());
        for i in 0..self.len() {
            let w = self.dir(i);
            for r in 0..frame.nrows() {
                dirs.push((0..d).map(|c| frame[(r, c)] * w[c]).sum());
            }
        }
        Self {
            dim: frame.nrows(),
            dirs,
            weights: self.weights.clone(),
            monte_carlo: self.monte_carlo,
        }
    }

    /// Integrates `g` over the hemisphere and returns `(value, std_error)`;
    /// the standard error is zero for deterministic rules.
    pub fn integrate(&self, mut g: impl FnMut(&[f64]) -> f64) -> (f64, f64) {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for i in 0..self.len() {
            let v = self.weights[i] * g(self.dir(i));
            sum += v;
            sq += v * v;
        }
        if !self.monte_carlo || self.len() < 2 {
            return (sum, 0.0);
        }
        let n = self.len() as f64;
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        (sum, (var / n).sqrt() * n)
    }
}

/// `S^0` hemisphere: the single direction `+1` with weight 1.
fn point_rule() -> AngularRule {
    AngularRule {
        dim: 1,
        dirs: vec![1.0],
        weights: vec![1.0],
        monte_carlo: false,
    }
}

/// Uniform angles on the half circle, offset by half a step.
pub fn half_circle(count: usize) -> AngularRule {
    let h = PI / count as f64;
    let mut dirs = Vec::with_capacity(2 * count);
    for j in 0..count {
        let t = (j as f64 + 0.5) * h;
        dirs.push(t.cos());
        dirs.push(t.sin());
    }
    AngularRule {
        dim: 2,
        dirs,
        weights: vec![h; count],
        monte_carlo: false,
    }
}

/// Product rule on the upper hemisphere of `S^2` with polar coordinate
/// `t = ω_3 ∈ [0,1]` on the given panels (Gauss–Legendre of `order` each)
/// and `n_phi` uniform azimuths. Directions are in the reference frame
/// whose third axis is the pole.
pub fn polar_product(t_breaks: &[f64], order: usize, n_phi: usize) -> AngularRule {
    let h = 2.0 * PI / n_phi as f64;
    let mut dirs = Vec::new();
    let mut weights = Vec::new();
    for win in t_breaks.windows(2) {
        let (ts, ws) = gauss_legendre_on(order, win[0], win[1]);
        for (t, wt) in ts.iter().zip(&ws) {
            let rho = (1.0 - t * t).max(0.0).sqrt();
            for j in 0..n_phi {
                let p = (j as f64 + 0.5) * h;
                dirs.extend_from_slice(&[rho * p.cos(), rho * p.sin(), *t]);
                weights.push(wt * h);
            }
        }
    }
    AngularRule {
        dim: 3,
        dirs,
        weights,
        monte_carlo: false,
    }
}

/// Breakpoints on `[0,1]` refined geometrically (1-2-5 per decade) toward
/// both ends down to `10^{-levels}`.
pub fn graded_breaks(levels: usize) -> Vec<f64> {
    let mut near_zero = Vec::new();
    for j in (1..=levels).rev() {
        let p = 10f64.powi(-(j as i32));
        near_zero.extend_from_slice(&[p, 2.0 * p, 5.0 * p]);
    }
    near_zero.retain(|&t| t < 0.25);
    let mut b = vec![0.0];
    b.extend(&near_zero);
    b.extend_from_slice(&[0.25, 0.5, 0.75]);
    b.extend(near_zero.iter().rev().map(|t| 1.0 - t));
    b.push(1.0);
    b
}

/// Monte Carlo hemisphere rule: `count` uniform directions on `S^{d-1}`,
/// each weighted `|S^{d-1}|/(2·count)`.
pub fn monte_carlo(dim: usize, count: usize, seed: u64) -> AngularRule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Vec::with_capacity(dim * count);
    for _ in 0..count {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        dirs.extend(v.iter().map(|x| x / norm));
    }
    AngularRule {
        dim,
        dirs,
        weights: vec![sphere_area(dim) / (2.0 * count as f64); count],
        monte_carlo: true,
    }
}

/// Default hemisphere rule in dimension `dim` for `n_angular` nodes.
pub fn default_rule(dim: usize, n_angular: usize, seed: u64) -> AngularRule {
    match dim {
        1 => point_rule(),
        2 => half_circle(n_angular),
        3 => polar_product(&[0.0, 1.0], n_angular, 2 * n_angular),
        _ => monte_carlo(dim, n_angular * n_angular, seed),
    }
}

/// Full-circle rule with an odd number of uniform angles; no node has its
/// antipode in the rule, yet odd trigonometric moments vanish exactly.
pub fn odd_full_circle(count: usize) -> AngularRule {
    let count = if count % 2 == 0 { count + 1 } else { count };
    let h = 2.0 * PI / count as f64;
    let mut dirs = Vec::with_capacity(2 * count);
    for j in 0..count {
        let t = j as f64 * h;
        dirs.push(t.cos());
        dirs.push(t.sin());
    }
    AngularRule {
        dim: 2,
        dirs,
        weights: vec![h; count],
        monte_carlo: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn areas() {
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-12);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_half_area() {
        for d in 1..=5 {
            let r = default_rule(d, 8, 1);
            let total: f64 = r.weights.iter().sum();
            assert!((total / (sphere_area(d) / 2.0) - 1.0).abs() < 1e-12, "d={d}");
            for i in 0..r.len() {
                let norm: f64 = r.dir(i).iter().map(|x| x * x).sum();
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
        let g = polar_product(&graded_breaks(6), 8, 16);
        assert!((g.weights.iter().sum::<f64>() - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn second_moments() {
        // ∫_{S^{d-1}} ω_1² = |S^{d-1}|/d.
        for d in 2..=3 {
            let r = default_rule(d, 12, 0);
            let (v, _) = r.integrate(|w| w[0] * w[0]);
            assert!((2.0 * v - sphere_area(d) / d as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_circle_cancels_odd_moments() {
        let r = odd_full_circle(16);
        assert_eq!(r.len(), 17);
        let (v, _) = r.integrate(|w| w[0] + 0.3 * w[1] + w[0].powi(3));
        assert!(v.abs() < 1e-13);
    }
}
