//! The global equation `F_{k,s}[u] = u − φ` on `[-R, R]^n`, with `u = φ`
//! outside the box.
//!
//! Unknowns are the node corrections `w = u − φ`, held at zero on the box
//! faces; between nodes `u = φ + I[w]` with `I` multilinear interpolation.
//! At an interior node the operator is taken in the original coordinates
//! along a fixed direction set `ω_α`:
//!
//! `L_M[u](x) = det√M⁻¹ Σ_α c_α |√M⁻¹ω_α|^{-n-2s} (R^φ_α(x) + R^w_α(x))`
//!
//! where `R^φ` is computed once with the standard radial rule and `R^w` is a
//! linear functional of `w`. Its core `ρ < h` uses the quadratic model
//! `δ(hω)(ρ/h)²`, and beyond the last box exit `δ = −2w(x)` is integrated
//! exactly.
//!
//! The default method is policy iteration: freeze the per-node minimizer
//! `M_x`, solve the linear equation `w = b(M) + A(M) w`, re-minimize. Each
//! policy matrix `I − A(M)` is a strictly diagonally dominant M-matrix.
//! Plain damped Picard iteration is available too, but on fine grids its
//! contraction requires `ω` of order `h^{2s}`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::dfk_from_generator;
use crate::error::{Error, Result};
use crate::fracop::{radial_integral, QuadratureSpec, RadialRule, Symmetry, TestFunctionProfile};
use crate::grid::GridFunction;
use crate::infimum::{chart_generator, givens, InfOptions};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::quad::gauss_legendre;
use crate::report::csv_table;
use crate::sphere::{self, AngularRule};
use crate::symcone::in_gamma_k;

/// Box and resolution of a solver grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "R")]
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    /// Howard's policy iteration.
    Policy,
    /// `w ← (1−ω)w + ω·F[φ + w]`.
    Picard,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveOptions {
    /// `ω ∈ (0, 1]`. For policy iteration it relaxes the policy solution.
    pub damping: f64,
    pub method: SolveMethod,
    pub max_iters: usize,
    pub residual_tol: f64,
    /// Radial rule for `R^φ`. `n_angular` sets the direction set: the half
    /// circle with `n_angular` angles in 2D, a `n_angular/8 × n_angular/4`
    /// polar product in 3D.
    pub quad: QuadratureSpec,
    /// Per-node simplex search: `n_starts` on the first sweep, `max_evals`,
    /// `xtol` and `seed`.
    pub inf: InfOptions,
    /// Log-uniform panels per decade for `R^w`.
    pub panels_per_decade: usize,
    /// Largest `cond(√M)` the per-node search may use.
    pub max_cond: f64,
    /// Radius below which `δ` is replaced by its quadratic model, as
    /// `max(h, core_scale·√h)`. Interpolation errors are `O(h²)` in `δ`, so
    /// this trades them against the model error at rate `h^{2-s}`.
    pub core_scale: f64,
    /// Enables `n = 3` (with `m ≤ 24`).
    pub allow_3d: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            damping: 1.0,
            method: SolveMethod::Policy,
            max_iters: 30,
            residual_tol: 1e-3,
            quad: QuadratureSpec {
                n_angular: 128,
                ..Default::default()
            },
            inf: InfOptions {
                n_starts: 3,
                max_evals: 2000,
                xtol: 1e-7,
                ..Default::default()
            },
            panels_per_decade: 8,
            max_cond: 64.0,
            core_scale: 1.0,
            allow_3d: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!("damping must lie in (0,1], got {}", self.damping)));
        }
        if !(self.residual_tol > 0.0) {
            return Err(Error::InvalidInput("residual_tol must be positive".into()));
        }
        if self.max_iters == 0 || self.panels_per_decade == 0 || self.inf.n_starts == 0 {
            return Err(Error::InvalidInput(
                "max_iters, panels_per_decade and n_starts must be positive".into(),
            ));
        }
        if !(self.core_scale >= 0.0) {
            return Err(Error::InvalidInput("core_scale must be non-negative".into()));
        }
        if !(self.max_cond >= 1.0) {
            return Err(Error::InvalidInput("max_cond must be at least 1".into()));
        }
        self.quad.validate()
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub u: GridFunction,
    /// Sup-norm residual of every iterate, starting with `u = φ`.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// BiCGSTAB iterations per policy solve.
    pub linear_iterations: Vec<usize>,
    /// Largest `cond(√M)` among the final per-node minimizers.
    pub max_cond_used: f64,
}

impl SolveOutcome {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().expect("history starts with the initial residual")
    }

    /// Grid files (see [`GridFunction::save`]) plus `<stem>_residual.csv`.
    pub fn write(&self, stem: &Path, s: f64, k: usize) -> Result<Vec<PathBuf>> {
        let mut files = self.u.save(stem, s, k)?;
        let name = format!(
            "{}_residual.csv",
            stem.file_name().map_or("u".into(), |f| f.to_string_lossy().into_owned())
        );
        let path = stem.with_file_name(name);
        let rows: Vec<Vec<f64>> = self
            .residual_history
            .iter()
            .enumerate()
            .map(|(i, r)| vec![i as f64, *r])
            .collect();
        fs::write(&path, csv_table(&["iteration", "residual"], &rows))?;
        files.push(path);
        Ok(files)
    }
}

/// Per-node minimizer in chart coordinates with its kernel weights.
#[derive(Clone, Debug)]
struct Policy {
    p: Vec<f64>,
    weights: Vec<f64>,
    cond: f64,
}

struct Discretization<'a> {
    phi: &'a TestFunctionProfile,
    grid: GridFunction,
    k: usize,
    s: f64,
    dirs: AngularRule,
    interior: Vec<usize>,
    /// Interior slot of every node, `None` on the faces.
    slot: Vec<Option<usize>>,
    rphi: Vec<f64>,
    gl: (Vec<f64>, Vec<f64>),
    core: f64,
    scan: Vec<(Vec<f64>, Vec<f64>)>,
    opts: &'a SolveOptions,
}

fn direction_rule(n: usize, n_angular: usize) -> AngularRule {
    match n {
        2 => sphere::half_circle(n_angular),
        _ => sphere::polar_product(&[0.0, 1.0], (n_angular / 8).max(4), (n_angular / 4).max(8)),
    }
}

impl<'a> Discretization<'a> {
    fn new(phi: &'a TestFunctionProfile, shape: GridShape, k: usize, s: f64, opts: &'a SolveOptions) -> Result<Self> {
        let n = shape.n;
        let grid = GridFunction::from_profile(n, shape.m, shape.radius, phi)?;
        let dirs = direction_rule(n, opts.quad.n_angular);
        let interior = grid.interior_indices();
        let mut slot = vec![None; grid.len()];
        for (i, &node) in interior.iter().enumerate() {
            slot[node] = Some(i);
        }
        let nd = dirs.len();
        let mut rphi = vec![0.0; interior.len() * nd];
        if phi.symmetry() != Symmetry::Affine {
            let rule = RadialRule::new(s, opts.quad.r_min, opts.quad.r_max, opts.quad.n_radial);
            let far = phi.far_field();
            rphi.par_chunks_mut(nd)
                .zip(interior.par_iter())
                .try_for_each(|(out, &node)| -> Result<()> {
                    let x = grid.node(node);
                    let px = phi.eval(&x);
                    for (alpha, o) in out.iter_mut().enumerate() {
                        let w = dirs.dir(alpha);
                        let g = |rho: f64| {
                            let a: Vec<f64> = (0..n).map(|d| x[d] + rho * w[d]).collect();
                            let b: Vec<f64> = (0..n).map(|d| x[d] - rho * w[d]).collect();
                            phi.eval(&a) + phi.eval(&b) - 2.0 * px
                        };
                        *o = radial_integral(&g, &rule, far)?;
                    }
                    Ok(())
                })?;
        }
        Ok(Self {
            phi,
            k,
            s,
            dirs,
            interior,
            slot,
            rphi,
            gl: gauss_legendre(8),
            core: {
                let h = grid.spacing();
                h.max(opts.core_scale * h.sqrt())
            },
            grid,
            scan: Vec::new(),
            opts,
        })
        .map(|mut d: Self| {
            d.build_scan();
            d
        })
    }

    fn n(&self) -> usize {
        self.grid.dim()
    }

    fn nd(&self) -> usize {
        self.dirs.len()
    }

    /// Distance from `x` to the box boundary along `dir`.
    fn exit(&self, x: &[f64], dir: &[f64]) -> f64 {
        let r = self.grid.radius();
        x.iter()
            .zip(dir)
            .filter(|(_, d)| d.abs() > 1e-15)
            .map(|(xi, d)| ((r * d.signum()) - xi) / d)
            .fold(f64::INFINITY, f64::min)
    }

    /// `R^w_α(x)` as `self_coefficient·w(x) + Σ visit(j, c)·w_j`.
    fn ray(&self, x: &[f64], dir: &[f64], visit: &mut dyn FnMut(usize, f64)) -> f64 {
        let n = self.n();
        let s = self.s;
        let h = self.core;
        let mut p = vec![0.0; n];
        let mut both = |rho: f64, c: f64, visit: &mut dyn FnMut(usize, f64)| {
            for sign in [1.0, -1.0] {
                for d in 0..n {
                    p[d] = x[d] + sign * rho * dir[d];
                }
                self.grid.for_each_corner(&p, |j, wc| visit(j, c * wc));
            }
        };
        let core = h.powf(-2.0 * s) / (2.0 - 2.0 * s);
        both(h, core, visit);
        let mut own = -2.0 * core;
        let neg: Vec<f64> = dir.iter().map(|d| -d).collect();
        let (e1, e2) = {
            let (a, b) = (self.exit(x, dir), self.exit(x, &neg));
            (a.min(b), a.max(b))
        };
        let (gx, gw) = &self.gl;
        for (lo, hi) in [(h, e1.max(h)), (e1.max(h), e2.max(h))] {
            if hi <= lo * (1.0 + 1e-12) {
                continue;
            }
            let (l0, l1) = (lo.ln(), hi.ln());
            let panels = ((l1 - l0) / std::f64::consts::LN_10 * self.opts.panels_per_decade as f64).ceil().max(1.0);
            let step = (l1 - l0) / panels;
            for q in 0..panels as usize {
                let a = l0 + q as f64 * step;
                for (t, wt) in gx.iter().zip(gw) {
                    let v = a + 0.5 * step * (t + 1.0);
                    let c = 0.5 * step * wt * (-2.0 * s * v).exp();
                    both(v.exp(), c, visit);
                    own -= 2.0 * c;
                }
            }
        }
        own - 2.0 * e2.max(h).powf(-2.0 * s) / (2.0 * s)
    }

    /// `R^w_α` at every interior node for node corrections `w` (all nodes).
    fn rw(&self, w: &[f64]) -> Vec<f64> {
        let nd = self.nd();
        let mut out = vec![0.0; self.interior.len() * nd];
        out.par_chunks_mut(nd).zip(self.interior.par_iter()).for_each(|(o, &node)| {
            let x = self.grid.node(node);
            for (alpha, r) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                let own = self.ray(&x, self.dirs.dir(alpha), &mut |j, c| acc += c * w[j]);
                *r = acc + own * w[node];
            }
        });
        out
    }

    /// For `k = n` the eigenvalues of the generator are `n·softmax(t)` with
    /// logits clamped so that `cond(√M) ≤ max_cond` holds without walls;
    /// otherwise the shared chart `(σ_1..σ_{n-1}, angles)` is used.
    fn generator(&self, p: &[f64]) -> (nalgebra::DMatrix<f64>, Vec<f64>) {
        let n = self.n();
        if self.k != n {
            return chart_generator(p, n);
        }
        // cond(√M)² is the ratio of extreme σ, i.e. the spread of the logits.
        let cap = 2.0 * self.opts.max_cond.ln() / if n == 2 { 1.0 } else { 2.0 };
        let mut t: Vec<f64> = p[..n - 1].iter().map(|x| x.clamp(-cap, cap)).collect();
        t.push(0.0);
        let z: f64 = t.iter().map(|x| x.exp()).sum();
        let sigma = t.iter().map(|x| n as f64 * x.exp() / z).collect();
        (givens(n, &p[n - 1..]), sigma)
    }

    /// Kernel weights `c_α det√M⁻¹ |√M⁻¹ω_α|^{-n-2s}` for chart point `p`.
    fn weights(&self, p: &[f64]) -> Option<(Vec<f64>, f64)> {
        let n = self.n();
        let (q, sigma) = self.generator(p);
        if !in_gamma_k(&sigma, self.k) {
            return None;
        }
        let m = dfk_from_generator(&q, &sigma, self.k).ok()?;
        let eta = m.m().eigenvalues();
        let cond = (eta[n - 1] / eta[0]).sqrt();
        if !(cond <= self.opts.max_cond) {
            return None;
        }
        let v = m.m().eigenvectors();
        let det_inv: f64 = eta.iter().map(|e| e.sqrt().recip()).product();
        let expo = -0.5 * (n as f64 + 2.0 * self.s);
        let w = (0..self.nd())
            .map(|alpha| {
                let om = self.dirs.dir(alpha);
                let len2: f64 = (0..n)
                    .map(|i| {
                        let proj: f64 = (0..n).map(|r| v[(r, i)] * om[r]).sum();
                        proj * proj / eta[i]
                    })
                    .sum();
                self.dirs.weights[alpha] * det_inv * len2.powf(expo)
            })
            .collect();
        Some((w, cond))
    }

    fn chart_dim(&self) -> usize {
        let n = self.n();
        n - 1 + n * (n - 1) / 2
    }

    fn identity_chart(&self) -> Vec<f64> {
        let n = self.n();
        let mut p = vec![if self.k == n { 0.0 } else { 1.0 }; n - 1];
        p.extend(std::iter::repeat(0.0).take(n * (n - 1) / 2));
        p
    }

    /// Minimizes `Σ_α W_α(M)·r_α` over the chart from the given starts.
    fn minimize(&self, r: &[f64], starts: &[Vec<f64>]) -> (Policy, f64) {
        let nm = NelderMeadOptions {
            max_evals: self.opts.inf.max_evals,
            xtol: self.opts.inf.xtol,
        };
        let dim = self.chart_dim();
        let first = if self.k == self.n() { 1.0 } else { 0.25 };
        let step: Vec<f64> = (0..dim).map(|i| if i < self.n() - 1 { first } else { 0.5 }).collect();
        let objective = |p: &[f64]| {
            self.weights(p)
                .map_or(f64::INFINITY, |(w, _)| w.iter().zip(r).map(|(a, b)| a * b).sum())
        };
        let mut best: Option<(Vec<f64>, f64)> = None;
        for p0 in starts {
            let run = nelder_mead(objective, p0, &step, &nm);
            if best.as_ref().map_or(true, |b| run.f < b.1) {
                best = Some((run.x, run.f));
            }
        }
        let (p, f) = best.expect("at least one start");
        let (weights, cond) = self.weights(&p).expect("the best point is feasible");
        (Policy { p, weights, cond }, f)
    }

    /// Node-independent chart points whose kernel weights are cached: a
    /// `9 × 16` logit/angle grid in 2D, seeded random points otherwise.
    fn build_scan(&mut self) {
        let n = self.n();
        let mut pts = Vec::new();
        if n == 2 && self.k == 2 {
            let cap = 2.0 * self.opts.max_cond.ln();
            for i in 0..9 {
                for j in 0..16 {
                    let t = cap * (i as f64 - 4.0) / 4.0;
                    pts.push(vec![t, std::f64::consts::PI * j as f64 / 16.0]);
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.opts.inf.seed);
            while pts.len() < 64 {
                let mut p: Vec<f64> = (0..n - 1)
                    .map(|_| match self.k == n {
                        true => rng.gen_range(-3.0..3.0),
                        false => 1.0 + rng.gen_range(-0.6..0.6),
                    })
                    .collect();
                p.extend((0..n * (n - 1) / 2).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)));
                pts.push(p);
            }
        }
        self.scan = pts
            .into_iter()
            .filter_map(|p| self.weights(&p).map(|(w, _)| (p, w)))
            .collect();
    }

    /// Warm start, identity and the best `n_starts` scan points for `r`.
    fn starts(&self, r: &[f64], warm: Option<&Policy>) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = warm.map(|w| w.p.clone()).into_iter().collect();
        out.push(self.identity_chart());
        let mut scored: Vec<(f64, usize)> = self
            .scan
            .iter()
            .enumerate()
            .map(|(i, (_, w))| (w.iter().zip(r).map(|(a, b)| a * b).sum(), i))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.extend(scored.iter().take(self.opts.inf.n_starts).map(|&(_, i)| self.scan[i].0.clone()));
        out
    }

    /// Per-node minimization of the operator for corrections `w`; returns the
    /// policies and the operator values.
    fn improve(&self, w: &[f64], warm: Option<&[Policy]>) -> (Vec<Policy>, Vec<f64>) {
        let nd = self.nd();
        let rw = self.rw(w);
        let res: Vec<(Policy, f64)> = (0..self.interior.len())
            .into_par_iter()
            .map(|i| {
                let r: Vec<f64> = (0..nd).map(|a| self.rphi[i * nd + a] + rw[i * nd + a]).collect();
                self.minimize(&r, &self.starts(&r, warm.map(|p| &p[i])))
            })
            .collect();
        res.into_iter().unzip()
    }

    /// `b` and the row-major interior block of `A` for a frozen policy.
    fn assemble(&self, policy: &[Policy]) -> (Vec<f64>, Vec<f64>) {
        let ni = self.interior.len();
        let nd = self.nd();
        let mut a = vec![0.0; ni * ni];
        let b: Vec<f64> = (0..ni)
            .map(|i| (0..nd).map(|al| policy[i].weights[al] * self.rphi[i * nd + al]).sum())
            .collect();
        a.par_chunks_mut(ni).enumerate().for_each(|(i, row)| {
            let node = self.interior[i];
            let x = self.grid.node(node);
            for alpha in 0..nd {
                let wt = policy[i].weights[alpha];
                let own = self.ray(&x, self.dirs.dir(alpha), &mut |j, c| {
                    if let Some(sj) = self.slot[j] {
                        row[sj] += wt * c;
                    }
                });
                row[i] += wt * own;
            }
        });
        (b, a)
    }

    fn expand(&self, w_interior: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.grid.len()];
        for (i, &node) in self.interior.iter().enumerate() {
            w[node] = w_interior[i];
        }
        w
    }

    fn to_grid(&self, w: &[f64]) -> Result<GridFunction> {
        let values = (0..self.grid.len())
            .map(|j| self.phi.eval(&self.grid.node(j)) + w[j])
            .collect();
        self.grid.with_values(values)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(I − A) x = b` for dense row-major `A` by Jacobi-preconditioned
/// BiCGSTAB. Returns the solution and the iteration count.
fn solve_policy(a: &[f64], b: &[f64], x0: &[f64], tol: f64) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    let op = |v: &[f64]| -> Vec<f64> {
        a.par_chunks(n).zip(v.par_iter()).map(|(row, vi)| vi - dot(row, v)).collect()
    };
    let diag: Vec<f64> = (0..n).map(|i| 1.0 - a[i * n + i]).collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&diag).map(|(x, d)| x / d).collect() };
    let bnorm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut x = x0.to_vec();
    let ax = op(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let max_iter = 20 * n.max(50);
    for it in 1..=max_iter {
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok((x, it - 1));
        }
        let rho_new = dot(&r_hat, &r);
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        v = op(&y);
        alpha = rho_new / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if dot(&s, &s).sqrt() <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok((x, it));
        }
        let z = precond(&s);
        let t = op(&z);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rho = rho_new;
        if !(omega.is_finite() && rho.is_finite()) || omega == 0.0 {
            break;
        }
    }
    let res = dot(&r, &r).sqrt() / bnorm;
    Err(Error::Diverged {
        iter: max_iter,
        residual: res,
        min: tol,
    })
}

fn check_problem(phi: &TestFunctionProfile, shape: GridShape, k: usize, s: f64, opts: &SolveOptions) -> Result<()> {
    opts.validate()?;
    if !(s > 0.5 && s < 1.0) {
        return Err(Error::SOutOfRange {
            s,
            range: "(1/2,1)",
            what: "the global solver",
        });
    }
    let n = shape.n;
    match n {
        2 => {}
        3 if opts.allow_3d && shape.m <= 24 => {}
        3 => {
            return Err(Error::InvalidInput(
                "n = 3 needs the explicit 3D flag and at most 24 points per axis".into(),
            ))
        }
        _ => return Err(Error::InvalidInput(format!("the solver supports n = 2 (and 3 behind a flag), got {n}"))),
    }
    if k != 2 && k != n {
        return Err(Error::IndexOutOfRange { index: k, n });
    }
    if !phi.lipschitz().is_finite() {
        return Err(Error::TailUnbounded { s });
    }
    Ok(())
}

/// Solves `F_{k,s}[u] = u − φ` on the grid, starting from `u = φ`.
pub fn solve_global(
    phi: &TestFunctionProfile,
    k: usize,
    s: f64,
    shape: GridShape,
    opts: &SolveOptions,
) -> Result<SolveOutcome> {
    check_problem(phi, shape, k, s, opts)?;
    let disc = Discretization::new(phi, shape, k, s, opts)?;
    let ni = disc.interior.len();
    let mut w_int = vec![0.0; ni];
    let mut w = disc.expand(&w_int);
    let (mut policy, mut values) = disc.improve(&w, None);
    let sup = |values: &[f64], w_int: &[f64]| {
        values
            .iter()
            .zip(w_int)
            .map(|(f, w)| (f - w).abs())
            .fold(0.0, f64::max)
    };
    let mut history = vec![sup(&values, &w_int)];
    let mut linear_iterations = Vec::new();
    let mut best = history[0];
    let omega = opts.damping;
    let mut converged = history[0] <= opts.residual_tol;
    for iter in 1..=opts.max_iters {
        if converged {
            break;
        }
        let target = match opts.method {
            SolveMethod::Policy => {
                let (b, a) = disc.assemble(&policy);
                let (sol, its) = solve_policy(&a, &b, &w_int, 1e-13)?;
                linear_iterations.push(its);
                sol
            }
            SolveMethod::Picard => values.clone(),
        };
        for (wi, ti) in w_int.iter_mut().zip(&target) {
            *wi = (1.0 - omega) * *wi + omega * ti;
        }
        w = disc.expand(&w_int);
        let (p, v) = disc.improve(&w, Some(&policy));
        policy = p;
        values = v;
        let r = sup(&values, &w_int);
        history.push(r);
        best = best.min(r);
        // Policy iterates decrease monotonically even when the residual does
        // not, so only the fixed-point sweep is guarded.
        let runaway = opts.method == SolveMethod::Picard && r > 10.0 * best;
        if !r.is_finite() || runaway {
            return Err(Error::Diverged {
                iter,
                residual: r,
                min: best,
            });
        }
        converged = r <= opts.residual_tol;
    }
    let max_cond_used = policy.iter().map(|p| p.cond).fold(1.0, f64::max);
    Ok(SolveOutcome {
        u: disc.to_grid(&w)?,
        residual_history: history,
        converged,
        linear_iterations,
        max_cond_used,
    })
}

/// `sup` over interior nodes of `|F_{k,s}[u](x) − u(x) + φ(x)|` with the
/// solver's discrete operator, `u` extended by `φ` outside the box.
pub fn residual(u: &GridFunction, phi: &TestFunctionProfile, k: usize, s: f64, opts: &SolveOptions) -> Result<f64> {
    let shape = GridShape {
        n: u.dim(),
        m: u.points_per_axis(),
        radius: u.radius(),
    };
    check_problem(phi, shape, k, s, opts)?;
    let disc = Discretization::new(phi, shape, k, s, opts)?;
    let w: Vec<f64> = (0..u.len()).map(|j| u.values()[j] - phi.eval(&u.node(j))).collect();
    let (_, values) = disc.improve(&w, None);
    Ok(disc
        .interior
        .iter()
        .zip(&values)
        .map(|(&node, f)| (f - w[node]).abs())
        .fold(0.0, f64::max))
}

/// Nodes this many cells or more from the faces count as interior.
pub const INTERIOR_MARGIN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    /// Largest `|u(x + h e_i) − u(x)|/h` over grid edges.
    pub lipschitz_estimate: f64,
    /// Largest `δ(u, x, h e_i)/h²` over interior nodes and axes.
    pub semiconcavity_estimate: f64,
    /// The same two estimates restricted to nodes at least
    /// [`INTERIOR_MARGIN`] cells from the faces, away from the layer where
    /// `u` meets the exterior data.
    pub interior_lipschitz_estimate: f64,
    pub interior_semiconcavity_estimate: f64,
}

pub fn modulus_report(u: &GridFunction) -> ModulusReport {
    let n = u.dim();
    let m = u.points_per_axis();
    let h = u.spacing();
    let v = u.values();
    let mut stride = vec![1usize; n];
    for d in (0..n.saturating_sub(1)).rev() {
        stride[d] = stride[d + 1] * m;
    }
    let mut lip = [0.0f64; 2];
    let mut sc = [f64::NEG_INFINITY; 2];
    for i in 0..u.len() {
        let idx = u.multi_index(i);
        let depth = idx.iter().map(|&j| j.min(m - 1 - j)).min().unwrap_or(0);
        let deep = depth >= INTERIOR_MARGIN;
        for d in 0..n {
            if idx[d] + 1 < m {
                let q = (v[i + stride[d]] - v[i]).abs() / h;
                lip[0] = lip[0].max(q);
                // The far end of the edge is at least as deep unless it steps outward.
                if deep && idx[d] + 1 < m - INTERIOR_MARGIN {
                    lip[1] = lip[1].max(q);
                }
            }
            if idx[d] > 0 && idx[d] + 1 < m {
                let q = (v[i + stride[d]] + v[i - stride[d]] - 2.0 * v[i]) / (h * h);
                sc[0] = sc[0].max(q);
                if deep {
                    sc[1] = sc[1].max(q);
                }
            }
        }
    }
    ModulusReport {
        lipschitz_estimate: lip[0],
        semiconcavity_estimate: sc[0],
        interior_lipschitz_estimate: lip[1],
        interior_semiconcavity_estimate: sc[1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracop::{affine, gaussian_dimple, linear_fracop_ycoords_matrix, smoothed_cone, FarField};
    use crate::symcone::SymMatrix;

    fn small() -> SolveOptions {
        SolveOptions {
            quad: QuadratureSpec {
                n_angular: 48,
                n_radial: 32,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn ray_functional_matches_the_continuous_operator_on_a_bump() {
        let bump = TestFunctionProfile::new(
            "bump",
            |x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp(),
            1.0,
            2.0,
            false,
            FarField::Bounded { sup_delta: 2.0 },
        );
        let opts = small();
        let zero = affine();
        let shape = GridShape { n: 2, m: 61, radius: 6.0 };
        let disc = Discretization::new(&zero, shape, 2, 0.75, &opts).unwrap();
        let w: Vec<f64> = (0..disc.grid.len()).map(|j| bump.eval(&disc.grid.node(j))).collect();
        let rw = disc.rw(&w);
        let (weights, _) = disc.weights(&disc.identity_chart()).unwrap();
        let centre = disc.slot[disc.grid.flat_index(&[30, 30])].unwrap();
        let nd = disc.nd();
        let discrete: f64 = (0..nd).map(|a| weights[a] * rw[centre * nd + a]).sum();
        let m = SymMatrix::from_diagonal(&[0.5, 0.5]);
        let exact = linear_fracop_ycoords_matrix(&bump, &m, &[0.0, 0.0], 0.75, &QuadratureSpec::default())
            .unwrap()
            .value;
        assert!(exact < 0.0);
        assert!((discrete / exact - 1.0).abs() < 2e-2, "{discrete} vs {exact}");
    }

    #[test]
    fn affine_data_is_its_own_solution() {
        let phi = affine();
        let out = solve_global(&phi, 2, 0.75, GridShape { n: 2, m: 9, radius: 2.0 }, &small()).unwrap();
        assert!(out.converged);
        assert_eq!(out.residual_history, vec![0.0]);
        for j in 0..out.u.len() {
            assert!((out.u.values()[j] - phi.eval(&out.u.node(j))).abs() < 1e-15);
        }
    }

    #[test]
    fn cone_solution_converges_and_is_symmetric() {
        let phi = smoothed_cone(1.0);
        let shape = GridShape { n: 2, m: 17, radius: 4.0 };
        let opts = small();
        let out = solve_global(&phi, 2, 0.75, shape, &opts).unwrap();
        assert!(out.converged, "{:?}", out.residual_history);
        assert!(out.final_residual() <= opts.residual_tol);
        let r = residual(&out.u, &phi, 2, 0.75, &opts).unwrap();
        assert!(r <= 2.0 * opts.residual_tol, "re-verified residual {r}");
        let u = &out.u;
        let centre = u.flat_index(&[8, 8]);
        assert!(u.correction()[centre] > 0.0);
        for a in 1..16 {
            for b in 1..16 {
                let v = u.values()[u.flat_index(&[a, b])];
                for (c, d) in [(16 - a, b), (b, a), (a, 16 - b)] {
                    assert!((v - u.values()[u.flat_index(&[c, d])]).abs() < 10.0 * opts.residual_tol);
                }
            }
        }
    }

    #[test]
    fn comparison_principle_on_nodes() {
        let opts = small();
        let shape = GridShape { n: 2, m: 13, radius: 3.0 };
        let lo = gaussian_dimple(0.05).unwrap();
        let hi = smoothed_cone(1.0);
        let u1 = solve_global(&lo, 2, 0.75, shape, &opts).unwrap();
        let u2 = solve_global(&hi, 2, 0.75, shape, &opts).unwrap();
        assert!(u1.converged && u2.converged);
        for j in 0..u1.u.len() {
            assert!(u1.u.values()[j] <= u2.u.values()[j] + 10.0 * opts.residual_tol);
        }
    }

    #[test]
    fn undamped_picard_is_caught_diverging() {
        let opts = SolveOptions {
            method: SolveMethod::Picard,
            damping: 0.5,
            ..small()
        };
        let res = solve_global(&smoothed_cone(1.0), 2, 0.75, GridShape { n: 2, m: 17, radius: 4.0 }, &opts);
        assert!(matches!(res, Err(Error::Diverged { .. })), "{res:?}");
    }

    #[test]
    fn rejects_bad_configurations() {
        let phi = smoothed_cone(1.0);
        let shape = GridShape { n: 2, m: 9, radius: 2.0 };
        let bad = SolveOptions {
            damping: 0.0,
            ..small()
        };
        assert!(solve_global(&phi, 2, 0.75, shape, &bad).is_err());
        assert!(matches!(
            solve_global(&phi, 2, 0.4, shape, &small()),
            Err(Error::SOutOfRange { .. })
        ));
        let cube = GridShape { n: 3, m: 9, radius: 2.0 };
        assert!(solve_global(&phi, 2, 0.75, cube, &small()).is_err());
    }

    #[test]
    fn moduli_of_sampled_functions() {
        let q = crate::fracop::quadratic(1.0);
        let g = GridFunction::from_profile(2, 21, 2.0, &q).unwrap();
        let rep = modulus_report(&g);
        assert!((rep.semiconcavity_estimate - 2.0).abs() < 1e-12);
        let cone = GridFunction::from_profile(2, 33, 8.0, &smoothed_cone(1.0)).unwrap();
        let rep = modulus_report(&cone);
        assert!(rep.lipschitz_estimate <= 1.0 && rep.semiconcavity_estimate <= 1.0);
        assert!(rep.interior_lipschitz_estimate <= rep.lipschitz_estimate);
        assert!(rep.interior_semiconcavity_estimate <= rep.semiconcavity_estimate);
    }

    #[test]
    fn outcome_files() {
        let phi = smoothed_cone(1.0);
        let out = solve_global(&phi, 2, 0.75, GridShape { n: 2, m: 9, radius: 2.0 }, &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = out.write(&dir.path().join("u"), 0.75, 2).unwrap();
        assert_eq!(files.len(), 4);
        let csv = fs::read_to_string(&files[3]).unwrap();
        assert_eq!(csv.lines().count(), out.residual_history.len() + 1);
    }
}
