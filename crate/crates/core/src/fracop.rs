//! Anisotropic nonlocal linear operators
//! `L_M[u](x) = ½∫ δ(u, x, √M z) |z|^{-n-2s} dz`, the subspace integral used
//! by the ellipticity bounds, and the built-in test functions.
//!
//! Integrals are split into a direction and a physical radius `ρ`. For each
//! direction the radial integral `∫ δ(u, x, ρω) ρ^{-1-2s} dρ` is computed on
//! log-uniform Gauss–Legendre panels over `[r_min, R_max]`, with a quadratic
//! model for the core and an affine far-field fit for the tail.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::EnvelopeMatrix;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::quad::gauss_legendre_on;
use crate::sphere::{self, AngularRule};
use crate::symcone::SymMatrix;

/// Growth of `δ(u, x, ρω)` as `ρ → ∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FarField {
    /// `|δ| ≤ 2Lρ`; the tail converges only for `s > 1/2`.
    Linear,
    /// `|δ| ≤ sup_delta`; the tail converges for every `s`.
    Bounded { sup_delta: f64 },
    /// Superlinear growth; the operator is infinite.
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetry {
    None,
    /// Radially symmetric about the origin.
    Radial,
    /// Affine, so every second difference vanishes.
    Affine,
}

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A test function with its declared regularity constants.
#[derive(Clone)]
pub struct TestFunctionProfile {
    name: String,
    eval: Arc<EvalFn>,
    lipschitz: f64,
    semiconcavity: f64,
    is_convex: bool,
    far_field: FarField,
    symmetry: Symmetry,
    /// Radius below which second differences are only trusted through the
    /// quadratic model `δ(ρ) ≈ δ(r)·ρ²/r²` (grid functions have kinks at
    /// the resolution scale).
    core_radius: Option<f64>,
}

impl fmt::Debug for TestFunctionProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunctionProfile")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("semiconcavity", &self.semiconcavity)
            .field("is_convex", &self.is_convex)
            .field("far_field", &self.far_field)
            .finish()
    }
}

impl TestFunctionProfile {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        semiconcavity: f64,
        is_convex: bool,
        far_field: FarField,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            lipschitz,
            semiconcavity,
            is_convex,
            far_field,
            symmetry: Symmetry::None,
            core_radius: None,
        }
    }

    pub fn with_symmetry(mut self, symmetry: Symmetry) -> Self {
        self.symmetry = symmetry;
        self
    }

    pub fn with_core_radius(mut self, radius: f64) -> Self {
        self.core_radius = Some(radius);
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn semiconcavity(&self) -> f64 {
        self.semiconcavity
    }

    pub fn is_convex(&self) -> bool {
        self.is_convex
    }

    pub fn far_field(&self) -> FarField {
        self.far_field
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn core_radius(&self) -> Option<f64> {
        self.core_radius
    }

    /// True when the radial integral does not depend on the direction at `x`.
    fn isotropic_at(&self, x: &[f64]) -> bool {
        self.symmetry == Symmetry::Radial && x.iter().all(|v| *v == 0.0)
    }
}

/// `√(a² + |x|²) − a`: `L = 1`, `SC = 1/a`, convex.
pub fn smoothed_cone(a: f64) -> TestFunctionProfile {
    TestFunctionProfile::new(
        if a == 1.0 { "smoothed_cone".to_string() } else { format!("smoothed_cone({a})") },
        move |x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            // a² + r² − a² over the sum, stable for small r.
            r2 / ((a * a + r2).sqrt() + a)
        },
        1.0,
        1.0 / a,
        true,
        FarField::Linear,
    )
    .with_symmetry(Symmetry::Radial)
}

/// `smoothed_cone(1) − c·exp(−|x|²)` for `c ∈ [0, 0.1]`.
///
/// The dimple adds at most `2c` to the largest Hessian eigenvalue (at the
/// origin) and never pushes the gradient norm above 1, so `L = 1` and
/// `SC = 1 + 2c`. It stays convex on this range of `c`.
pub fn gaussian_dimple(c: f64) -> Result<TestFunctionProfile> {
    if !(0.0..=0.1).contains(&c) {
        return Err(Error::InvalidInput(format!("gaussian_dimple needs c in [0, 0.1], got {c}")));
    }
    let name = if c == 0.0 { "smoothed_cone".to_string() } else { format!("gaussian_dimple({c})") };
    Ok(TestFunctionProfile::new(
        name,
        move |x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            r2 / ((1.0 + r2).sqrt() + 1.0) - c * (-r2).exp()
        },
        1.0,
        1.0 + 2.0 * c,
        true,
        FarField::Linear,
    )
    .with_symmetry(Symmetry::Radial))
}

/// `½ + Σ_i x_i/(i+1)`. The gradient norm is at most `π/√6`.
pub fn affine() -> TestFunctionProfile {
    TestFunctionProfile::new(
        "affine",
        |x: &[f64]| 0.5 + x.iter().enumerate().map(|(i, v)| v / (i as f64 + 1.0)).sum::<f64>(),
        std::f64::consts::PI / 6f64.sqrt(),
        0.0,
        true,
        FarField::Linear,
    )
    .with_symmetry(Symmetry::Affine)
}

/// `a·|x|²`. Not Lipschitz; its operator values are infinite.
pub fn quadratic(a: f64) -> TestFunctionProfile {
    TestFunctionProfile::new(
        "quadratic",
        move |x: &[f64]| a * x.iter().map(|v| v * v).sum::<f64>(),
        f64::INFINITY,
        2.0 * a.max(0.0),
        a >= 0.0,
        FarField::Unbounded,
    )
    .with_symmetry(Symmetry::Radial)
}

/// A solver grid, extended by its fallback outside the box. Constants and
/// far field are inherited from the fallback; the core radius is the grid
/// spacing.
pub fn grid_backed(grid: Arc<GridFunction>) -> TestFunctionProfile {
    let phi = grid.fallback().clone();
    let h = grid.spacing();
    TestFunctionProfile {
        name: format!("grid({})", phi.name),
        eval: Arc::new(move |x: &[f64]| grid.evaluate(x)),
        lipschitz: phi.lipschitz,
        semiconcavity: phi.semiconcavity,
        is_convex: phi.is_convex,
        far_field: phi.far_field,
        symmetry: Symmetry::None,
        core_radius: Some(h),
    }
}

/// The library of built-in profiles.
pub fn builtin_profiles() -> Vec<TestFunctionProfile> {
    vec![
        smoothed_cone(1.0),
        gaussian_dimple(0.05).expect("in range"),
        affine(),
        quadratic(1.0),
    ]
}

/// Looks a profile up by name; `param` is `a` for the cone, `c` for the
/// dimple and the quadratic coefficient.
pub fn profile_by_name(name: &str, param: Option<f64>) -> Result<TestFunctionProfile> {
    match name {
        "smoothed_cone" => Ok(smoothed_cone(param.unwrap_or(1.0))),
        "gaussian_dimple" => gaussian_dimple(param.unwrap_or(0.05)),
        "affine" => Ok(affine()),
        "quadratic" => Ok(quadratic(param.unwrap_or(1.0))),
        other => Err(Error::InvalidInput(format!(
            "unknown profile '{other}' (expected smoothed_cone, gaussian_dimple, affine, quadratic)"
        ))),
    }
}

/// `δ(u, x, y) = u(x+y) − 2u(x) + u(x−y)`.
pub fn second_difference(u: &TestFunctionProfile, x: &[f64], y: &[f64]) -> f64 {
    let p: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let m: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    u.eval(&p) - 2.0 * u.eval(x) + u.eval(&m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailPolicy {
    ErrorBar,
    RejectIfLarge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngularMode {
    /// Standard rules, switching to the graded eigenframe rule when
    /// `cond(√M)` exceeds [`GRADED_SWITCH`].
    Auto,
    Standard,
    Graded,
}

/// `cond(√M)` above which `Auto` uses the graded rule.
pub const GRADED_SWITCH: f64 = 4.0;
/// `cond(√M)` above which evaluation is refused without an override.
pub const ANISOTROPY_LIMIT: f64 = 1e6;
const PANEL_ORDER: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Number of log-uniform radial panels (8 Gauss points each).
    pub n_radial: usize,
    pub n_angular: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub tail_policy: TailPolicy,
    pub tol: f64,
    pub seed: u64,
    pub angular: AngularMode,
    /// Permits `cond(√M) > ANISOTROPY_LIMIT`.
    pub allow_extreme_anisotropy: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            n_radial: 48,
            n_angular: 32,
            r_min: 1e-4,
            r_max: 1e4,
            tail_policy: TailPolicy::ErrorBar,
            tol: 1e-2,
            seed: 0,
            angular: AngularMode::Auto,
            allow_extreme_anisotropy: false,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_radial < 4 || self.n_angular < 4 {
            return Err(Error::InvalidInput("node counts must be at least 4".into()));
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return Err(Error::InvalidInput(format!(
                "need 0 < r_min < r_max, got {} and {}",
                self.r_min, self.r_max
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("tol must be positive".into()));
        }
        Ok(())
    }

    /// Same spec with radial panels and angular nodes doubled.
    pub fn refined(&self) -> Self {
        Self {
            n_radial: 2 * self.n_radial,
            n_angular: 2 * self.n_angular,
            ..self.clone()
        }
    }
}

/// An operator value with its truncation bound and, for Monte Carlo
/// angular rules, a standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorValue {
    pub value: f64,
    pub trunc_bound: f64,
    pub std_error: f64,
}

/// Log-uniform radial rule for `∫_{r0}^{r1} g(ρ) ρ^{-1-2s} dρ`.
#[derive(Clone, Debug)]
pub struct RadialRule {
    rho: Vec<f64>,
    w: Vec<f64>,
    r0: f64,
    r1: f64,
    s: f64,
}

impl RadialRule {
    pub fn new(s: f64, r0: f64, r1: f64, panels: usize) -> Self {
        let (l0, l1) = (r0.ln(), r1.ln());
        let step = (l1 - l0) / panels as f64;
        let mut rho = Vec::with_capacity(panels * PANEL_ORDER);
        let mut w = Vec::with_capacity(panels * PANEL_ORDER);
        for p in 0..panels {
            let (v, wv) = gauss_legendre_on(PANEL_ORDER, l0 + p as f64 * step, l0 + (p + 1) as f64 * step);
            for (vi, wi) in v.iter().zip(&wv) {
                // dρ/ρ = dv, and ρ^{-2s} remains.
                rho.push(vi.exp());
                w.push(wi * (-2.0 * s * vi).exp());
            }
        }
        Self { rho, w, r0, r1, s }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.rho
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }
}

/// Local constants for the truncation bound.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RadialContext {
    pub lipschitz: f64,
    pub semiconcavity: f64,
    pub far_field: FarField,
}

impl RadialContext {
    pub fn of(u: &TestFunctionProfile) -> Self {
        Self {
            lipschitz: u.lipschitz,
            semiconcavity: u.semiconcavity,
            far_field: u.far_field,
        }
    }

    /// Bound on the omitted core and tail for one direction.
    pub fn bound(&self, rule: &RadialRule) -> Result<f64> {
        let s = rule.s;
        let core = self.semiconcavity * rule.r0.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
        let tail = match self.far_field {
            FarField::Linear if s > 0.5 => {
                2.0 * self.lipschitz * rule.r1.powf(1.0 - 2.0 * s) / (2.0 * s - 1.0)
            }
            FarField::Bounded { sup_delta } => sup_delta * rule.r1.powf(-2.0 * s) / (2.0 * s),
            _ => return Err(Error::TailUnbounded { s }),
        };
        Ok(core + tail)
    }
}

/// `∫_0^∞ g(ρ) ρ^{-1-2s} dρ` with `g` sampled on the rule, the core
/// `[0, r0]` modeled as `g(r0)·ρ²/r0²` and the tail by an affine fit through
/// `g(R/2)` and `g(R)`.
pub(crate) fn radial_integral(g: &dyn Fn(f64) -> f64, rule: &RadialRule, far: FarField) -> Result<f64> {
    let s = rule.s;
    let mut body = 0.0;
    for (r, w) in rule.rho.iter().zip(&rule.w) {
        body += w * g(*r);
    }
    let q = g(rule.r0) / (rule.r0 * rule.r0);
    let core = q * rule.r0.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
    let big = rule.r1;
    let tail = match far {
        FarField::Linear if s > 0.5 => {
            let (d1, d2) = (g(big), g(0.5 * big));
            let alpha = (d1 - d2) / (0.5 * big);
            let beta = d1 - alpha * big;
            alpha * big.powf(1.0 - 2.0 * s) / (2.0 * s - 1.0) + beta * big.powf(-2.0 * s) / (2.0 * s)
        }
        FarField::Bounded { .. } => g(big) * big.powf(-2.0 * s) / (2.0 * s),
        _ => return Err(Error::TailUnbounded { s }),
    };
    Ok(body + core + tail)
}

fn check_s(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::SOutOfRange {
            s,
            range: "(0,1)",
            what: "the nonlocal operator",
        });
    }
    Ok(())
}

fn check_dims(u_dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != u_dim {
        return Err(Error::DimensionMismatch {
            expected: u_dim,
            got: x.len(),
        });
    }
    Ok(())
}

/// Graded-rule refinement depth for the anisotropy `cond(√M)`.
fn graded_levels(cond: f64) -> usize {
    ((cond * cond).log10().ceil().max(0.0) as usize + 2).clamp(2, 16)
}

/// Hemisphere rule suited to `M`, in physical coordinates.
pub fn angular_rule_for(m: &SymMatrix, quad: &QuadratureSpec) -> Result<AngularRule> {
    let n = m.dim();
    let e = m.eigenvalues();
    if e[0] <= 0.0 {
        return Err(Error::InvalidInput("M must be positive definite".into()));
    }
    let cond = (e[n - 1] / e[0]).sqrt();
    if cond > ANISOTROPY_LIMIT && !quad.allow_extreme_anisotropy {
        return Err(Error::AnisotropyTooExtreme {
            cond,
            limit: ANISOTROPY_LIMIT,
        });
    }
    let graded = match quad.angular {
        AngularMode::Standard => false,
        AngularMode::Graded => true,
        AngularMode::Auto => cond > GRADED_SWITCH,
    };
    if !graded || n > 3 || n == 1 {
        return Ok(sphere::default_rule(n, quad.n_angular, quad.seed));
    }
    let levels = graded_levels(cond);
    let order = (quad.n_angular / 4).max(PANEL_ORDER);
    let v = m.eigenvectors();
    if n == 2 {
        // θ measured from the v_min axis, refined toward 0 and π/2 in each
        // quarter.
        let quarter: Vec<f64> = sphere::graded_breaks(levels)
            .iter()
            .map(|t| t * std::f64::consts::FRAC_PI_2)
            .collect();
        let mut dirs = Vec::new();
        let mut weights = Vec::new();
        for win in quarter.windows(2) {
            let (ts, ws) = gauss_legendre_on(order, win[0], win[1]);
            for (t, w) in ts.iter().zip(&ws) {
                for th in [*t, std::f64::consts::PI - t] {
                    dirs.extend_from_slice(&[th.cos(), th.sin()]);
                    weights.push(*w);
                }
            }
        }
        let rule = AngularRule {
            dim: 2,
            dirs,
            weights,
            monte_carlo: false,
        };
        return Ok(rule.rotated(v));
    }
    let rule = sphere::polar_product(&sphere::graded_breaks(levels), order, 2 * quad.n_angular);
    let frame = DMatrix::from_columns(&[v.column(1), v.column(2), v.column(0)]);
    Ok(rule.rotated(&frame))
}

/// Per-direction radial integral and bound at `x`.
struct DirectionalIntegrator<'a> {
    u: &'a TestFunctionProfile,
    x: &'a [f64],
    ux: f64,
    rule: RadialRule,
    bound: f64,
    constant: Option<f64>,
}

impl<'a> DirectionalIntegrator<'a> {
    fn new(u: &'a TestFunctionProfile, x: &'a [f64], s: f64, quad: &QuadratureSpec) -> Result<Self> {
        let r0 = u.core_radius.map_or(quad.r_min, |h| h.max(quad.r_min));
        let rule = RadialRule::new(s, r0, quad.r_max, quad.n_radial);
        let bound = RadialContext::of(u).bound(&rule)?;
        let mut me = Self {
            u,
            x,
            ux: u.eval(x),
            rule,
            bound,
            constant: None,
        };
        if u.isotropic_at(x) {
            let mut e1 = vec![0.0; x.len()];
            e1[0] = 1.0;
            me.constant = Some(me.compute(&e1)?);
        }
        Ok(me)
    }

    fn compute(&self, dir: &[f64]) -> Result<f64> {
        let g = |rho: f64| {
            let p: Vec<f64> = self.x.iter().zip(dir).map(|(a, b)| a + rho * b).collect();
            let m: Vec<f64> = self.x.iter().zip(dir).map(|(a, b)| a - rho * b).collect();
            self.u.eval(&p) + self.u.eval(&m) - 2.0 * self.ux
        };
        radial_integral(&g, &self.rule, self.u.far_field)
    }

    fn radial(&self, dir: &[f64]) -> Result<f64> {
        match self.constant {
            Some(v) => Ok(v),
            None => self.compute(dir),
        }
    }
}

fn sum_directions(
    rule: &AngularRule,
    integ: &DirectionalIntegrator<'_>,
    weight_and_dir: &(dyn Fn(&[f64]) -> (f64, Vec<f64>) + Sync),
) -> Result<(f64, f64, f64)> {
    let n = rule.len();
    let eval_one = |i: usize| -> Result<(f64, f64)> {
        let (factor, phys) = weight_and_dir(rule.dir(i));
        let r = integ.radial(&phys)?;
        Ok((rule.weights[i] * factor * r, rule.weights[i] * factor))
    };
    let parts: Vec<(f64, f64)> = if integ.constant.is_some() {
        (0..n).map(eval_one).collect::<Result<_>>()?
    } else {
        (0..n).into_par_iter().map(eval_one).collect::<Result<_>>()?
    };
    let value: f64 = parts.iter().map(|p| p.0).sum();
    let mass: f64 = parts.iter().map(|p| p.1).sum();
    let std_error = if rule.monte_carlo && n > 1 {
        let mean = value / n as f64;
        let var = parts.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (var / n as f64).sqrt() * n as f64
    } else {
        0.0
    };
    Ok((value, mass, std_error))
}

fn finish(value: f64, bound: f64, std_error: f64, quad: &QuadratureSpec) -> Result<OperatorValue> {
    if quad.tail_policy == TailPolicy::RejectIfLarge && bound > quad.tol {
        return Err(Error::TruncationTooLarge { bound, tol: quad.tol });
    }
    Ok(OperatorValue {
        value,
        trunc_bound: bound,
        std_error,
    })
}

/// `L_M[u](x)` for an envelope matrix.
pub fn linear_fracop(
    u: &TestFunctionProfile,
    m: &EnvelopeMatrix,
    x: &[f64],
    s: f64,
    quad: &QuadratureSpec,
) -> Result<OperatorValue> {
    linear_fracop_matrix(u, m.m(), x, s, quad)
}

/// `L_M[u](x)` for any positive definite `M`, in the isotropic coordinates
/// `z = √M^{-1} y`: `Σ_ω w·|√Mω|^{2s}·R(√Mω/|√Mω|)`.
pub fn linear_fracop_matrix(
    u: &TestFunctionProfile,
    m: &SymMatrix,
    x: &[f64],
    s: f64,
    quad: &QuadratureSpec,
) -> Result<OperatorValue> {
    check_s(s)?;
    quad.validate()?;
    check_dims(m.dim(), x)?;
    if u.symmetry == Symmetry::Affine {
        return Ok(OperatorValue::default());
    }
    let rule = angular_rule_for(m, quad)?;
    let integ = DirectionalIntegrator::new(u, x, s, quad)?;
    let sqrt_m = m.map_eigenvalues(f64::sqrt);
    let n = m.dim();
    let map = |w: &[f64]| {
        let v: Vec<f64> = (0..n).map(|r| (0..n).map(|c| sqrt_m[(r, c)] * w[c]).sum()).collect();
        let c = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        (c.powf(2.0 * s), v.iter().map(|t| t / c).collect())
    };
    let (value, mass, se) = sum_directions(&rule, &integ, &map)?;
    finish(value, mass * integ.bound, se, quad)
}

/// The same operator in the original coordinates with the anisotropic kernel:
/// `det√M^{-1}·Σ_ω w·|√M^{-1}ω|^{-n-2s}·R(ω)`.
pub fn linear_fracop_ycoords(
    u: &TestFunctionProfile,
    m: &EnvelopeMatrix,
    x: &[f64],
    s: f64,
    quad: &QuadratureSpec,
) -> Result<OperatorValue> {
    linear_fracop_ycoords_matrix(u, m.m(), x, s, quad)
}

pub fn linear_fracop_ycoords_matrix(
    u: &TestFunctionProfile,
    m: &SymMatrix,
    x: &[f64],
    s: f64,
    quad: &QuadratureSpec,
) -> Result<OperatorValue> {
    check_s(s)?;
    quad.validate()?;
    check_dims(m.dim(), x)?;
    if u.symmetry == Symmetry::Affine {
        return Ok(OperatorValue::default());
    }
    let rule = angular_rule_for(m, quad)?;
    let integ = DirectionalIntegrator::new(u, x, s, quad)?;
    let n = m.dim();
    let inv = m.map_eigenvalues(|v| 1.0 / v.sqrt());
    let det_inv: f64 = m.eigenvalues().iter().map(|v| 1.0 / v.sqrt()).product();
    let expo = -(n as f64) - 2.0 * s;
    let map = |w: &[f64]| {
        let len = (0..n)
            .map(|r| (0..n).map(|c| inv[(r, c)] * w[c]).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt();
        (det_inv * len.powf(expo), w.to_vec())
    };
    let (value, mass, se) = sum_directions(&rule, &integ, &map)?;
    finish(value, mass * integ.bound, se, quad)
}

/// Columns of `frame` must be orthonormal.
fn check_frame(frame: &DMatrix<f64>) -> Result<()> {
    let g = frame.transpose() * frame;
    let defect = (g - DMatrix::identity(frame.ncols(), frame.ncols())).amax();
    if defect > 1e-10 || !defect.is_finite() {
        return Err(Error::FrameNotOrthonormal { defect });
    }
    Ok(())
}

fn check_subspace_s(s: f64) -> Result<()> {
    if !(s > 0.5 && s < 1.0) {
        return Err(Error::SOutOfRange {
            s,
            range: "(1/2,1)",
            what: "the subspace integral",
        });
    }
    Ok(())
}

/// `½∫_{ℝ^d} δ(u, x, Σ z_i e_i) |z|^{-d-2s} dz` over the span of the `d`
/// columns of `frame`.
pub fn subspace_fraclap(
    u: &TestFunctionProfile,
    frame: &DMatrix<f64>,
    x: &[f64],
    s: f64,
    quad: &QuadratureSpec,
) -> Result<OperatorValue> {
    check_subspace_s(s)?;
    quad.validate()?;
    check_dims(frame.nrows(), x)?;
    check_frame(frame)?;
    if u.symmetry == Symmetry::Affine {
        return Ok(OperatorValue::default());
    }
    let rule = sphere::default_rule(frame.ncols(), quad.n_angular, quad.seed).rotated(frame);
    let integ = DirectionalIntegrator::new(u, x, s, quad)?;
    let (value, mass, se) = sum_directions(&rule, &integ, &|w: &[f64]| (1.0, w.to_vec()))?;
    finish(value, mass * integ.bound, se, quad)
}

/// First-difference form `∫_{ℝ^d} (u(x + Σ z_i e_i) − u(x)) |z|^{-d-2s} dz`.
///
/// For `d = 2` the angular sum uses an odd uniform full-circle rule, so no
/// direction is paired with its antipode and the cancellation of the
/// first-order terms comes from the rule itself. Other `d` fall back to
/// antipodal pairs.
pub fn subspace_fraclap_first_difference(
    u: &TestFunctionProfile,
    frame: &DMatrix<f64>,
    x: &[f64],
    s: f64,
    quad: &QuadratureSpec,
) -> Result<OperatorValue> {
    check_subspace_s(s)?;
    quad.validate()?;
    check_dims(frame.nrows(), x)?;
    check_frame(frame)?;
    let d = frame.ncols();
    let n = frame.nrows();
    let rule = if d == 2 {
        sphere::odd_full_circle(2 * quad.n_angular).rotated(frame)
    } else {
        sphere::default_rule(d, quad.n_angular, quad.seed).rotated(frame)
    };
    let antipodal = d != 2;
    let ux = u.eval(x);
    let radial = RadialRule::new(s, quad.r_min, quad.r_max, quad.n_radial);
    let bound = RadialContext::of(u).bound(&radial)?;
    let g = |rho: f64| {
        let mut acc = 0.0;
        let mut p = vec![0.0; n];
        for i in 0..rule.len() {
            let w = rule.dir(i);
            for k in 0..n {
                p[k] = x[k] + rho * w[k];
            }
            let mut diff = u.eval(&p) - ux;
            if antipodal {
                for k in 0..n {
                    p[k] = x[k] - rho * w[k];
                }
                diff += u.eval(&p) - ux;
            }
            acc += rule.weights[i] * diff;
        }
        acc
    };
    let value = radial_integral(&g, &radial, u.far_field)?;
    let mass: f64 = rule.weights.iter().sum::<f64>() * if antipodal { 1.0 } else { 0.5 };
    finish(value, mass * bound, 0.0, quad)
}

/// An orthonormal `n × (n−1)` frame: the first `n−1` columns of `q`.
pub fn frame_from_orthogonal(q: &DMatrix<f64>) -> DMatrix<f64> {
    q.columns(0, q.ncols() - 1).into_owned()
}

/// Sampled-pair spot check of a profile's declared constants.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct ProfileCheck {
    pub lipschitz_ok: bool,
    pub semiconcavity_ok: bool,
    pub convexity_ok: bool,
}

pub fn spot_check<R: rand::Rng + ?Sized>(
    u: &TestFunctionProfile,
    n: usize,
    pairs: usize,
    rng: &mut R,
) -> ProfileCheck {
    let mut out = ProfileCheck {
        lipschitz_ok: true,
        semiconcavity_ok: true,
        convexity_ok: true,
    };
    for _ in 0..pairs {
        let scale = 10f64.powf(rng.gen_range(-3.0..1.5));
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let y2: f64 = y.iter().map(|v| v * v).sum();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        if (u.eval(&xy) - u.eval(&x)).abs() > u.lipschitz * y2.sqrt() + 1e-9 {
            out.lipschitz_ok = false;
        }
        let d = second_difference(u, &x, &y);
        if d > u.semiconcavity * y2 + 1e-9 {
            out.semiconcavity_ok = false;
        }
        if u.is_convex && d < -1e-9 {
            out.convexity_ok = false;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::dfk;

    const GOLDEN_N3_S075: f64 = 31.065_319_379_877_42;

    #[test]
    fn second_difference_examples() {
        let a = affine();
        assert!(second_difference(&a, &[0.3, -1.0], &[2.0, 0.7]).abs() < 1e-14);
        let q = quadratic(1.0);
        assert!((second_difference(&q, &[0.0, 0.0], &[1.0, 0.0]) - 2.0).abs() < 1e-15);
        let c = smoothed_cone(1.0);
        let v = second_difference(&c, &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
        assert!((v - 2.0 * (2f64.sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn profile_examples() {
        let c = smoothed_cone(1.0);
        assert_eq!(c.eval(&[0.0, 0.0]), 0.0);
        assert!((c.eval(&[1.0, 0.0]) - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        let d = gaussian_dimple(0.0).unwrap();
        for x in [[0.3, -0.2], [4.0, 1.0], [0.0, 0.0]] {
            assert_eq!(d.eval(&x), c.eval(&x));
        }
        assert!(gaussian_dimple(0.2).is_err());
    }

    #[test]
    fn declared_constants_hold() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for u in [smoothed_cone(1.0), smoothed_cone(0.5), gaussian_dimple(0.1).unwrap(), affine()] {
            for n in 1..=4 {
                let chk = spot_check(&u, n, 2000, &mut rng);
                assert!(chk.lipschitz_ok && chk.semiconcavity_ok && chk.convexity_ok, "{} n={n}", u.name());
            }
        }
    }

    #[test]
    fn golden_identity_value() {
        let m = SymMatrix::identity(3);
        let v = linear_fracop_matrix(&smoothed_cone(1.0), &m, &[0.0; 3], 0.75, &QuadratureSpec::default()).unwrap();
        assert!((v.value / GOLDEN_N3_S075 - 1.0).abs() < 1e-4, "{}", v.value);
        assert!(v.trunc_bound > 0.0);
    }

    #[test]
    fn direct_path_matches_isotropic_shortcut() {
        // Same radial profile evaluated away from its symmetry center by
        // shifting the function instead of the point.
        let shifted = TestFunctionProfile::new(
            "shifted",
            |x: &[f64]| {
                let r2: f64 = x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum();
                (1.0 + r2).sqrt() - 1.0
            },
            1.0,
            1.0,
            true,
            FarField::Linear,
        );
        let quad = QuadratureSpec {
            n_angular: 8,
            ..Default::default()
        };
        let m = SymMatrix::identity(2);
        let a = linear_fracop_matrix(&shifted, &m, &[0.5, 0.5], 0.75, &quad).unwrap();
        let b = linear_fracop_matrix(&smoothed_cone(1.0), &m, &[0.0, 0.0], 0.75, &quad).unwrap();
        assert!((a.value / b.value - 1.0).abs() < 1e-10);
        assert!((b.value / 15.532_659_689_938_71 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn isotropic_scaling_is_exact() {
        let u = smoothed_cone(1.0);
        let m = dfk(&SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]), 2).unwrap();
        let quad = QuadratureSpec::default();
        let base = linear_fracop(&u, &m, &[0.0; 3], 0.6, &quad).unwrap().value;
        for c in [0.25, 4.0] {
            let scaled = linear_fracop_matrix(&u, &m.m().scaled(c), &[0.0; 3], 0.6, &quad).unwrap().value;
            assert!((scaled / (c.powf(0.6) * base) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn affine_is_zero() {
        let m = SymMatrix::identity(3);
        let v = linear_fracop_matrix(&affine(), &m, &[1.0, 2.0, 3.0], 0.3, &QuadratureSpec::default()).unwrap();
        assert_eq!(v, OperatorValue::default());
    }

    #[test]
    fn tail_guards() {
        let m = SymMatrix::identity(2);
        let q = QuadratureSpec::default();
        assert!(matches!(
            linear_fracop_matrix(&smoothed_cone(1.0), &m, &[0.0, 0.0], 0.4, &q),
            Err(Error::TailUnbounded { .. })
        ));
        assert!(matches!(
            linear_fracop_matrix(&quadratic(1.0), &m, &[0.0, 0.0], 0.75, &q),
            Err(Error::TailUnbounded { .. })
        ));
        let strict = QuadratureSpec {
            tail_policy: TailPolicy::RejectIfLarge,
            tol: 1e-6,
            ..Default::default()
        };
        assert!(matches!(
            linear_fracop_matrix(&smoothed_cone(1.0), &m, &[0.0, 0.0], 0.75, &strict),
            Err(Error::TruncationTooLarge { .. })
        ));
    }

    #[test]
    fn bounded_far_field_allows_small_s() {
        // u = 1 − exp(−|x|²) has bounded second differences; its 1-D
        // operator at 0 is ∫ 2(1 − e^{−ρ²}) ρ^{-1-2s} dρ = Γ(1−s)/s.
        let bump = TestFunctionProfile::new(
            "bump",
            |x: &[f64]| 1.0 - (-x.iter().map(|v| v * v).sum::<f64>()).exp(),
            1.0,
            2.0,
            false,
            FarField::Bounded { sup_delta: 2.0 },
        )
        .with_symmetry(Symmetry::Radial);
        let s = 0.3;
        let quad = QuadratureSpec {
            n_angular: 8,
            ..Default::default()
        };
        let v = linear_fracop_matrix(&bump, &SymMatrix::identity(1), &[0.0], s, &quad).unwrap();
        let exact = statrs::function::gamma::gamma(1.0 - s) / s;
        assert!((v.value / exact - 1.0).abs() < 1e-6, "{} vs {exact}", v.value);
    }

    #[test]
    fn extreme_anisotropy_is_refused() {
        let m = SymMatrix::from_diagonal(&[1e-13, 1.0, 1.0]);
        let q = QuadratureSpec::default();
        assert!(matches!(
            linear_fracop_matrix(&smoothed_cone(1.0), &m, &[0.0; 3], 0.75, &q),
            Err(Error::AnisotropyTooExtreme { .. })
        ));
        let q = QuadratureSpec {
            allow_extreme_anisotropy: true,
            ..q
        };
        assert!(linear_fracop_matrix(&smoothed_cone(1.0), &m, &[0.0; 3], 0.75, &q).is_ok());
    }

    #[test]
    fn subspace_forms() {
        let u = gaussian_dimple(0.05).unwrap();
        let quad = QuadratureSpec::default();
        let frame = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let a = subspace_fraclap(&u, &frame, &[0.0; 3], 0.75, &quad).unwrap();
        let b = subspace_fraclap_first_difference(&u, &frame, &[0.0; 3], 0.75, &quad).unwrap();
        assert!((a.value / b.value - 1.0).abs() < 1e-6, "{} {}", a.value, b.value);
        let bad = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.5, 1.0, 0.0]);
        assert!(matches!(
            subspace_fraclap(&u, &bad, &[0.0; 3], 0.75, &quad),
            Err(Error::FrameNotOrthonormal { .. })
        ));
    }
}
