//! The fractional k-Hessian `F_{k,s}[u](x) = inf_{M ∈ M_k} L_M[u](x)`, its
//! restriction to `λ_min(M) ≥ ε0`, and the degenerate family `B_ε`.
//!
//! `M_k` is searched through generators `B = Q·diag(σ)·Qᵀ`. The chart for
//! `σ` is `(q_1, …, q_{n-1}, n − Σq)`, which meets every ray of `Γ_k` once
//! (`dfk` is scale-invariant) and puts `B = I` at `q = 1`. `Q` is a product
//! of Givens rotations.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{dfk_from_generator, sample_gamma_k, EnvelopeMatrix, EnvelopeRecord, SamplerOptions};
use crate::error::{Error, Result};
use crate::fracop::{linear_fracop, OperatorValue, QuadratureSpec, TestFunctionProfile};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::symcone::{elementary_symmetric, in_gamma_k, SymMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Eigenvalues and rotation.
    Full,
    /// Eigenvalues only, in the coordinate frame.
    Diagonal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InfOptions {
    pub n_starts: usize,
    pub seed: u64,
    pub mode: SearchMode,
    pub max_evals: usize,
    pub xtol: f64,
    pub quad: QuadratureSpec,
}

impl Default for InfOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            seed: 0,
            mode: SearchMode::Full,
            max_evals: 4000,
            xtol: 1e-6,
            quad: QuadratureSpec::default(),
        }
    }
}

impl InfOptions {
    fn nm(&self) -> NelderMeadOptions {
        NelderMeadOptions {
            max_evals: self.max_evals,
            xtol: self.xtol,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InfResult {
    pub value: f64,
    pub argmin: EnvelopeMatrix,
    pub n_starts: usize,
    pub converged: bool,
    /// Best value after each simplex iteration of the winning start.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InfRecord {
    pub value: f64,
    pub argmin: EnvelopeRecord,
    pub lambda_min: f64,
    pub n_starts: usize,
    pub converged: bool,
    pub evaluations: usize,
    pub history: Vec<f64>,
}

impl InfResult {
    pub fn to_record(&self) -> InfRecord {
        InfRecord {
            value: self.value,
            argmin: self.argmin.to_record(),
            lambda_min: self.argmin.lambda_min(),
            n_starts: self.n_starts,
            converged: self.converged,
            evaluations: self.evaluations,
            history: self.history.clone(),
        }
    }
}

/// Product of Givens rotations `G(i, j, θ_ij)` over `i < j`.
pub fn givens(n: usize, angles: &[f64]) -> DMatrix<f64> {
    let mut q = DMatrix::identity(n, n);
    let mut a = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if a >= angles.len() {
                return q;
            }
            let (s, c) = angles[a].sin_cos();
            a += 1;
            for r in 0..n {
                let (qi, qj) = (q[(r, i)], q[(r, j)]);
                q[(r, i)] = c * qi - s * qj;
                q[(r, j)] = s * qi + c * qj;
            }
        }
    }
    q
}

fn n_angles(n: usize, mode: SearchMode) -> usize {
    match mode {
        SearchMode::Full => n * (n - 1) / 2,
        SearchMode::Diagonal => 0,
    }
}

/// Generator `(Q, σ)` for chart coordinates `p = (q_1..q_{n-1}, angles)`.
pub fn chart_generator(p: &[f64], n: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut sigma: Vec<f64> = p[..n - 1].to_vec();
    sigma.push(n as f64 - sigma.iter().sum::<f64>());
    (givens(n, &p[n - 1..]), sigma)
}

struct Search<'a> {
    u: &'a TestFunctionProfile,
    x: &'a [f64],
    k: usize,
    s: f64,
    eps0: f64,
    opts: &'a InfOptions,
}

impl Search<'_> {
    fn n(&self) -> usize {
        self.x.len()
    }

    fn matrix(&self, p: &[f64]) -> Option<EnvelopeMatrix> {
        let (q, sigma) = chart_generator(p, self.n());
        if !in_gamma_k(&sigma, self.k) {
            return None;
        }
        let m = dfk_from_generator(&q, &sigma, self.k).ok()?;
        (m.lambda_min() >= self.eps0).then_some(m)
    }

    fn objective(&self, p: &[f64]) -> f64 {
        self.matrix(p)
            .and_then(|m| linear_fracop(self.u, &m, self.x, self.s, &self.opts.quad).ok())
            .map_or(f64::INFINITY, |v| v.value)
    }

    fn starts(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let na = n_angles(n, self.opts.mode);
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        let mut out = Vec::new();
        let identity: Vec<f64> = std::iter::repeat(1.0).take(n - 1).chain(std::iter::repeat(0.0).take(na)).collect();
        if self.matrix(&identity).is_some() {
            out.push(identity);
        }
        let sampler = SamplerOptions::default();
        let mut attempts = 0;
        while out.len() < self.opts.n_starts && attempts < 200 * self.opts.n_starts.max(1) {
            attempts += 1;
            let Ok(sigma) = sample_gamma_k(n, self.k, &sampler, &mut rng) else {
                continue;
            };
            let sum: f64 = sigma.iter().sum();
            let mut p: Vec<f64> = sigma[..n - 1].iter().map(|v| v * n as f64 / sum).collect();
            p.extend((0..na).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)));
            if self.matrix(&p).is_some() {
                out.push(p);
            }
        }
        out
    }

    fn run(&self, starts: Vec<Vec<f64>>) -> Result<InfResult> {
        let n = self.n();
        let dim = n - 1 + n_angles(n, self.opts.mode);
        let step: Vec<f64> = (0..dim).map(|i| if i < n - 1 { 0.25 } else { 0.5 }).collect();
        let nm = self.opts.nm();
        let runs: Vec<_> = starts
            .par_iter()
            .map(|p0| nelder_mead(|p| self.objective(p), p0, &step, &nm))
            .collect();
        let best = (0..runs.len())
            .min_by(|&a, &b| runs[a].f.total_cmp(&runs[b].f).then(a.cmp(&b)))
            .ok_or(Error::InfeasibleConstraint { eps0: self.eps0 })?;
        let r = &runs[best];
        let argmin = self.matrix(&r.x).ok_or(Error::InfeasibleConstraint { eps0: self.eps0 })?;
        Ok(InfResult {
            value: r.f,
            argmin,
            n_starts: runs.len(),
            converged: r.converged,
            history: r.history.clone(),
            evaluations: runs.iter().map(|r| r.evals).sum(),
        })
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n || n < 2 {
        return Err(Error::IndexOutOfRange { index: k, n });
    }
    Ok(())
}

/// `F_{k,s}[u](x)` by multi-start simplex search over `M_k`.
pub fn f_ks(u: &TestFunctionProfile, x: &[f64], k: usize, s: f64, opts: &InfOptions) -> Result<InfResult> {
    f_ks_restricted(u, x, k, s, 0.0, opts)
}

/// `F^{ε0}_{k,s}[u](x)`: the same search restricted to `λ_min(M) ≥ ε0`.
pub fn f_ks_restricted(
    u: &TestFunctionProfile,
    x: &[f64],
    k: usize,
    s: f64,
    eps0: f64,
    opts: &InfOptions,
) -> Result<InfResult> {
    let n = x.len();
    check_k(n, k)?;
    if !(eps0 >= 0.0) {
        return Err(Error::InvalidInput(format!("eps0 must be nonnegative, got {eps0}")));
    }
    // Surface configuration errors (tail, anisotropy, s range) directly.
    let m0 = crate::envelope::dfk(&SymMatrix::identity(n), k)?;
    linear_fracop(u, &m0, x, s, &opts.quad)?;
    let search = Search {
        u,
        x,
        k,
        s,
        eps0,
        opts,
    };
    let starts = search.starts();
    if starts.is_empty() {
        return Err(Error::InfeasibleConstraint { eps0 });
    }
    search.run(starts)
}

/// Generator of the `k = 2` level set `{λ_min(M) = ε}`: `σ'` on
/// `Σσ' = 2ε` (coordinates `d`, `n−2` of them) and
/// `σ_n = (1 − σ_2(σ'))/(2ε)`, which makes `σ_2(σ) = 1` and
/// `η_n = Σσ'/2 = ε`. Returns `None` when `σ_n` is not the largest entry
/// (then `η_n` is not the minimum) or `σ ∉ Γ_2`.
pub fn level_set_generator(eps: f64, d: &[f64], n: usize) -> Option<Vec<f64>> {
    let base = 2.0 * eps / (n as f64 - 1.0);
    let mut sigma: Vec<f64> = d.iter().map(|v| base + v).collect();
    sigma.push(base - d.iter().sum::<f64>());
    let s2 = if n - 1 >= 2 { elementary_symmetric(2, &sigma).ok()? } else { 0.0 };
    let last = (1.0 - s2) / (2.0 * eps);
    if sigma.iter().any(|&v| v > last) {
        return None;
    }
    sigma.push(last);
    in_gamma_k(&sigma, 2).then_some(sigma)
}

/// Minimum of `L_M[u](x)` over `{M ∈ M_2 : λ_min(M) = ε}`.
pub fn level_set_min(u: &TestFunctionProfile, x: &[f64], s: f64, eps: f64, opts: &InfOptions) -> Result<InfResult> {
    let n = x.len();
    check_k(n, 2)?;
    degenerate_family(eps, n)?;
    let nd = n - 2;
    let na = n_angles(n, opts.mode);
    let matrix = |p: &[f64]| -> Option<EnvelopeMatrix> {
        let sigma = level_set_generator(eps, &p[..nd], n)?;
        dfk_from_generator(&givens(n, &p[nd..]), &sigma, 2).ok()
    };
    let objective = |p: &[f64]| {
        matrix(p)
            .and_then(|m| linear_fracop(u, &m, x, s, &opts.quad).ok())
            .map_or(f64::INFINITY, |v| v.value)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![vec![0.0; nd + na]];
    let mut attempts = 0;
    while starts.len() < opts.n_starts && attempts < 1000 {
        attempts += 1;
        let mut p: Vec<f64> = (0..nd).map(|_| rng.gen_range(-1.0..1.0) * eps).collect();
        p.extend((0..na).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)));
        if matrix(&p).is_some() {
            starts.push(p);
        }
    }
    // Surface quadrature errors at the family point.
    linear_fracop(u, &matrix(&starts[0]).expect("family point is feasible"), x, s, &opts.quad)?;
    let step: Vec<f64> = (0..nd + na).map(|i| if i < nd { 0.25 * eps } else { 0.5 }).collect();
    let nm = opts.nm();
    let runs: Vec<_> = starts.par_iter().map(|p0| nelder_mead(objective, p0, &step, &nm)).collect();
    let best = (0..runs.len())
        .min_by(|&a, &b| runs[a].f.total_cmp(&runs[b].f).then(a.cmp(&b)))
        .expect("at least one start");
    let r = &runs[best];
    Ok(InfResult {
        value: r.f,
        argmin: matrix(&r.x).expect("simplex keeps the best point feasible"),
        n_starts: runs.len(),
        converged: r.converged,
        history: r.history.clone(),
        evaluations: runs.iter().map(|r| r.evals).sum(),
    })
}

/// The degenerate generator `B_ε = diag(2ε/(n−1), …, 2ε/(n−1), h(ε))`.
#[derive(Clone, Debug)]
pub struct DegenerateFamily {
    pub eps: f64,
    pub n: usize,
    pub b_eps: SymMatrix,
    pub h_eps: f64,
    pub g_eps: f64,
}

/// Largest admissible `ε` for the family in dimension `n`.
pub fn degenerate_eps_max(n: usize) -> f64 {
    if n <= 2 {
        std::f64::consts::FRAC_1_SQRT_2
    } else {
        0.5 * ((n as f64 - 1.0) / (2.0 * (n as f64 - 2.0))).sqrt()
    }
}

/// `h(ε) = (1 − 2(n−2)ε²/(n−1))/(2ε)`.
pub fn h_of(eps: f64, n: usize) -> f64 {
    let nf = n as f64;
    (1.0 - 2.0 * (nf - 2.0) * eps * eps / (nf - 1.0)) / (2.0 * eps)
}

/// `g(ε) = ((n−2)ε/(n−1) + h(ε)/2)^{-1/2}`.
pub fn g_of(eps: f64, n: usize) -> f64 {
    let nf = n as f64;
    ((nf - 2.0) * eps / (nf - 1.0) + 0.5 * h_of(eps, n)).powf(-0.5)
}

pub fn degenerate_family(eps: f64, n: usize) -> Result<DegenerateFamily> {
    let max = degenerate_eps_max(n);
    if n < 2 || !(eps > 0.0 && eps < max) {
        return Err(Error::EpsOutOfRange { eps, max, n });
    }
    let h = h_of(eps, n);
    let mut d = vec![2.0 * eps / (n as f64 - 1.0); n - 1];
    d.push(h);
    Ok(DegenerateFamily {
        eps,
        n,
        b_eps: SymMatrix::from_diagonal(&d),
        h_eps: h,
        g_eps: g_of(eps, n),
    })
}

impl DegenerateFamily {
    pub fn envelope(&self) -> Result<EnvelopeMatrix> {
        crate::envelope::dfk(&self.b_eps, 2)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub value: f64,
    pub trunc_bound: f64,
}

/// `L_{M(B_ε)}[u](x)` for each `ε` (descending), with the eigenframe-graded
/// angular rule.
pub fn degenerate_sweep(
    u: &TestFunctionProfile,
    x: &[f64],
    s: f64,
    eps_list: &[f64],
    quad: &QuadratureSpec,
) -> Result<Vec<SweepRow>> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("eps_list must be strictly descending".into()));
    }
    let quad = QuadratureSpec {
        angular: crate::fracop::AngularMode::Graded,
        allow_extreme_anisotropy: true,
        ..quad.clone()
    };
    eps_list
        .iter()
        .map(|&eps| {
            let fam = degenerate_family(eps, x.len())?;
            let OperatorValue { value, trunc_bound, .. } = linear_fracop(u, &fam.envelope()?, x, s, &quad)?;
            Ok(SweepRow { eps, value, trunc_bound })
        })
        .collect()
}
