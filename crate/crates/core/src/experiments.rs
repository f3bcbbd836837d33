//! Verification harnesses. Each returns an [`ExperimentReport`] whose
//! verdict is computed from its own sample table and tolerances.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::constants::{ellipticity_threshold, mu0, mu1};
use crate::envelope::{dfk, dfk_fd, random_orthogonal, sample_gamma_k, sample_mk, SamplerOptions};
use crate::error::{Error, Result};
use crate::fracop::{
    frame_from_orthogonal, subspace_fraclap, QuadratureSpec, Symmetry, TestFunctionProfile,
};
use crate::infimum::{
    degenerate_eps_max, degenerate_sweep, f_ks, f_ks_restricted, level_set_generator, level_set_min, InfOptions,
};
use crate::report::{csv_table, to_json_string};
use crate::symcone::{f_k, SymMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The input violates the hypotheses the experiment tests.
    NotApplicable,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub inputs: serde_json::Value,
    pub columns: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub summary: BTreeMap<String, f64>,
    pub verdict: Verdict,
    pub tolerances: BTreeMap<String, f64>,
    /// Soft assertions and explanations; never affect the verdict.
    pub notes: Vec<String>,
}

impl ExperimentReport {
    fn new(name: &str, inputs: serde_json::Value, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            inputs,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            samples: Vec::new(),
            summary: BTreeMap::new(),
            verdict: Verdict::NotApplicable,
            tolerances: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_string(self)
    }

    pub fn samples_csv(&self) -> String {
        let header: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        csv_table(&header, &self.samples)
    }

    /// Writes `<dir>/<name>.json` and `<dir>/<name>.csv`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let json_path = dir.join(format!("{}.json", self.name));
        let csv_path = dir.join(format!("{}.csv", self.name));
        fs::write(&json_path, self.to_json()?)?;
        fs::write(&csv_path, self.samples_csv())?;
        Ok(vec![json_path, csv_path])
    }

    fn column(&self, name: &str) -> Vec<f64> {
        let j = self.columns.iter().position(|c| c == name).expect("known column");
        self.samples.iter().map(|r| r[j]).collect()
    }
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug)]
pub struct BlowupOptions {
    pub quad: QuadratureSpec,
    pub slope_tol: f64,
    /// When set, the lower bound `C4 μ0/(1−s) ε^{−s}` is evaluated and logged.
    pub eta0: Option<f64>,
}

impl Default for BlowupOptions {
    fn default() -> Self {
        Self {
            quad: QuadratureSpec::default(),
            slope_tol: 0.05,
            eta0: None,
        }
    }
}

/// Growth of `L_{M(B_ε)}[u](0)` along the degenerate family: the fitted
/// log-log slope must be `−s` within `slope_tol`, and values must increase
/// as `ε` decreases.
pub fn blowup_experiment(
    u: &TestFunctionProfile,
    n: usize,
    s: f64,
    eps_list: &[f64],
    opts: &BlowupOptions,
) -> Result<ExperimentReport> {
    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    if eps.len() < 2 || eps[0] / eps[eps.len() - 1] < 100.0 * (1.0 - 1e-12) {
        return Err(Error::InvalidInput("eps_list must span at least two decades".into()));
    }
    let mut rep = ExperimentReport::new(
        "blowup",
        json!({ "profile": u.name(), "n": n, "s": s, "eps_list": eps, "quad": opts.quad, "eta0": opts.eta0 }),
        &["eps", "value", "trunc_bound", "value_times_eps_pow_s"],
    );
    rep.tolerances.insert("slope".into(), opts.slope_tol);
    if u.symmetry() == Symmetry::Affine {
        rep.notes.push("affine input: every value is 0, no growth to measure".into());
        for &e in &eps {
            rep.samples.push(vec![e, 0.0, 0.0, 0.0]);
        }
        return Ok(rep);
    }
    let rows = degenerate_sweep(u, &vec![0.0; n], s, &eps, &opts.quad)?;
    rep.samples = rows
        .iter()
        .map(|r| vec![r.eps, r.value, r.trunc_bound, r.value * r.eps.powf(s)])
        .collect();
    let values = rep.column("value");
    if values.iter().all(|v| *v == 0.0) {
        rep.notes.push("all values vanish: degenerate input".into());
        return Ok(rep);
    }
    let monotone = values.windows(2).all(|w| w[1] > w[0]);
    let slope = if values.iter().all(|v| *v > 0.0) {
        let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
        let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        ls_slope(&lx, &ly)
    } else {
        f64::NAN
    };
    rep.summary.insert("slope".into(), slope);
    rep.summary.insert("slope_error".into(), (slope + s).abs());
    rep.summary.insert("monotone".into(), f64::from(u8::from(monotone)));
    rep.verdict = verdict(monotone && (slope + s).abs() <= opts.slope_tol);
    if let Some(eta0) = opts.eta0 {
        match ellipticity_threshold(n, s, u.lipschitz(), u.semiconcavity(), eta0) {
            Ok(c) => {
                let k = c.c4.closed_form * c.mu0.closed_form / (1.0 - s);
                let held = values.iter().zip(&eps).filter(|(v, e)| **v >= k * e.powf(-s)).count();
                rep.summary.insert("soft_bound_constant".into(), k);
                rep.summary.insert("soft_bound_held".into(), held as f64);
                rep.notes.push(format!(
                    "soft lower bound C4*mu0/(1-s)*eps^-s with constant {k:.6e} held at {held} of {} points",
                    eps.len()
                ));
            }
            Err(e) => rep.notes.push(format!("soft lower bound unavailable: {e}")),
        }
    }
    Ok(rep)
}

/// `v(y) = u(Q Λ^{-1} y)`: `u` viewed in the eigenframe of `M`, with the
/// coordinates rescaled by the `λ_j = η_j^{-1/2}`.
fn rescaled_profile(u: &TestFunctionProfile, q: &DMatrix<f64>, lambda: &[f64]) -> TestFunctionProfile {
    let n = lambda.len();
    let mut a = q.clone();
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] /= lambda[j];
        }
    }
    let stretch = lambda.iter().fold(f64::INFINITY, |m, &l| m.min(l)).recip();
    let inner = u.clone();
    let v = TestFunctionProfile::new(
        format!("{}-rescaled", u.name()),
        move |y: &[f64]| {
            let x: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[(i, j)] * y[j]).sum()).collect();
            inner.eval(&x)
        },
        u.lipschitz() * stretch,
        u.semiconcavity() * stretch * stretch,
        u.is_convex(),
        u.far_field(),
    );
    if u.symmetry() == Symmetry::Affine {
        v.with_symmetry(Symmetry::Affine)
    } else {
        v
    }
}

#[derive(Clone, Debug)]
pub struct SubspaceOptions {
    pub quad: QuadratureSpec,
    /// Number of sampled `M ∈ M_2` for the weighted nonnegativity check.
    pub n_weighted: usize,
    pub bound_tol: f64,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        Self {
            quad: QuadratureSpec::default(),
            n_weighted: 8,
            bound_tol: 1e-6,
        }
    }
}

/// `(1−s)` times the subspace integral at the origin over random
/// `(n−1)`-frames, checked against `[μ0, μ1]`; plus the `M`-weighted
/// subspace integrals, checked for nonnegativity.
pub fn subspace_bounds_check<R: Rng + ?Sized>(
    u: &TestFunctionProfile,
    n: usize,
    s: f64,
    eta0_measured: Option<f64>,
    n_frames: usize,
    opts: &SubspaceOptions,
    rng: &mut R,
) -> Result<ExperimentReport> {
    if n < 2 || n_frames == 0 {
        return Err(Error::InvalidInput("need n >= 2 and at least one frame".into()));
    }
    let l = u.lipschitz();
    let sc = u.semiconcavity();
    let upper = if u.symmetry() == Symmetry::Affine {
        // SC = 0 degenerates the min-profile; any positive SC gives a valid
        // upper bound for an affine function, whose integral is 0.
        mu1(n, s, l, 1.0)?
    } else {
        mu1(n, s, l, sc)?
    };
    let lower = match eta0_measured {
        Some(eta0) if eta0 > 0.0 => Some(mu0(n, s, eta0, l, sc)?),
        _ => None,
    };
    let mut rep = ExperimentReport::new(
        "subspace_bounds",
        json!({
            "profile": u.name(), "n": n, "s": s, "eta0_measured": eta0_measured,
            "n_frames": n_frames, "n_weighted": opts.n_weighted, "quad": opts.quad,
        }),
        &["kind", "index", "value", "trunc_bound"],
    );
    rep.tolerances.insert("bound".into(), opts.bound_tol);
    rep.summary.insert("mu1".into(), upper);
    if let Some(m0) = lower {
        rep.summary.insert("mu0".into(), m0);
    } else {
        rep.notes.push("no positive eta0 supplied: the mu0 lower bound is not tested".into());
    }
    let x = vec![0.0; n];
    let frames: Vec<DMatrix<f64>> = (0..n_frames)
        .map(|_| frame_from_orthogonal(&random_orthogonal(n, rng)))
        .collect();
    let frame_vals: Vec<_> = frames
        .par_iter()
        .map(|f| subspace_fraclap(u, f, &x, s, &opts.quad))
        .collect::<Result<_>>()?;
    let weighted: Vec<(TestFunctionProfile, f64)> = if opts.n_weighted > 0 {
        sample_mk(2, n, opts.n_weighted, &SamplerOptions::default(), rng)?
            .iter()
            .map(|m| {
                // Eigenvalues ascending: the smallest η gives the largest λ,
                // which takes the excluded last slot.
                let eta = m.m().eigenvalues();
                let vecs = m.m().eigenvectors();
                let order: Vec<usize> = (1..n).chain(std::iter::once(0)).collect();
                let q = DMatrix::from_fn(n, n, |i, j| vecs[(i, order[j])]);
                let lambda: Vec<f64> = order.iter().map(|&j| eta[j].powf(-0.5)).collect();
                (rescaled_profile(u, &q, &lambda), lambda[n - 1])
            })
            .collect()
    } else {
        Vec::new()
    };
    let axes = DMatrix::from_fn(n, n - 1, |i, j| if i == j { 1.0 } else { 0.0 });
    let weighted_vals: Vec<_> = weighted
        .par_iter()
        .map(|(v, lam_n)| {
            let r = subspace_fraclap(v, &axes, &x, s, &opts.quad)?;
            Ok((r.value * lam_n, r.trunc_bound * lam_n))
        })
        .collect::<Result<_>>()?;
    let mut ok = true;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, r) in frame_vals.iter().enumerate() {
        let v = (1.0 - s) * r.value;
        lo = lo.min(v);
        hi = hi.max(v);
        ok &= v >= 0.0 && v <= upper + opts.bound_tol;
        if let Some(m0) = lower {
            ok &= v >= m0 - opts.bound_tol;
        }
        rep.samples.push(vec![0.0, i as f64, v, (1.0 - s) * r.trunc_bound]);
    }
    let mut wmin = f64::INFINITY;
    for (i, (v, tb)) in weighted_vals.iter().enumerate() {
        let v = (1.0 - s) * v;
        wmin = wmin.min(v);
        ok &= v >= 0.0;
        rep.samples.push(vec![1.0, i as f64, v, (1.0 - s) * tb]);
    }
    rep.notes
        .push("kind 0: orthonormal frame, (1-s)-scaled; kind 1: M-weighted, (1-s)-scaled".into());
    rep.summary.insert("frame_min".into(), lo);
    rep.summary.insert("frame_max".into(), hi);
    if !weighted_vals.is_empty() {
        rep.summary.insert("weighted_min".into(), wmin);
    }
    rep.verdict = verdict(ok);
    Ok(rep)
}

/// Envelope invariants over `n_samples` random generators `B ∈ Γ_k`:
/// finite-difference match of `Df_k`, positivity of `M(B)`, touching
/// `trace(M(B)B) = f_k(B)`, the one-sided envelope against `n_tests` fixed
/// `A ∈ Γ_k`, and `det M = n^{-n}` when `k = n`.
pub fn envelope_check<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    n_samples: usize,
    n_tests: usize,
    rng: &mut R,
) -> Result<ExperimentReport> {
    if n_samples == 0 || n_tests == 0 {
        return Err(Error::InvalidInput("sample counts must be positive".into()));
    }
    let sampler = SamplerOptions::default();
    let tests: Vec<SymMatrix> = (0..n_tests)
        .map(|_| {
            let sigma = sample_gamma_k(n, k, &sampler, rng)?;
            Ok(SymMatrix::from_eigen(&random_orthogonal(n, rng), &sigma))
        })
        .collect::<Result<_>>()?;
    let f_tests: Vec<f64> = tests.iter().map(|a| f_k(a, k)).collect::<Result<_>>()?;
    let mut columns = vec!["fd_rel_error", "lambda_min", "min_envelope_gap", "touching_error"];
    if k == n {
        columns.push("det_rel_error");
    }
    let mut rep = ExperimentReport::new(
        "envelope_check",
        json!({ "n": n, "k": k, "n_samples": n_samples, "n_tests": n_tests }),
        &columns,
    );
    let tols = [("fd_rel_error", 1e-6), ("envelope_gap", 1e-10), ("touching", 1e-10), ("det_rel", 1e-9)];
    for (name, v) in tols {
        rep.tolerances.insert(name.into(), v);
    }
    let target_det = (n as f64).powi(-(n as i32));
    let mut skipped = 0;
    for _ in 0..n_samples {
        let sigma = sample_gamma_k(n, k, &sampler, rng)?;
        let b = SymMatrix::from_eigen(&random_orthogonal(n, rng), &sigma);
        let m = dfk(&b, k)?;
        // Generators near the cone boundary need a smaller step.
        let fd = dfk_fd(&b, k, 1e-5).or_else(|_| dfk_fd(&b, k, 1e-7));
        let Ok(fd) = fd else {
            skipped += 1;
            continue;
        };
        let diff = (m.m().entries() - fd.entries()).norm();
        let fd_rel = diff / m.m().frobenius_norm();
        let gap = tests
            .iter()
            .zip(&f_tests)
            .map(|(a, fa)| m.m().trace_product(a) - fa)
            .fold(f64::INFINITY, f64::min);
        let touching = (m.m().trace_product(&b) - f_k(&b, k)?).abs();
        let mut row = vec![fd_rel, m.lambda_min(), gap, touching];
        if k == n {
            row.push((m.m().entries().determinant() / target_det - 1.0).abs());
        }
        rep.samples.push(row);
    }
    let max_of = |c: &str| rep.column(c).into_iter().fold(0.0, f64::max);
    let min_of = |c: &str| rep.column(c).into_iter().fold(f64::INFINITY, f64::min);
    let mut ok = max_of("fd_rel_error") <= 1e-6
        && min_of("lambda_min") > 0.0
        && min_of("min_envelope_gap") >= -1e-10
        && max_of("touching_error") <= 1e-10;
    let mut summary = vec![
        ("max_fd_rel_error", max_of("fd_rel_error")),
        ("min_lambda_min", min_of("lambda_min")),
        ("min_envelope_gap", min_of("min_envelope_gap")),
        ("max_touching_error", max_of("touching_error")),
        ("skipped", skipped as f64),
    ];
    if k == n {
        ok &= max_of("det_rel_error") <= 1e-9;
        summary.push(("max_det_rel_error", max_of("det_rel_error")));
    }
    if skipped > 0 {
        rep.notes.push(format!("{skipped} generators too close to the cone boundary for finite differences"));
    }
    for (name, v) in summary {
        rep.summary.insert(name.into(), v);
    }
    rep.verdict = verdict(ok && rep.samples.len() > 0);
    Ok(rep)
}

/// Samples diagonal `B ∈ Γ_2` with `σ_2(B) = 1` and `λ_min(M(B)) = ε`, and
/// checks `η_1 ≥ (1 + Q²/2)/(4ε)` and `η_{n−1} − η_1 ≥ (2n−4)ε − (n−1)Q`
/// where `Q = σ_2 + … + σ_{n−1}` for ascending `σ`.
pub fn eigenvalue_constraint_check<R: Rng + ?Sized>(
    n: usize,
    eps: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<ExperimentReport> {
    if n < 3 {
        return Err(Error::InvalidInput(format!("the eigenvalue constraints need n >= 3, got {n}")));
    }
    let max = degenerate_eps_max(n);
    if !(eps > 0.0 && eps < max) {
        return Err(Error::EpsOutOfRange { eps, max, n });
    }
    let tol = 1e-10;
    let mut columns: Vec<String> = (1..=n).map(|i| format!("sigma_{i}")).collect();
    columns.extend(["eta_1", "eta_n_minus_1", "eta_n", "Q", "slack_1", "slack_2"].map(String::from));
    let mut rep = ExperimentReport::new(
        "eigenvalue_constraints",
        json!({ "n": n, "eps": eps, "n_samples": n_samples }),
        &[],
    );
    rep.columns = columns;
    rep.tolerances.insert("violation".into(), tol);
    let max_attempts = 1000 * n_samples.max(1);
    let mut attempts = 0;
    while rep.samples.len() < n_samples {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InfeasibleSample { attempts: max_attempts });
        }
        let d: Vec<f64> = (0..n - 2).map(|_| rng.gen_range(-2.0..2.0) * eps).collect();
        let Some(mut sigma) = level_set_generator(eps, &d, n) else {
            continue;
        };
        sigma.sort_by(f64::total_cmp);
        let m = dfk(&SymMatrix::from_diagonal(&sigma), 2)?;
        // Descending η, matching ascending σ.
        let eta: Vec<f64> = (0..n).map(|i| m.m().entries()[(i, i)]).collect();
        let q: f64 = sigma[1..n - 1].iter().sum();
        let nf = n as f64;
        let slack1 = eta[0] - (1.0 + q * q / 2.0) / (4.0 * eps);
        let slack2 = (eta[n - 2] - eta[0]) - ((2.0 * nf - 4.0) * eps - (nf - 1.0) * q);
        let mut row = sigma.clone();
        row.extend([eta[0], eta[n - 2], eta[n - 1], q, slack1, slack2]);
        rep.samples.push(row);
    }
    let s1 = rep.column("slack_1");
    let s2 = rep.column("slack_2");
    let eta_n = rep.column("eta_n");
    let violations = s1.iter().chain(&s2).filter(|v| **v < -tol).count();
    let level_err = eta_n.iter().map(|v| (v - eps).abs()).fold(0.0, f64::max);
    rep.summary.insert("violations".into(), violations as f64);
    rep.summary.insert("min_slack_1".into(), s1.iter().cloned().fold(f64::INFINITY, f64::min));
    rep.summary.insert("min_slack_2".into(), s2.iter().cloned().fold(f64::INFINITY, f64::min));
    rep.summary.insert("max_level_error".into(), level_err);
    rep.summary.insert("attempts".into(), attempts as f64);
    rep.verdict = verdict(violations == 0 && level_err <= 1e-9);
    Ok(rep)
}

/// Measures `η0 = (1−s) F_{2,s}[u](x)`, derives `ε0` from the constants
/// chain, and checks that restricting to `λ_min(M) ≥ ε0` leaves the
/// infimum unchanged while the level sets `λ_min(M) = ε0/10, ε0/3` stay
/// strictly above it.
pub fn ellipticity_check(
    u: &TestFunctionProfile,
    x: &[f64],
    s: f64,
    opts: &InfOptions,
) -> Result<ExperimentReport> {
    let n = x.len();
    let rel_tol = 1e-3;
    let mut rep = ExperimentReport::new(
        "ellipticity",
        json!({ "profile": u.name(), "x": x, "s": s, "inf": opts }),
        &["eps", "level_set_min", "lambda_min_at_min"],
    );
    rep.tolerances.insert("restricted_rel".into(), rel_tol);
    if u.symmetry() == Symmetry::Affine {
        rep.notes.push("affine input: eta0 = 0, the hypothesis (1-s)F >= eta0 > 0 fails".into());
        return Ok(rep);
    }
    let full = f_ks(u, x, 2, s, opts)?;
    let eta0 = (1.0 - s) * full.value;
    rep.summary.insert("F".into(), full.value);
    rep.summary.insert("F_lambda_min".into(), full.argmin.lambda_min());
    rep.summary.insert("eta0".into(), eta0);
    if !(eta0 > 0.0) {
        rep.notes.push(format!("measured eta0 = {eta0} is not positive"));
        return Ok(rep);
    }
    let chain = ellipticity_threshold(n, s, u.lipschitz(), u.semiconcavity(), eta0)?;
    let eps0 = chain.eps0.closed_form;
    rep.summary.insert("eps0".into(), eps0);
    rep.summary.insert("mu0".into(), chain.mu0.closed_form);
    rep.summary.insert("mu1".into(), chain.mu1.closed_form);
    let mut ok = true;
    match f_ks_restricted(u, x, 2, s, eps0, opts) {
        Ok(r) => {
            let gap = (r.value - full.value).abs() / full.value.abs();
            rep.summary.insert("F_restricted".into(), r.value);
            rep.summary.insert("restricted_rel_gap".into(), gap);
            ok &= gap <= rel_tol;
        }
        Err(Error::InfeasibleConstraint { .. }) => {
            rep.notes.push(format!(
                "no M in M_2 has lambda_min >= eps0 = {eps0:.6e}: the restricted operator is empty"
            ));
            ok = false;
        }
        Err(e) => return Err(e),
    }
    let family_max = degenerate_eps_max(n);
    for eps in [eps0 / 10.0, eps0 / 3.0] {
        if eps >= family_max {
            rep.notes.push(format!(
                "level set lambda_min = {eps:.6e} is empty (admissible range ends at {family_max:.6e})"
            ));
            ok = false;
            continue;
        }
        let r = level_set_min(u, x, s, eps, opts)?;
        ok &= r.value > full.value;
        rep.samples.push(vec![eps, r.value, r.argmin.lambda_min()]);
    }
    rep.verdict = verdict(ok);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracop::{affine, gaussian_dimple, smoothed_cone};
    use crate::infimum::degenerate_family;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quick_quad() -> QuadratureSpec {
        QuadratureSpec {
            n_angular: 16,
            ..Default::default()
        }
    }

    #[test]
    fn slope_of_a_power_law() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.7 * x).collect();
        assert!((ls_slope(&xs, &ys) + 0.7).abs() < 1e-14);
    }

    #[test]
    fn blowup_rate_for_the_cone() {
        let eps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        let rep = blowup_experiment(&smoothed_cone(1.0), 3, 0.75, &eps, &BlowupOptions::default()).unwrap();
        assert!(rep.passed(), "{:?}", rep.summary);
        let slope = rep.summary["slope"];
        assert!((-0.80..=-0.70).contains(&slope));
        let again = blowup_experiment(&smoothed_cone(1.0), 3, 0.75, &eps, &BlowupOptions::default()).unwrap();
        assert_eq!(rep.samples, again.samples);
    }

    #[test]
    fn blowup_is_not_applicable_to_affine_input() {
        let rep = blowup_experiment(&affine(), 3, 0.75, &[0.1, 0.001], &BlowupOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::NotApplicable);
        assert!(rep.samples.iter().all(|r| r[1] == 0.0));
        assert!(blowup_experiment(&affine(), 3, 0.75, &[0.1, 0.01], &BlowupOptions::default()).is_err());
    }

    #[test]
    fn subspace_values_of_the_cone_are_frame_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let opts = SubspaceOptions {
            quad: quick_quad(),
            n_weighted: 3,
            ..Default::default()
        };
        let rep = subspace_bounds_check(&smoothed_cone(1.0), 3, 0.75, None, 6, &opts, &mut rng).unwrap();
        assert!(rep.passed(), "{:?}", rep.summary);
        let spread = rep.summary["frame_max"] - rep.summary["frame_min"];
        assert!(spread < 1e-9 * rep.summary["frame_max"]);
        assert!(rep.summary["weighted_min"] > 0.0);
    }

    #[test]
    fn subspace_bounds_for_dimple_and_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let opts = SubspaceOptions {
            quad: quick_quad(),
            n_weighted: 2,
            ..Default::default()
        };
        let dimple = gaussian_dimple(0.05).unwrap();
        let rep = subspace_bounds_check(&dimple, 3, 0.75, None, 4, &opts, &mut rng).unwrap();
        assert!(rep.passed());
        assert!(rep.summary["frame_min"] > 0.0);
        let rep = subspace_bounds_check(&affine(), 3, 0.75, Some(0.0), 4, &opts, &mut rng).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.summary["frame_max"], 0.0);
    }

    #[test]
    fn envelope_suite_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, k) in [(3, 2), (3, 3), (4, 2)] {
            let rep = envelope_check(n, k, 100, 50, &mut rng).unwrap();
            assert!(rep.passed(), "{:?}", rep.summary);
        }
        let rep = envelope_check(2, 2, 10, 10, &mut rng).unwrap();
        assert_eq!(rep.columns.len(), 5);
    }

    #[test]
    fn eigenvalue_constraints_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for eps in [0.01, 0.2] {
            let rep = eigenvalue_constraint_check(3, eps, 500, &mut rng).unwrap();
            assert!(rep.passed(), "eps={eps}: {:?}", rep.summary);
        }
        let rep = eigenvalue_constraint_check(5, 0.05, 200, &mut rng).unwrap();
        assert!(rep.passed(), "{:?}", rep.summary);
        assert!(eigenvalue_constraint_check(2, 0.01, 10, &mut rng).is_err());
    }

    #[test]
    fn family_point_meets_both_bounds() {
        for n in 3..=5 {
            let eps = 0.02;
            let fam = degenerate_family(eps, n).unwrap();
            let sigma = fam.b_eps.eigenvalues().to_vec();
            let q: f64 = sigma[1..n - 1].iter().sum();
            let nf = n as f64;
            assert!((q - 2.0 * eps * (nf - 2.0) / (nf - 1.0)).abs() < 1e-15);
            let m = fam.envelope().unwrap();
            let eta: Vec<f64> = m.m().eigenvalues().iter().rev().cloned().collect();
            assert!(eta[0] >= (1.0 + q * q / 2.0) / (4.0 * eps) - 1e-10);
            assert!(eta[n - 2] - eta[0] >= (2.0 * nf - 4.0) * eps - (nf - 1.0) * q - 1e-10);
        }
    }

    #[test]
    fn ellipticity_is_not_applicable_to_affine_input() {
        let rep = ellipticity_check(&affine(), &[0.0; 3], 0.75, &InfOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::NotApplicable);
    }

    #[test]
    fn report_round_trips_through_json_and_csv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = eigenvalue_constraint_check(3, 0.05, 5, &mut rng).unwrap();
        let back: ExperimentReport = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back.samples, rep.samples);
        assert_eq!(back.verdict, rep.verdict);
        let dir = tempfile::tempdir().unwrap();
        let files = rep.write(dir.path()).unwrap();
        let csv = fs::read_to_string(&files[1]).unwrap();
        assert_eq!(csv.lines().count(), 6);
    }
}
