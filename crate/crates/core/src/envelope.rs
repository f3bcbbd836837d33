//! The envelope map `B ↦ M(B) = Df_k(B)` and the set `M_k` it generates.
//!
//! `f_k` is concave and 1-homogeneous on `Γ_k`, so
//! `f_k(A) = inf_B trace(M(B)·A)` with equality at `B ∝ A`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symcone::{
    elementary_symmetric_all, elementary_symmetric_without, f_k, f_k_eigs, SymMatrix,
};

/// A matrix `M = Df_k(B)` together with its generator.
#[derive(Clone, Debug)]
pub struct EnvelopeMatrix {
    m: SymMatrix,
    source_b: SymMatrix,
    k: usize,
    sqrt_inv_eigs: Vec<f64>,
}

/// JSON form of an [`EnvelopeMatrix`], matrices row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeRecord {
    pub n: usize,
    pub k: usize,
    #[serde(rename = "M")]
    pub m: Vec<f64>,
    pub source_b: Vec<f64>,
}

impl EnvelopeMatrix {
    pub fn m(&self) -> &SymMatrix {
        &self.m
    }

    /// The generator, scaled so that `f_k(source_b) = 1`.
    pub fn source_b(&self) -> &SymMatrix {
        &self.source_b
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    /// Eigenvalues of `M^{-1/2}`, ascending.
    pub fn sqrt_inv_eigs(&self) -> &[f64] {
        &self.sqrt_inv_eigs
    }

    pub fn lambda_min(&self) -> f64 {
        self.m.eigenvalues()[0]
    }

    /// `√M` as a dense matrix.
    pub fn sqrt_m(&self) -> DMatrix<f64> {
        self.m.map_eigenvalues(f64::sqrt)
    }

    /// Condition number of `√M`.
    pub fn sqrt_cond(&self) -> f64 {
        let e = self.m.eigenvalues();
        (e[e.len() - 1] / e[0]).sqrt()
    }

    pub fn trace_with(&self, a: &SymMatrix) -> f64 {
        self.m.trace_product(a)
    }

    pub fn to_record(&self) -> EnvelopeRecord {
        EnvelopeRecord {
            n: self.dim(),
            k: self.k,
            m: self.m.to_row_major(),
            source_b: self.source_b.to_row_major(),
        }
    }
}

fn first_violation(eigs: &[f64], k: usize) -> Error {
    let e = elementary_symmetric_all(eigs);
    let l = (1..=k).find(|&l| e[l] <= 0.0).unwrap_or(k);
    Error::ConeViolation { k, l, value: e[l] }
}

/// `η_i = (1/k)·σ_{k-1}(λ without i)` for `λ` normalized to `σ_k(λ) = 1`.
fn diagonal_derivative(lambda: &[f64], k: usize) -> Vec<f64> {
    (0..lambda.len())
        .map(|i| elementary_symmetric_without(k - 1, lambda, i) / k as f64)
        .collect()
}

/// `M(B) = Df_k(B)` through the eigenframe of `B`.
pub fn dfk(b: &SymMatrix, k: usize) -> Result<EnvelopeMatrix> {
    let n = b.dim();
    if k == 0 || k > n {
        return Err(Error::IndexOutOfRange { index: k, n });
    }
    if !crate::symcone::in_gamma_k(b.eigenvalues(), k) {
        return Err(first_violation(b.eigenvalues(), k));
    }
    let f = f_k(b, k)?;
    let lambda: Vec<f64> = b.eigenvalues().iter().map(|v| v / f).collect();
    let eta = diagonal_derivative(&lambda, k);
    let q = b.eigenvectors();
    Ok(assemble(q, &lambda, eta, k))
}

/// `M(B)` for `B = Q·diag(σ)·Qᵀ` given the frame directly, skipping the
/// eigensolver. `sigma` must lie in `Γ_k`.
pub fn dfk_from_generator(q: &DMatrix<f64>, sigma: &[f64], k: usize) -> Result<EnvelopeMatrix> {
    let n = sigma.len();
    if k == 0 || k > n {
        return Err(Error::IndexOutOfRange { index: k, n });
    }
    if !crate::symcone::in_gamma_k(sigma, k) {
        return Err(first_violation(sigma, k));
    }
    let f = f_k_eigs(sigma, k)?;
    let lambda: Vec<f64> = sigma.iter().map(|v| v / f).collect();
    let eta = diagonal_derivative(&lambda, k);
    Ok(assemble(q, &lambda, eta, k))
}

fn assemble(q: &DMatrix<f64>, lambda: &[f64], eta: Vec<f64>, k: usize) -> EnvelopeMatrix {
    let m = SymMatrix::from_eigen(q, &eta);
    let source_b = SymMatrix::from_eigen(q, lambda);
    let mut sqrt_inv_eigs: Vec<f64> = eta.iter().map(|e| e.sqrt().recip()).collect();
    sqrt_inv_eigs.sort_by(f64::total_cmp);
    EnvelopeMatrix {
        m,
        source_b,
        k,
        sqrt_inv_eigs,
    }
}

/// Central-difference derivative of `f_k` at `B` along the symmetric basis
/// directions `E_ii` and `(E_ij + E_ji)/2`.
pub fn dfk_fd(b: &SymMatrix, k: usize, h: f64) -> Result<SymMatrix> {
    let n = b.dim();
    let mut out = DMatrix::zeros(n, n);
    let eval = |d: &DMatrix<f64>| -> Result<f64> {
        let pert = SymMatrix::new(b.entries() + d)?;
        if !crate::symcone::in_gamma_k(pert.eigenvalues(), k) {
            return Err(first_violation(pert.eigenvalues(), k));
        }
        f_k(&pert, k)
    };
    for i in 0..n {
        for j in i..n {
            let mut d = DMatrix::zeros(n, n);
            if i == j {
                d[(i, i)] = h;
            } else {
                d[(i, j)] = 0.5 * h;
                d[(j, i)] = 0.5 * h;
            }
            let v = (eval(&d)? - eval(&(-d))?) / (2.0 * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    SymMatrix::new(out)
}

/// `trace(M(B)·A) − f_k(A)`; nonnegative by concavity, zero when `B ∝ A`.
pub fn envelope_gap(a: &SymMatrix, b: &SymMatrix, k: usize) -> Result<f64> {
    let m = dfk(b, k)?;
    Ok(m.trace_with(a) - f_k(a, k)?)
}

/// Entry-wise formula for `k = 2`: `M_ii = Σ_{j≠i} b_jj / (2f)`,
/// `M_ij = −b_ji / (2f)`.
pub fn dfk_componentwise_k2(b: &SymMatrix) -> Result<DMatrix<f64>> {
    let n = b.dim();
    if n < 2 {
        return Err(Error::IndexOutOfRange { index: 2, n });
    }
    let f = f_k(b, 2)?;
    let e = b.entries();
    let tr = e.trace();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = if i == j { tr - e[(i, i)] } else { -e[(j, i)] } / (2.0 * f);
        }
    }
    Ok(m)
}

/// Entry-wise formula for `k = n`: `M = (1/n)·det(B)^{1/n}·B^{-1}`
/// (the cofactor matrix over `n·det^{1 - 1/n}`).
pub fn dfk_componentwise_kn(b: &SymMatrix) -> Result<DMatrix<f64>> {
    let n = b.dim();
    let f = f_k(b, n)?;
    let inv = b
        .entries()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("singular generator".into()))?;
    Ok(inv * (f / n as f64))
}

/// Principal-minor formula valid for every `k`: `M = ∂σ_k/∂B / (k f^{k-1})`
/// with `∂σ_k/∂b_ii = Σ_{|J|=k-1, i∉J} det B_J` and
/// `∂σ_k/∂b_ij = −Σ_{|J|=k-2, i,j∉J} det B_{(j,J),(i,J)}`, `J` ranging over
/// all of `1..n`. Exponential in `n`; a cross-check only.
pub fn dfk_minor_expansion(b: &SymMatrix, k: usize) -> Result<DMatrix<f64>> {
    let n = b.dim();
    let f = f_k(b, k)?;
    let e = b.entries();
    let det_of = |rows: &[usize], cols: &[usize]| -> f64 {
        if rows.is_empty() {
            return 1.0;
        }
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| e[(rows[r], cols[c])]).determinant()
    };
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let excluded = |x: usize| x != i && x != j;
            let size = if i == j { k - 1 } else { k.saturating_sub(2) };
            if i != j && k < 2 {
                continue;
            }
            let pool: Vec<usize> = (0..n).filter(|&x| excluded(x)).collect();
            let mut acc = 0.0;
            for set in combinations(&pool, size) {
                if i == j {
                    acc += det_of(&set, &set);
                } else {
                    let mut rows = vec![j];
                    rows.extend(&set);
                    let mut cols = vec![i];
                    cols.extend(&set);
                    acc -= det_of(&rows, &cols);
                }
            }
            d[(i, j)] = acc;
        }
    }
    Ok(d / (k as f64 * f.powi(k as i32 - 1)))
}

fn combinations(pool: &[usize], size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![vec![]];
    }
    if pool.len() < size {
        return vec![];
    }
    let mut out = Vec::new();
    for (idx, &first) in pool.iter().enumerate() {
        for mut rest in combinations(&pool[idx + 1..], size - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..n {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// Box and attempt budget for rejection sampling of `Γ_k` vectors.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub lo: f64,
    pub hi: f64,
    pub max_attempts: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            lo: -1.0,
            hi: 3.0,
            max_attempts: 100_000,
        }
    }
}

/// Uniform draw from `Γ_k ∩ [lo, hi]^n`, normalized to `σ_k = 1`.
pub fn sample_gamma_k<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if k == 0 || k > n {
        return Err(Error::IndexOutOfRange { index: k, n });
    }
    for _ in 0..opts.max_attempts {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(opts.lo..opts.hi)).collect();
        if crate::symcone::in_gamma_k(&v, k) {
            let f = f_k_eigs(&v, k)?;
            return Ok(v.iter().map(|x| x / f).collect());
        }
    }
    Err(Error::SamplingExhausted {
        attempts: opts.max_attempts,
    })
}

/// `count` envelope matrices from random generators `Q·diag(σ)·Qᵀ`.
pub fn sample_mk<R: Rng + ?Sized>(
    k: usize,
    n: usize,
    count: usize,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<Vec<EnvelopeMatrix>> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be at least 1".into()));
    }
    (0..count)
        .map(|_| {
            let sigma = sample_gamma_k(n, k, opts, rng)?;
            let q = random_orthogonal(n, rng);
            dfk_from_generator(&q, &sigma, k)
        })
        .collect()
}
