//! Elementary symmetric polynomials, k-Hessian values and membership in the
//! cones `Γ_k = {λ : σ_l(λ) > 0, l = 1..k}`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All elementary symmetric polynomials `[σ_0, σ_1, ..., σ_n]` of `lambda`
/// (with `σ_0 = 1`), built by expanding `∏ (1 + λ_i t)` one factor at a time.
pub fn elementary_symmetric_all(lambda: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for (i, &li) in lambda.iter().enumerate() {
        for j in (1..=i + 1).rev() {
            e[j] += li * e[j - 1];
        }
    }
    e
}

/// `σ_l(λ)` for `1 <= l <= n`.
pub fn elementary_symmetric(l: usize, lambda: &[f64]) -> Result<f64> {
    let n = lambda.len();
    if l == 0 || l > n {
        return Err(Error::IndexOutOfRange { index: l, n });
    }
    // Only coefficients up to degree l are needed.
    let mut e = vec![0.0; l + 1];
    e[0] = 1.0;
    for (i, &li) in lambda.iter().enumerate() {
        for j in (1..=(i + 1).min(l)).rev() {
            e[j] += li * e[j - 1];
        }
    }
    Ok(e[l])
}

/// `σ_l` of `lambda` with the entry at `skip` removed.
pub fn elementary_symmetric_without(l: usize, lambda: &[f64], skip: usize) -> f64 {
    if l == 0 {
        return 1.0;
    }
    let mut e = vec![0.0; l + 1];
    e[0] = 1.0;
    let mut count = 0;
    for (i, &li) in lambda.iter().enumerate() {
        if i == skip {
            continue;
        }
        count += 1;
        for j in (1..=count.min(l)).rev() {
            e[j] += li * e[j - 1];
        }
    }
    e[l]
}

/// Strict membership `σ_l(λ) > 0` for all `l <= k`. No tolerance.
pub fn in_gamma_k(lambda: &[f64], k: usize) -> bool {
    if k == 0 || k > lambda.len() {
        return false;
    }
    let e = elementary_symmetric_all(lambda);
    e[1..=k].iter().all(|&v| v > 0.0)
}

/// An eigenvalue vector together with its cached elementary symmetric
/// polynomials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeVector {
    lambda: Vec<f64>,
    sigmas: Vec<f64>,
    k: usize,
    in_gamma_k: bool,
}

impl ConeVector {
    pub fn new(lambda: Vec<f64>, k: usize) -> Result<Self> {
        let n = lambda.len();
        if k == 0 || k > n {
            return Err(Error::IndexOutOfRange { index: k, n });
        }
        let all = elementary_symmetric_all(&lambda);
        let in_gamma_k = all[1..=k].iter().all(|&v| v > 0.0);
        Ok(Self {
            lambda,
            sigmas: all[1..].to_vec(),
            k,
            in_gamma_k,
        })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// `σ_l` for `1 <= l <= n`.
    pub fn sigma(&self, l: usize) -> f64 {
        self.sigmas[l - 1]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn in_gamma_k(&self) -> bool {
        self.in_gamma_k
    }
}

/// Symmetric matrix with a cached eigendecomposition.
///
/// Eigenvalues are sorted ascending; ties keep the solver's original order.
/// Cyclic Jacobi sweeps on `Vᵀ A V`. nalgebra's QR iteration can stop with
/// eigen-residuals near 1e-9 when eigenvalues cluster; starting from its
/// nearly diagonal output, a few sweeps bring the residual to rounding level.
fn jacobi_polish(a: &DMatrix<f64>, mut v: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut d = v.transpose() * a * &v;
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _ in 0..10 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += d[(p, q)] * d[(p, q)];
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = d[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (d[(q, q)] - d[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = (t * t + 1.0).sqrt().recip();
                let sn = t * c;
                for r in 0..n {
                    let (dp, dq) = (d[(r, p)], d[(r, q)]);
                    d[(r, p)] = c * dp - sn * dq;
                    d[(r, q)] = sn * dp + c * dq;
                }
                for r in 0..n {
                    let (dp, dq) = (d[(p, r)], d[(q, r)]);
                    d[(p, r)] = c * dp - sn * dq;
                    d[(q, r)] = sn * dp + c * dq;
                }
                for r in 0..n {
                    let (vp, vq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * vp - sn * vq;
                    v[(r, q)] = sn * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| d[(i, i)]).collect(), v)
}

#[derive(Clone, Debug)]
pub struct SymMatrix {
    entries: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

impl SymMatrix {
    /// Symmetrizes `(A + Aᵀ)/2` and decomposes.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let sym = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let (values, vectors) = jacobi_polish(&sym, eig.eigenvectors);
        let n = sym.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let eigenvalues = order.iter().map(|&i| values[i]).collect();
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (c, &i) in order.iter().enumerate() {
            eigenvectors.set_column(c, &vectors.column(i));
        }
        Ok(Self {
            entries: sym,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (c, &i) in order.iter().enumerate() {
            eigenvectors[(i, c)] = 1.0;
        }
        Self {
            entries: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)),
            eigenvalues: order.iter().map(|&i| d[i]).collect(),
            eigenvectors,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    /// `Q diag(eigs) Qᵀ` for orthogonal `q`; the decomposition is taken as
    /// given rather than recomputed.
    pub fn from_eigen(q: &DMatrix<f64>, eigs: &[f64]) -> Self {
        let n = eigs.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eigs[i].total_cmp(&eigs[j]));
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (c, &i) in order.iter().enumerate() {
            eigenvectors.set_column(c, &q.column(i));
        }
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eigs));
        let entries = q * d * q.transpose();
        let entries = (&entries + entries.transpose()) * 0.5;
        Self {
            entries,
            eigenvalues: order.iter().map(|&i| eigs[i]).collect(),
            eigenvectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, matching `eigenvalues()`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            entries: &self.entries * t,
            eigenvalues: self.eigenvalues.iter().map(|v| v * t).collect(),
            eigenvectors: self.eigenvectors.clone(),
        }
    }

    /// `Qᵀ A Q`.
    pub fn conjugate(&self, q: &DMatrix<f64>) -> Result<Self> {
        Self::new(q.transpose() * &self.entries * q)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        self.eigenvalues
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.entries.component_mul(&other.entries).sum()
    }

    /// Applies `g` to the eigenvalues: `Q g(Λ) Qᵀ`.
    pub fn map_eigenvalues(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d: Vec<f64> = self.eigenvalues.iter().map(|&v| g(v)).collect();
        let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
        &self.eigenvectors * dm * self.eigenvectors.transpose()
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.entries[(i, j)]);
            }
        }
        out
    }
}

/// Cone check on eigenvalues with the relative tolerance used by `f_k`:
/// fails when some `σ_l(eig) < -tol` for `l <= k`.
pub(crate) fn check_closure(eigs: &[f64], k: usize, scale: f64) -> Result<Vec<f64>> {
    let n = eigs.len();
    if k == 0 || k > n {
        return Err(Error::IndexOutOfRange { index: k, n });
    }
    let e = elementary_symmetric_all(eigs);
    for l in 1..=k {
        let tol = 1e-12 * scale.powi(l as i32);
        if e[l] < -tol {
            return Err(Error::ConeViolation { k, l, value: e[l] });
        }
    }
    Ok(e)
}

/// `f_k(A) = σ_k(eig A)^{1/k}` for eigenvalues in the closure of `Γ_k`.
pub fn f_k(a: &SymMatrix, k: usize) -> Result<f64> {
    let e = check_closure(a.eigenvalues(), k, a.norm().max(f64::MIN_POSITIVE))?;
    Ok(e[k].max(0.0).powf(1.0 / k as f64))
}

/// `f_k` evaluated directly on an eigenvalue vector.
pub fn f_k_eigs(lambda: &[f64], k: usize) -> Result<f64> {
    let scale = lambda.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let e = check_closure(lambda, k, scale.max(f64::MIN_POSITIVE))?;
    Ok(e[k].max(0.0).powf(1.0 / k as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn clustered_spectrum_decomposes_to_rounding() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.39025338, 0.49482635, -0.10779759, -0.62585220, //
                0.49482635, 1.71346091, 0.30713381, -1.09381245, //
                -0.10779759, 0.30713381, 2.51958452, 0.17219104, //
                -0.62585220, -1.09381245, 0.17219104, 2.20071783,
            ],
        );
        let m = SymMatrix::new(a).unwrap();
        let v = m.eigenvectors();
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(m.eigenvalues()));
        assert!((m.entries() * v - v * lam).amax() < 1e-13);
        assert!((v.transpose() * v - DMatrix::identity(4, 4)).amax() < 1e-14);
    }

    fn subset_sum(l: usize, lambda: &[f64]) -> f64 {
        let n = lambda.len();
        (0u32..(1 << n))
            .filter(|m| m.count_ones() as usize == l)
            .map(|m| {
                (0..n)
                    .filter(|i| m & (1 << i) != 0)
                    .map(|i| lambda[i])
                    .product::<f64>()
            })
            .sum()
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(elementary_symmetric(2, &[1.0, 1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(elementary_symmetric(1, &[-1.0, 3.0, 3.0]).unwrap(), 5.0);
        assert_eq!(elementary_symmetric(2, &[1.0, 2.0, 3.0]).unwrap(), 11.0);
        assert!(elementary_symmetric(0, &[1.0]).is_err());
        assert!(elementary_symmetric(3, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sigma_without_matches_subset_sum() {
        let l = [1.5, -0.5, 2.0, 0.25];
        for skip in 0..4 {
            let rest: Vec<f64> = l
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, v)| *v)
                .collect();
            for k in 1..=3 {
                assert_relative_eq!(
                    elementary_symmetric_without(k, &l, skip),
                    subset_sum(k, &rest),
                    max_relative = 1e-14
                );
            }
        }
    }

    #[test]
    fn gamma_k_examples() {
        assert!(in_gamma_k(&[1.0, 1.0, 1.0], 3));
        assert!(in_gamma_k(&[-1.0, 3.0, 3.0], 2));
        assert!(!in_gamma_k(&[-1.0, -1.0, 5.0], 2));
        // Boundary is excluded.
        assert!(!in_gamma_k(&[0.0, 1.0], 2));
    }

    #[test]
    fn cone_vector_caches() {
        let v = ConeVector::new(vec![-1.0, 3.0, 3.0], 2).unwrap();
        assert_eq!(v.sigma(1), 5.0);
        assert_eq!(v.sigma(2), 3.0);
        assert_eq!(v.sigma(3), -9.0);
        assert!(v.in_gamma_k());
    }

    #[test]
    fn f_k_examples() {
        assert_relative_eq!(f_k(&SymMatrix::identity(3), 2).unwrap(), 3f64.sqrt(), max_relative = 1e-15);
        let d = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(f_k(&d, 2).unwrap(), 11f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(f_k(&SymMatrix::identity(2), 2).unwrap(), 1.0, max_relative = 1e-15);
        let bad = SymMatrix::from_diagonal(&[-1.0, -1.0, 5.0]);
        assert!(matches!(f_k(&bad, 2), Err(Error::ConeViolation { .. })));
    }

    #[test]
    fn eigen_reconstruction() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -0.3, 0.5, 1.0, 0.2, -0.3, 0.2, 3.0]);
        let s = SymMatrix::new(a.clone()).unwrap();
        let rec = s.map_eigenvalues(|v| v);
        assert!((rec - &a).norm() / a.norm() < 1e-10);
        assert!(s.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sigma_recurrence_matches_enumeration_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=8);
            let lam: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let scale: f64 = lam.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            for l in 1..=n {
                let a = elementary_symmetric(l, &lam).unwrap();
                let b = subset_sum(l, &lam);
                assert!((a - b).abs() <= 1e-12 * scale.powi(l as i32), "{a} vs {b}");
            }
        }
    }
}
