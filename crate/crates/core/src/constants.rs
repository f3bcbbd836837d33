//! Explicit constants bounding the subspace operators and the ellipticity
//! threshold `ε0`.
//!
//! Every constant is produced twice: from Gamma-function closed forms and
//! from one-dimensional quadrature of the defining integrals. The radial
//! profile `min{2L t, SC t²}` is used for the Lipschitz/semiconcavity
//! interpolation (the `max` variant diverges for every `s`).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::infimum::{degenerate_eps_max, g_of};
use crate::quad::{integrate, integrate_from_zero, integrate_to_infinity};
use crate::sphere::sphere_area;

const QUAD_TOL: f64 = 1e-13;

fn check_s_half(s: f64, what: &'static str) -> Result<()> {
    if s > 0.5 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::SOutOfRange {
            s,
            range: "(1/2, 1)",
            what,
        })
    }
}

fn check_s_unit(s: f64, what: &'static str) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::SOutOfRange { s, range: "(0, 1)", what })
    }
}

fn check_n(n: usize) -> Result<()> {
    if n >= 2 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("dimension must be at least 2, got {n}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_lsc(l: f64, sc: f64) -> Result<()> {
    check_positive("L", l)?;
    check_positive("SC", sc)
}

/// `∫_0^∞ min{2L t, SC t²} t^{-1-2s} dt`, split at the crossover `t* = 2L/SC`.
fn bracket_closed(s: f64, l: f64, sc: f64) -> f64 {
    let t = 2.0 * l / sc;
    sc * t.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s) + 2.0 * l * t.powf(1.0 - 2.0 * s) / (2.0 * s - 1.0)
}

fn bracket_quad(s: f64, l: f64, sc: f64) -> f64 {
    let t = 2.0 * l / sc;
    let profile = move |r: f64| (2.0 * l * r).min(sc * r * r) * r.powf(-1.0 - 2.0 * s);
    integrate_from_zero(profile, t, QUAD_TOL) + integrate_to_infinity(profile, t, QUAD_TOL)
}

/// `∫_0^∞ r^{a} (1+r²)^{-p} dr` by quadrature on `[0,1]` and `[1,∞)`.
fn rational_moment_quad(a: f64, p: f64) -> f64 {
    let f = move |r: f64| r.powf(a) * (1.0 + r * r).powf(-p);
    let (head, _) = integrate(f, 0.0, 1.0, QUAD_TOL, 0.0);
    head + integrate_to_infinity(f, 1.0, QUAD_TOL)
}

/// `∫_ℝ min{2L|t|, SC t²}/|t|^{1+2s} dt`.
pub fn c1(s: f64, l: f64, sc: f64) -> Result<f64> {
    check_s_half(s, "C1")?;
    check_lsc(l, sc)?;
    Ok(2.0 * bracket_closed(s, l, sc))
}

pub fn c1_quadrature(s: f64, l: f64, sc: f64) -> Result<f64> {
    check_s_half(s, "C1")?;
    check_lsc(l, sc)?;
    Ok(2.0 * bracket_quad(s, l, sc))
}

/// `∫_{ℝ^{n-1}} (1+|z|²)^{-(n+2s)/2} dz = π^{(n-1)/2} Γ(s+1/2)/Γ((n+2s)/2)`.
pub fn c2(n: usize, s: f64) -> Result<f64> {
    check_n(n)?;
    check_s_unit(s, "C2")?;
    let nf = n as f64;
    Ok(PI.powf((nf - 1.0) / 2.0) * gamma(s + 0.5) / gamma((nf + 2.0 * s) / 2.0))
}

pub fn c2_quadrature(n: usize, s: f64) -> Result<f64> {
    check_n(n)?;
    check_s_unit(s, "C2")?;
    let nf = n as f64;
    Ok(sphere_area(n - 1) * rational_moment_quad(nf - 2.0, (nf + 2.0 * s) / 2.0))
}

/// `∫_ℝ (1+t²)^{-(n+2s)/2} dt = √π Γ((n+2s-1)/2)/Γ((n+2s)/2)`.
pub fn c3(n: usize, s: f64) -> Result<f64> {
    check_n(n)?;
    check_s_unit(s, "C3")?;
    let p = (n as f64 + 2.0 * s) / 2.0;
    Ok(PI.sqrt() * gamma(p - 0.5) / gamma(p))
}

pub fn c3_quadrature(n: usize, s: f64) -> Result<f64> {
    check_n(n)?;
    check_s_unit(s, "C3")?;
    Ok(2.0 * rational_moment_quad(0.0, (n as f64 + 2.0 * s) / 2.0))
}

/// `(1-s) ∫_{ℝ^{n-1}} min{2L|z|, SC|z|²}/|z|^{n+2s-1} dz`.
pub fn mu1(n: usize, s: f64, l: f64, sc: f64) -> Result<f64> {
    check_n(n)?;
    check_s_half(s, "mu1")?;
    check_lsc(l, sc)?;
    Ok((1.0 - s) * sphere_area(n - 1) * bracket_closed(s, l, sc))
}

pub fn mu1_quadrature(n: usize, s: f64, l: f64, sc: f64) -> Result<f64> {
    check_n(n)?;
    check_s_half(s, "mu1")?;
    check_lsc(l, sc)?;
    Ok((1.0 - s) * sphere_area(n - 1) * bracket_quad(s, l, sc))
}

/// `ε1 = (η0 / (2(1-s) C1 C2))^{1/s}`.
pub fn eps1(eta0: f64, s: f64, c1: f64, c2: f64) -> Result<f64> {
    check_positive("eta0", eta0)?;
    check_s_unit(s, "eps1")?;
    check_positive("C1", c1)?;
    check_positive("C2", c2)?;
    Ok((eta0 / (2.0 * (1.0 - s) * c1 * c2)).powf(1.0 / s))
}

fn mu0_from(n: usize, s: f64, eta0: f64, e1: f64, c3: f64) -> Result<(f64, f64)> {
    let max = degenerate_eps_max(n);
    if !(e1 > 0.0 && e1 < max) {
        return Err(Error::EpsOutOfRange { eps: e1, max, n });
    }
    let g = g_of(e1, n);
    Ok((eta0 / (2.0 * (1.0 - s) * c3) * g.powf(2.0 * s), g))
}

/// `μ0 = η0/(2(1-s)C3) · g(ε1)^{2s}`.
pub fn mu0(n: usize, s: f64, eta0: f64, l: f64, sc: f64) -> Result<f64> {
    check_s_half(s, "mu0")?;
    let e1 = eps1(eta0, s, c1(s, l, sc)?, c2(n, s)?)?;
    Ok(mu0_from(n, s, eta0, e1, c3(n, s)?)?.0)
}

/// A constant computed from closed forms and from quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub closed_form: f64,
    pub quadrature: f64,
}

impl Pair {
    pub fn rel_gap(&self) -> f64 {
        (self.closed_form - self.quadrature).abs() / self.closed_form.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub n: usize,
    pub s: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "SC")]
    pub sc: f64,
    pub eta0: f64,
    #[serde(rename = "C1")]
    pub c1: Pair,
    #[serde(rename = "C2")]
    pub c2: Pair,
    #[serde(rename = "C3")]
    pub c3: Pair,
    pub mu1: Pair,
    pub eps1: Pair,
    pub g_eps1: Pair,
    pub mu0: Pair,
    #[serde(rename = "C")]
    pub c: Pair,
    #[serde(rename = "C5")]
    pub c5: Pair,
    #[serde(rename = "C4")]
    pub c4: Pair,
    pub eps0: Pair,
    /// `√(2n/(n-1)) C4^{1/s} (μ0/μ1)^{1/s}`, the looser threshold under
    /// which the degeneracy argument still closes.
    pub eps0_slack_bound: f64,
    pub slack_ratio: f64,
}

struct Chain {
    eps1: f64,
    g: f64,
    mu0: f64,
    c: f64,
    c5: f64,
    c4: f64,
    eps0: f64,
}

fn chain(n: usize, s: f64, eta0: f64, c1: f64, c2: f64, c3: f64, mu1: f64) -> Result<Chain> {
    let e1 = eps1(eta0, s, c1, c2)?;
    let (mu0, g) = mu0_from(n, s, eta0, e1, c3)?;
    let c5 = 1.0 - mu0 / (2.0 * mu1);
    if !(c5 > 0.0 && c5 < 1.0) {
        return Err(Error::InvalidInput(format!(
            "C5 = 1 - mu0/(2 mu1) = {c5} leaves (0,1) (mu0 = {mu0}, mu1 = {mu1})"
        )));
    }
    let nf = n as f64;
    let c = (c5.powf(-2.0 / (nf + 2.0 * s)) - 1.0).sqrt();
    let c4 = c / 2.0;
    let eps0 = (nf / (nf - 1.0)).sqrt() * c4.powf(1.0 / s) * (mu0 / mu1).powf(1.0 / s);
    Ok(Chain {
        eps1: e1,
        g,
        mu0,
        c,
        c5,
        c4,
        eps0,
    })
}

/// The full chain `C1, …, ε0` for inputs `(n, s, L, SC, η0)`.
pub fn ellipticity_threshold(n: usize, s: f64, l: f64, sc: f64, eta0: f64) -> Result<ConstantsReport> {
    let pair = |a: f64, b: f64| Pair {
        closed_form: a,
        quadrature: b,
    };
    let c1p = pair(c1(s, l, sc)?, c1_quadrature(s, l, sc)?);
    let c2p = pair(c2(n, s)?, c2_quadrature(n, s)?);
    let c3p = pair(c3(n, s)?, c3_quadrature(n, s)?);
    let mu1p = pair(mu1(n, s, l, sc)?, mu1_quadrature(n, s, l, sc)?);
    let a = chain(n, s, eta0, c1p.closed_form, c2p.closed_form, c3p.closed_form, mu1p.closed_form)?;
    let b = chain(n, s, eta0, c1p.quadrature, c2p.quadrature, c3p.quadrature, mu1p.quadrature)?;
    let nf = n as f64;
    let slack = (2.0 * nf / (nf - 1.0)).sqrt() * a.c4.powf(1.0 / s) * (a.mu0 / mu1p.closed_form).powf(1.0 / s);
    Ok(ConstantsReport {
        n,
        s,
        l,
        sc,
        eta0,
        c1: c1p,
        c2: c2p,
        c3: c3p,
        mu1: mu1p,
        eps1: pair(a.eps1, b.eps1),
        g_eps1: pair(a.g, b.g),
        mu0: pair(a.mu0, b.mu0),
        c: pair(a.c, b.c),
        c5: pair(a.c5, b.c5),
        c4: pair(a.c4, b.c4),
        eps0: pair(a.eps0, b.eps0),
        eps0_slack_bound: slack,
        slack_ratio: a.eps0 / slack,
    })
}

impl ConstantsReport {
    /// Recomputes the report from its stored inputs.
    pub fn recompute(&self) -> Result<Self> {
        ellipticity_threshold(self.n, self.s, self.l, self.sc, self.eta0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn c1_golden() {
        assert_relative_eq!(c1(0.75, 1.0, 1.0).unwrap(), 8.0 * 2f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(c1_quadrature(0.75, 1.0, 1.0).unwrap(), 8.0 * 2f64.sqrt(), max_relative = 1e-8);
        assert!(c1(0.75, 2.0, 1.0).unwrap() > c1(0.75, 1.0, 1.0).unwrap());
        assert!(matches!(c1(0.5, 1.0, 1.0), Err(Error::SOutOfRange { .. })));
        assert!(matches!(c1(0.3, 1.0, 1.0), Err(Error::SOutOfRange { .. })));
    }

    #[test]
    fn c2_c3_golden() {
        assert_relative_eq!(c2(3, 0.75).unwrap(), PI / 1.25, max_relative = 1e-13);
        assert_relative_eq!(c3(3, 0.5).unwrap(), PI / 2.0, max_relative = 1e-13);
        // √π Γ(1.25)/Γ(1.75)
        assert_relative_eq!(c3(2, 0.75).unwrap(), 1.74803836952808, max_relative = 1e-12);
        // n = 2: √π Γ(s+1/2)/Γ(1+s).
        let s: f64 = 0.6;
        assert_relative_eq!(
            c2(2, s).unwrap(),
            PI.sqrt() * gamma(s + 0.5) / gamma(1.0 + s),
            max_relative = 1e-14
        );
        // Raising n multiplies C2 by C3(n+1, s), which drops below 1 only
        // once n + 2s exceeds about 2π; C3 itself decreases throughout.
        for n in 2..12 {
            assert_relative_eq!(
                c2(n + 1, 0.7).unwrap(),
                c2(n, 0.7).unwrap() * c3(n + 1, 0.7).unwrap(),
                max_relative = 1e-12
            );
            assert!(c3(n + 1, 0.7).unwrap() < c3(n, 0.7).unwrap());
        }
        assert!(c2(3, 0.7).unwrap() > c2(2, 0.7).unwrap());
        assert!(c2(8, 0.7).unwrap() < c2(7, 0.7).unwrap());
    }

    #[test]
    fn mu1_golden() {
        assert_relative_eq!(mu1(3, 0.75, 1.0, 1.0).unwrap(), 2.0 * 2f64.sqrt() * PI, max_relative = 1e-13);
        for s in [0.6, 0.9] {
            assert_relative_eq!(
                mu1(2, s, 1.3, 0.7).unwrap(),
                (1.0 - s) * c1(s, 1.3, 0.7).unwrap(),
                max_relative = 1e-14
            );
        }
        assert_relative_eq!(
            mu1(4, 0.8, 3.0, 6.0).unwrap(),
            3.0 * mu1(4, 0.8, 1.0, 2.0).unwrap(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn eps1_mu0_golden() {
        let e = eps1(0.1, 0.75, 8.0 * 2f64.sqrt(), PI / 1.25).unwrap();
        assert_relative_eq!(e, 0.0013476595758286415, max_relative = 1e-12);
        let c1v: f64 = 3.0;
        let c2v: f64 = 0.5;
        assert_relative_eq!(eps1(2.0 * 0.25 * c1v * c2v, 0.75, c1v, c2v).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(mu0(3, 0.75, 0.1, 1.0, 1.0).unwrap(), 0.0027673918031265936, max_relative = 1e-10);
        assert_relative_eq!(mu0(2, 0.6, 0.05, 1.0, 1.0).unwrap(), 0.0001157803436386001, max_relative = 1e-10);
        assert_relative_eq!(mu0(3, 0.9, 0.1, 1.0, 2.0).unwrap(), 0.01130727111725232, max_relative = 1e-10);
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for n in 2..=5 {
            for s in [0.55, 0.6, 0.75, 0.9, 0.99] {
                let pairs = [
                    ("C1", c1(s, 1.0, 1.5).unwrap(), c1_quadrature(s, 1.0, 1.5).unwrap()),
                    ("C2", c2(n, s).unwrap(), c2_quadrature(n, s).unwrap()),
                    ("C3", c3(n, s).unwrap(), c3_quadrature(n, s).unwrap()),
                    ("mu1", mu1(n, s, 0.5, 2.0).unwrap(), mu1_quadrature(n, s, 0.5, 2.0).unwrap()),
                ];
                for (name, a, b) in pairs {
                    assert!((a - b).abs() < 1e-8 * a, "{name} n={n} s={s}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn chain_identities() {
        for n in 2..=4 {
            for s in [0.6, 0.75, 0.9] {
                let r = ellipticity_threshold(n, s, 1.0, 1.0, 0.1).unwrap();
                let (mu0, mu1, c5) = (r.mu0.closed_form, r.mu1.closed_form, r.c5.closed_form);
                assert!(mu0 > 0.0 && c5 > 0.0 && c5 < 1.0);
                assert!((mu0 + mu1 * (c5 - 1.0) - mu0 / 2.0).abs() <= 1e-15 * mu1);
                assert!(r.eps0.closed_form > 0.0);
                assert_relative_eq!(r.slack_ratio, std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-12);
                assert_eq!(r.recompute().unwrap(), r);
            }
        }
    }

    #[test]
    fn threshold_does_not_collapse_as_s_tends_to_one() {
        let floor = 2.7e-5;
        for s in [0.9, 0.99, 0.999] {
            let r = ellipticity_threshold(3, s, 1.0, 1.0, 0.1).unwrap();
            assert!(r.eps0.closed_form > floor, "s={s}: {}", r.eps0.closed_form);
            assert!(r.eps0.rel_gap() < 1e-6);
        }
        let scaled: Vec<f64> = [0.9, 0.95, 0.99, 0.999]
            .iter()
            .map(|&s| (1.0 - s) * c1(s, 1.0, 1.0).unwrap())
            .collect();
        assert!(scaled.iter().all(|v| v.is_finite() && *v < 2.0));
    }

    #[test]
    fn rejects_broken_chain() {
        // μ0 outgrows 2μ1 when η0 is held fixed and s is close to 1 in 2D.
        assert!(matches!(
            ellipticity_threshold(2, 0.999, 1.0, 1.0, 0.1),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(mu0(3, 0.75, 1e6, 1.0, 1.0), Err(Error::EpsOutOfRange { .. })));
    }
}
