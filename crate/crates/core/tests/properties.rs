//! Property-based invariants of the cone, the envelope map, the linear
//! operators and the constants.

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use frac_hessian::constants::mu1;
use frac_hessian::envelope::{dfk, random_orthogonal};
use frac_hessian::fracop::{linear_fracop, smoothed_cone, FarField, QuadratureSpec, TestFunctionProfile};
use frac_hessian::symcone::{elementary_symmetric, f_k, f_k_eigs, in_gamma_k, SymMatrix};

fn cone_vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..3.0, n)
}

fn frame(seed: u64, n: usize) -> DMatrix<f64> {
    random_orthogonal(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn f_k_is_one_homogeneous(lambda in cone_vector(4), k in 1usize..=4, t in 0.1f64..10.0) {
        prop_assume!(in_gamma_k(&lambda, k));
        let scaled: Vec<f64> = lambda.iter().map(|v| t * v).collect();
        let a = f_k_eigs(&lambda, k).unwrap();
        prop_assert!((f_k_eigs(&scaled, k).unwrap() - t * a).abs() <= 1e-10 * (1.0 + t * a));
    }

    #[test]
    fn f_k_is_concave_on_the_cone(a in cone_vector(4), b in cone_vector(4), k in 1usize..=4) {
        prop_assume!(in_gamma_k(&a, k) && in_gamma_k(&b, k));
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let lhs = f_k_eigs(&mid, k).unwrap();
        let rhs = 0.5 * (f_k_eigs(&a, k).unwrap() + f_k_eigs(&b, k).unwrap());
        prop_assert!(lhs >= rhs - 1e-12);
    }

    #[test]
    fn sigma_is_permutation_invariant(lambda in cone_vector(5), l in 1usize..=5, shift in 0usize..5) {
        let mut rotated = lambda.clone();
        rotated.rotate_left(shift);
        let a = elementary_symmetric(l, &lambda).unwrap();
        let b = elementary_symmetric(l, &rotated).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn f_k_is_rotation_invariant(lambda in cone_vector(3), k in 1usize..=3, seed in any::<u64>()) {
        prop_assume!(in_gamma_k(&lambda, k));
        let a = SymMatrix::from_diagonal(&lambda);
        let b = a.conjugate(&frame(seed, 3)).unwrap();
        prop_assert!((f_k(&a, k).unwrap() - f_k(&b, k).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn envelope_is_zero_homogeneous_and_equivariant(
        lambda in cone_vector(4), k in 2usize..=4, t in 0.1f64..10.0, seed in any::<u64>()
    ) {
        prop_assume!(in_gamma_k(&lambda, k));
        let q = frame(seed, 4);
        let b = SymMatrix::from_eigen(&q, &lambda);
        let m = dfk(&b, k).unwrap();
        let mt = dfk(&b.scaled(t), k).unwrap();
        prop_assert!((m.m().entries() - mt.m().entries()).amax() <= 1e-10);
        let q2 = frame(seed.wrapping_add(1), 4);
        let rotated = dfk(&b.conjugate(&q2).unwrap(), k).unwrap();
        let expected = q2.transpose() * m.m().entries() * &q2;
        prop_assert!((rotated.m().entries() - expected).amax() <= 1e-9);
    }

    #[test]
    fn envelope_is_one_sided_and_touches(
        a in cone_vector(3), b in cone_vector(3), k in 2usize..=3, seed in any::<u64>()
    ) {
        prop_assume!(in_gamma_k(&a, k) && in_gamma_k(&b, k));
        let am = SymMatrix::from_eigen(&frame(seed, 3), &a);
        let bm = SymMatrix::from_diagonal(&b);
        let m = dfk(&bm, k).unwrap();
        prop_assert!(m.lambda_min() > 0.0);
        let fa = f_k(&am, k).unwrap();
        prop_assert!(m.m().trace_product(&am) >= fa - 1e-10);
        let touch = dfk(&am, k).unwrap().m().trace_product(&am);
        prop_assert!((touch - fa).abs() <= 1e-10 * (1.0 + fa));
    }

    #[test]
    fn mu1_is_jointly_homogeneous(n in 2usize..=5, s in 0.55f64..0.95, l in 0.2f64..5.0, sc in 0.2f64..5.0, a in 0.1f64..10.0) {
        let base = mu1(n, s, l, sc).unwrap();
        let scaled = mu1(n, s, a * l, a * sc).unwrap();
        prop_assert!((scaled / (a * base) - 1.0).abs() <= 1e-12);
    }
}

fn quick() -> QuadratureSpec {
    QuadratureSpec {
        n_angular: 12,
        n_radial: 24,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn operator_scales_as_t_to_the_s(t in 0.2f64..5.0, s in 0.55f64..0.95, seed in any::<u64>()) {
        let cone = smoothed_cone(1.0);
        let b = SymMatrix::from_eigen(&frame(seed, 3), &[1.0, 2.0, 3.0]);
        let m = dfk(&b, 2).unwrap();
        let base = linear_fracop(&cone, &m, &[0.2, 0.0, -0.1], s, &quick()).unwrap().value;
        let scaled = frac_hessian::fracop::linear_fracop_matrix(&cone, &m.m().scaled(t), &[0.2, 0.0, -0.1], s, &quick())
            .unwrap()
            .value;
        assert_relative_eq!(scaled, t.powf(s) * base, max_relative = 1e-9);
    }

    #[test]
    fn operator_ignores_affine_parts(c in -2.0f64..2.0, slope in prop::array::uniform3(-1.0f64..1.0)) {
        let base = |x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            r2 / ((1.0 + r2).sqrt() + 1.0)
        };
        // Same symmetry tag on both sides, so both use identical rules.
        let cone = TestFunctionProfile::new("cone", base, 1.0, 1.0, true, FarField::Linear);
        let shifted = TestFunctionProfile::new(
            "cone_plus_affine",
            move |x: &[f64]| base(x) + c + x.iter().zip(&slope).map(|(a, b)| a * b).sum::<f64>(),
            1.0 + slope.iter().map(|v| v * v).sum::<f64>().sqrt(),
            1.0,
            true,
            FarField::Linear,
        );
        let m = dfk(&SymMatrix::identity(3), 2).unwrap();
        let x = [0.3, -0.2, 0.1];
        let a = linear_fracop(&cone, &m, &x, 0.75, &quick()).unwrap().value;
        let b = linear_fracop(&shifted, &m, &x, 0.75, &quick()).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}
