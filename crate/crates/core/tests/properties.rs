use nalgebra::DMatrix;
use proptest::prelude::*;

use hybrid_observer::design::images_trivially_intersect;
use hybrid_observer::matrix::{kernel_basis, mat_exp, mixed_norm_dense, rank, spectral_norm};
use hybrid_observer::plant::{decompose_all, observability_matrix};
use hybrid_observer::reference::random_modal_plant;
use hybrid_observer::Mat;

fn square(n: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-1.5..1.5f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn sized_square() -> impl Strategy<Value = Mat> {
    (1usize..6).prop_flat_map(square)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponential_is_a_semigroup(m in sized_square(), s in 0.0..2.0f64, t in 0.0..2.0f64) {
        let lhs = mat_exp(&m, s + t).unwrap();
        let rhs = mat_exp(&m, s).unwrap() * mat_exp(&m, t).unwrap();
        prop_assert!((&lhs - &rhs).norm() <= 1e-9 * lhs.norm().max(1.0));
    }

    #[test]
    fn exponential_derivative_matches(m in sized_square(), t in 0.0..1.5f64) {
        let h = 1e-5;
        let fd = (mat_exp(&m, t + h).unwrap() - mat_exp(&m, t - h).unwrap()) / (2.0 * h);
        let exact = &m * mat_exp(&m, t).unwrap();
        prop_assert!((&fd - &exact).norm() <= 1e-6 * exact.norm().max(1.0));
    }

    #[test]
    fn mixed_norm_is_submultiplicative(
        blocks in 1usize..4, n in 1usize..4,
        seed in prop::collection::vec(-1.0..1.0f64, 144),
        seed2 in prop::collection::vec(-1.0..1.0f64, 144),
    ) {
        let d = blocks * n;
        let a = Mat::from_fn(d, d, |i, j| seed[(i * 12 + j) % seed.len()]);
        let b = Mat::from_fn(d, d, |i, j| seed2[(j * 12 + i) % seed2.len()]);
        let ab = mixed_norm_dense(&(&a * &b), n, n);
        prop_assert!(ab <= mixed_norm_dense(&a, n, n) * mixed_norm_dense(&b, n, n) * (1.0 + 1e-12) + 1e-14);
        prop_assert!(spectral_norm(&(&a * &b)) <= spectral_norm(&a) * spectral_norm(&b) * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn kernel_basis_is_orthonormal_and_complete(rows in 1usize..5, cols in 1usize..6, v in prop::collection::vec(-1.0..1.0f64, 30)) {
        // Repeat rows to force a nontrivial kernel every so often.
        let m = Mat::from_fn(rows, cols, |i, j| v[((i % 2) * cols + j) % v.len()]);
        let k = kernel_basis(&m);
        prop_assert_eq!(k.ncols() + rank(&m), cols);
        prop_assert!((&m * &k).norm() <= 1e-10);
        prop_assert!((k.transpose() * &k - Mat::identity(k.ncols(), k.ncols())).norm() <= 1e-10);
    }

    #[test]
    fn decompositions_satisfy_their_identities(seed in any::<u64>(), m in 1usize..5, n in 1usize..7) {
        let plant = random_modal_plant(seed, m, n);
        let decs = decompose_all(&plant, &vec![None; m]).unwrap();
        let id = Mat::identity(n, n);
        for (i, d) in decs.iter().enumerate() {
            let ni = d.observable_dim();
            prop_assert_eq!(ni, rank(&observability_matrix(plant.channel(i), plant.a()).unwrap()));
            prop_assert!((&d.l * plant.a() - &d.abar * &d.l).norm() <= 1e-9);
            prop_assert!((plant.channel(i) - &d.cbar * &d.l).norm() <= 1e-9);
            prop_assert!((&d.l * &d.q - Mat::identity(ni, ni)).norm() <= 1e-9);
            prop_assert!((&d.p * &d.p - &d.p).norm() <= 1e-9);
            prop_assert!((&d.p - d.p.transpose()).norm() <= 1e-12);
            prop_assert!((&d.q * &d.l + &d.p - &id).norm() <= 1e-9);
        }
        let ps: Vec<Mat> = decs.iter().map(|d| d.p.clone()).collect();
        prop_assert!(images_trivially_intersect(&ps));
    }
}
