use proptest::prelude::*;

use redense::data::{FeatureBundle, SplitSpec};
use redense::linalg::{pinv, sample_gaussian, Matrix, RngSeed};
use redense::nn::{one_hot, softmax, Loss};
use redense::redense::{lfp_lift, lfp_reconstruct, project_onto_ball, RedenseLayer, FEASIBILITY_SLACK};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        -1.0..1.0f64,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(f64::MAX),
        Just(-f64::MAX),
    ]
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lfp_identity_is_bit_exact(z in prop::collection::vec(finite(), 1..64)) {
        let n = z.len();
        let row = Matrix::from_vec(1, n, z.clone()).unwrap();
        let back = lfp_reconstruct(&lfp_lift(&row, &Matrix::identity(n)).unwrap(), n).unwrap();
        // -0.0 reconstructs as +0.0, which compares equal.
        prop_assert_eq!(back.as_slice(), row.as_slice());
    }

    #[test]
    fn lift_halves_recover_projection(seed in any::<u64>(), j in 1usize..6, n in 1usize..6, extra in 0usize..4) {
        let m = n + extra;
        let y = sample_gaussian(j, n, RngSeed(seed));
        let r = sample_gaussian(m, n, RngSeed(seed ^ 1));
        let lifted = lfp_lift(&y, &r).unwrap();
        prop_assert!(lifted.as_slice().iter().all(|&v| v >= 0.0));
        let back = lfp_reconstruct(&lifted, m).unwrap();
        prop_assert_eq!(back, y.matmul_transposed(&r).unwrap());
    }

    #[test]
    fn penrose_conditions(seed in any::<u64>(), rows in 1usize..24, cols in 1usize..24) {
        let a = sample_gaussian(rows, cols, RngSeed(seed));
        let p = pinv(&a).unwrap();
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
        // Square Gaussians can be badly conditioned; scale the check by the pinv size.
        let scale = 1.0 + p.frobenius_norm() * a.frobenius_norm();
        prop_assert!(apa.max_abs_diff(&a) < 1e-12 * scale * scale);
        prop_assert!(pap.max_abs_diff(&p) < 1e-12 * scale * scale * p.frobenius_norm().max(1.0));
    }

    #[test]
    fn tall_gaussian_left_inverse(seed in any::<u64>(), n in 1usize..32, extra in 0usize..32) {
        let r = sample_gaussian(n + extra + 1, n, RngSeed(seed));
        let p = pinv(&r).unwrap();
        prop_assert!(p.matmul(&r).unwrap().sub(&Matrix::identity(n)).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), a in 1usize..9, b in 1usize..9, c in 1usize..9, d in 1usize..9) {
        let x = sample_gaussian(a, b, RngSeed(seed));
        let y = sample_gaussian(b, c, RngSeed(seed.wrapping_add(1)));
        let z = sample_gaussian(c, d, RngSeed(seed.wrapping_add(2)));
        let left = x.matmul(&y).unwrap().matmul(&z).unwrap();
        let right = x.matmul(&y.matmul(&z).unwrap()).unwrap();
        prop_assert!(rel_err(&left, &right) < 1e-9);
    }

    #[test]
    fn frobenius_is_homogeneous(seed in any::<u64>(), c in -1e3..1e3f64) {
        let a = sample_gaussian(5, 4, RngSeed(seed));
        let lhs = a.scale(c).frobenius_norm();
        let rhs = c.abs() * a.frobenius_norm();
        prop_assert!((lhs - rhs).abs() <= 8.0 * f64::EPSILON * rhs.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn projection_is_feasible_and_idempotent(seed in any::<u64>(), radius in 1e-3..1e3f64, spread in 1e-3..1e3f64) {
        let mut z = sample_gaussian(3, 7, RngSeed(seed)).scale(spread);
        project_onto_ball(&mut z, radius);
        prop_assert!(z.frobenius_norm() <= radius * (1.0 + FEASIBILITY_SLACK));
        let once = z.clone();
        project_onto_ball(&mut z, radius);
        let rel = once.sub(&z).unwrap().frobenius_norm() / once.frobenius_norm().max(1e-300);
        prop_assert!(rel <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn start_weight_reproduces_base_loss(seed in any::<u64>(), n in 1usize..12, extra in 0usize..12, q in 2usize..5) {
        let o_hat = sample_gaussian(q, n, RngSeed(seed));
        let layer = RedenseLayer::build(&o_hat, n, n + extra, RngSeed(seed ^ 7)).unwrap();
        let y = sample_gaussian(16, n, RngSeed(seed ^ 9));
        let labels: Vec<usize> = (0..16).map(|j| j % q).collect();
        let t = one_hot(&labels, q);
        let old = Loss::SoftmaxCrossEntropy.value(&y.matmul_transposed(&o_hat).unwrap(), &t).unwrap();
        let new = Loss::SoftmaxCrossEntropy.value(&layer.predict(&y).unwrap(), &t).unwrap();
        prop_assert!((new - old).abs() / old.max(1e-12) < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), shift in -1e3..1e3f64) {
        let z = sample_gaussian(4, 5, RngSeed(seed)).scale(30.0).map(|v| v + shift);
        let p = softmax(&z);
        for r in 0..4 {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn splits_partition_indices(seed in any::<u64>(), samples in 20usize..300, tf in 0.05..0.8f64, vf in 0.05..0.15f64) {
        let spec = SplitSpec { train_fraction: tf, validation_fraction: vf, seed: RngSeed(seed) };
        let (a, b, c) = spec.indices(samples).unwrap();
        prop_assert!(!a.is_empty() && !b.is_empty() && !c.is_empty());
        let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..samples).collect::<Vec<_>>());
    }

    #[test]
    fn bundle_round_trip(seed in any::<u64>(), j in 1usize..10, n in 1usize..6, q in 1usize..4, key in "[a-z_]{1,8}", value in "\\PC{0,12}") {
        let labels: Vec<usize> = (0..j).map(|i| i % q).collect();
        let mut meta = std::collections::BTreeMap::new();
        meta.insert(key, value);
        let b = FeatureBundle::new(
            sample_gaussian(j, n, RngSeed(seed)),
            one_hot(&labels, q),
            sample_gaussian(q, n, RngSeed(seed ^ 3)),
            meta,
        ).unwrap();
        let back = FeatureBundle::from_bytes(&b.to_bytes()).unwrap();
        prop_assert_eq!(back, b);
    }
}

/// Penrose conditions at the largest size the linear algebra is rated for.
#[test]
fn penrose_conditions_256() {
    // Gaussian plus a scaled identity keeps the square case well conditioned.
    let a = sample_gaussian(256, 256, RngSeed(77))
        .add(&Matrix::identity(256).scale(40.0))
        .unwrap();
    let p = pinv(&a).unwrap();
    let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
    let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
    assert!(apa.max_abs_diff(&a) < 1e-9);
    assert!(pap.max_abs_diff(&p) < 1e-9);

    let tall = sample_gaussian(256, 128, RngSeed(78));
    let pt = pinv(&tall).unwrap();
    assert!(tall.matmul(&pt).unwrap().matmul(&tall).unwrap().max_abs_diff(&tall) < 1e-9);
    assert!(pt.matmul(&tall).unwrap().matmul(&pt).unwrap().max_abs_diff(&pt) < 1e-9);
}
