use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tnet_core::decomp::{hosvd, mps_reconstruct, relative_error, tt_svd, tucker_reconstruct, TuckerFactors};
use tnet_core::grad::project_gradients;
use tnet_core::tensor::{fold, frobenius_norm, mode_n_product, mode_n_product_transposed, truncated_svd, unfold};
use tnet_core::{DenseTensor, Matrix};

fn tensor_strategy(max_order: usize, max_dim: usize) -> impl Strategy<Value = DenseTensor> {
    prop::collection::vec(1..=max_dim, 1..=max_order).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(-10.0f64..10.0, n).prop_map(move |data| DenseTensor::new(shape.clone(), data).unwrap())
    })
}

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)).unwrap()
}

fn close(a: &DenseTensor, b: &DenseTensor, tol: f64) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_unfold(t in tensor_strategy(5, 4), pick in 0usize..5) {
        let n = pick % t.order();
        let m = unfold(&t, n).unwrap();
        prop_assert_eq!(m.rows(), t.shape()[n]);
        prop_assert_eq!(fold(&m, n, t.shape()).unwrap(), t);
    }

    #[test]
    fn mode_product_matches_unfolded_matmul(t in tensor_strategy(4, 4), pick in 0usize..4, rows in 1usize..5, seed: u64) {
        let n = pick % t.order();
        let m = matrix(rows, t.shape()[n], seed);
        let y = mode_n_product(&t, &m, n).unwrap();
        let want = m.matmul(&unfold(&t, n).unwrap()).unwrap();
        let got = unfold(&y, n).unwrap();
        prop_assert!(got.sub(&want).unwrap().frobenius_norm() <= 1e-12 * (1.0 + want.frobenius_norm()));
    }

    #[test]
    fn products_on_distinct_modes_commute(t in tensor_strategy(4, 4), seed: u64) {
        prop_assume!(t.order() >= 2);
        let a = matrix(3, t.shape()[0], seed);
        let b = matrix(2, t.shape()[1], seed ^ 1);
        let ab = mode_n_product(&mode_n_product(&t, &a, 0).unwrap(), &b, 1).unwrap();
        let ba = mode_n_product(&mode_n_product(&t, &b, 1).unwrap(), &a, 0).unwrap();
        prop_assert!(close(&ab, &ba, 1e-12));
    }

    #[test]
    fn repeated_mode_products_compose(t in tensor_strategy(4, 4), pick in 0usize..4, seed: u64) {
        let n = pick % t.order();
        let a = matrix(3, t.shape()[n], seed);
        let b = matrix(2, 3, seed ^ 7);
        let twice = mode_n_product(&mode_n_product(&t, &a, n).unwrap(), &b, n).unwrap();
        let once = mode_n_product(&t, &b.matmul(&a).unwrap(), n).unwrap();
        prop_assert!(close(&twice, &once, 1e-12));
    }

    #[test]
    fn orthonormal_products_preserve_norm(t in tensor_strategy(4, 5), pick in 0usize..4) {
        let n = pick % t.order();
        let q = truncated_svd(&matrix(t.shape()[n] + 2, t.shape()[n], 11), t.shape()[n]).unwrap().u;
        let y = mode_n_product(&t, &q, n).unwrap();
        let (a, b) = (frobenius_norm(&t), frobenius_norm(&y));
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
        let back = mode_n_product_transposed(&y, &q, n).unwrap();
        prop_assert!(close(&back, &t, 1e-10));
    }

    #[test]
    fn full_rank_hosvd_is_exact(t in tensor_strategy(4, 4)) {
        prop_assume!(frobenius_norm(&t) > 1e-6);
        let f = hosvd(&t, t.shape()).unwrap();
        prop_assert!(relative_error(&t, &tucker_reconstruct(&f)).unwrap() <= 1e-10);
    }

    #[test]
    fn full_rank_tt_svd_is_exact(t in tensor_strategy(4, 4)) {
        prop_assume!(t.order() >= 2 && frobenius_norm(&t) > 1e-6);
        let huge = vec![usize::MAX; t.order() - 1];
        let out = tt_svd(&t, &huge).unwrap();
        prop_assert!(relative_error(&t, &mps_reconstruct(&out.cores)).unwrap() <= 1e-10);
    }

    #[test]
    fn gradient_projection_is_linear(seed: u64, alpha in -3.0f64..3.0) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [3, 2, 4];
        let f = TuckerFactors::random(&shape, &[2, 2, 3], &mut rng).unwrap();
        let a = DenseTensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0)).unwrap();
        let b = DenseTensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0)).unwrap();
        let mut mix = a.clone();
        mix.scale(alpha);
        mix.axpy(1.0, &b).unwrap();
        let ga = project_gradients(&f, &a).unwrap();
        let gb = project_gradients(&f, &b).unwrap();
        let gm = project_gradients(&f, &mix).unwrap();
        let mut want = ga.d_core.clone();
        want.scale(alpha);
        want.axpy(1.0, &gb.d_core).unwrap();
        prop_assert!(close(&gm.d_core, &want, 1e-12));
        for k in 0..3 {
            let want = ga.d_factors[k].data().iter().zip(gb.d_factors[k].data()).map(|(x, y)| alpha * x + y);
            for (g, w) in gm.d_factors[k].data().iter().zip(want) {
                prop_assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()));
            }
        }
    }
}
