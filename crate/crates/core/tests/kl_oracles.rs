//! Closed-form KL divergences against independent numerical oracles.

mod common;

use common::oracles::{beta_kl_quadrature, dense_gaussian_kl};
use dhmtl::relationships::{beta_kl, matrix_normal_kl};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn quadrature_oracle_reproduces_known_value() {
    // KL(Beta(2,2) || Beta(1,1)) = ln 6 - 5/3 analytically
    let exact = 6f64.ln() - 5.0 / 3.0;
    assert!((beta_kl_quadrature(2.0, 2.0, 1.0, 1.0) - exact).abs() < 1e-12);
    assert!((beta_kl(2.0, 2.0, 1.0, 1.0).unwrap() - exact).abs() < 1e-13);
    assert!((beta_kl(2.0, 2.0, 1.0, 1.0).unwrap() - 0.12508).abs() < 2e-5);
}

#[test]
fn beta_kl_matches_quadrature_on_random_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let v: Vec<f64> = (0..4).map(|_| rng.gen_range(0.2..10.0)).collect();
        let closed = beta_kl(v[0], v[1], v[2], v[3]).unwrap();
        let numeric = beta_kl_quadrature(v[0], v[1], v[2], v[3]);
        worst = worst.max((closed - numeric).abs());
        assert!((closed - numeric).abs() < 1e-6, "{v:?}: {closed} vs {numeric}");
    }
    println!("worst beta KL deviation {worst:e}");
}

#[test]
fn matrix_normal_kl_matches_dense_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in 1..=3 {
        for _ in 0..200 {
            let mean: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..4.0)).collect();
            let col: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..4.0)).collect();
            let closed = matrix_normal_kl(&mean, &row, &col).unwrap();
            let dense = dense_gaussian_kl(&mean, &row, &col);
            assert!((closed - dense).abs() < 1e-8, "n={n}: {closed} vs {dense}");
        }
    }
}

proptest! {
    #[test]
    fn kl_divergences_are_non_negative(
        a in 0.2f64..10.0, b in 0.2f64..10.0, c in 0.2f64..10.0, d in 0.2f64..10.0,
        mean in proptest::collection::vec(-3.0f64..3.0, 4),
        scales in proptest::collection::vec(0.05f64..4.0, 4),
    ) {
        prop_assert!(beta_kl(a, b, c, d).unwrap() >= -1e-12);
        prop_assert!(matrix_normal_kl(&mean, &scales[..2], &scales[2..]).unwrap() >= -1e-12);
    }

    #[test]
    fn kl_is_zero_at_the_prior(a in 0.2f64..10.0, b in 0.2f64..10.0) {
        prop_assert_eq!(beta_kl(a, b, a, b).unwrap(), 0.0);
        prop_assert!(matrix_normal_kl(&[0.0; 9], &[1.0; 3], &[1.0; 3]).unwrap().abs() < 1e-15);
    }
}
