mod common;

use eigenfit::datagen::{fleishman_coeffs, mvn_sample, sample_moments, vale_maurelli_sample};
use eigenfit::linalg::sample_covariance;
use eigenfit::model::ModelSpec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn moderate_targets_reproduce_marginal_moments() {
    let f = fleishman_coeffs(1.0, 7.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x: Vec<f64> = (0..1_000_000)
        .map(|_| f.apply(rng.sample(StandardNormal)))
        .collect();
    let (skew, exkurt) = sample_moments(&x);
    assert!((skew - 1.0).abs() < 0.05, "skewness {skew}");
    assert!((exkurt - 7.0).abs() < 0.3, "excess kurtosis {exkurt}");
}

#[test]
fn severe_targets_reproduce_skewness() {
    let m = ModelSpec::fixture("one_factor_3").unwrap();
    let sigma = m.implied_cov(&m.start_values()).unwrap();
    let x = vale_maurelli_sample(&sigma, 2.0, 21.0, 1_000_000, 6).unwrap();
    for j in 0..3 {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let (skew, _) = sample_moments(&col);
        assert!((skew - 2.0).abs() < 0.1, "column {j}: skewness {skew}");
    }
}

#[test]
fn achieved_covariance_matches_target() {
    let m = ModelSpec::fixture("one_factor_5").unwrap();
    let sigma = m.implied_cov(&m.start_values()).unwrap();
    let n = 1_000_000;
    let x = vale_maurelli_sample(&sigma, 1.0, 7.0, n, 2).unwrap();
    let (mean, s) = sample_covariance(&x);
    let p = sigma.nrows();
    for i in 0..p {
        for j in 0..=i {
            // Standard error of a sample covariance from the fourth moments.
            let prod: Vec<f64> = (0..n)
                .map(|r| (x[(r, i)] - mean[i]) * (x[(r, j)] - mean[j]))
                .collect();
            let var = prod.iter().map(|v| (v - s[(i, j)]).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!(
                (s[(i, j)] - sigma[(i, j)]).abs() < 4.5 * se,
                "({i},{j}): {} vs {}",
                s[(i, j)],
                sigma[(i, j)]
            );
        }
    }
}

#[test]
fn zero_targets_agree_with_normal_sampler() {
    let m = ModelSpec::fixture("one_factor_3").unwrap();
    let sigma = m.implied_cov(&m.start_values()).unwrap();
    let n = 100_000;
    let a = vale_maurelli_sample(&sigma, 0.0, 0.0, n, 40).unwrap();
    let b = mvn_sample(&sigma, n, 41).unwrap();
    let p = sigma.nrows();
    // Two-sample z tests on means and covariances, Bonferroni at level 0.01.
    let tests = p + p * (p + 1) / 2;
    let z_crit = Normal::standard().inverse_cdf(1.0 - 0.01 / (2.0 * tests as f64));
    let (ma, sa) = sample_covariance(&a);
    let (mb, sb) = sample_covariance(&b);
    for i in 0..p {
        let z = (ma[i] - mb[i]) / (2.0 * sigma[(i, i)] / n as f64).sqrt();
        assert!(z.abs() < z_crit, "mean {i}: z = {z}");
        for j in 0..=i {
            let var = sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2);
            let z = (sa[(i, j)] - sb[(i, j)]) / (2.0 * var / n as f64).sqrt();
            assert!(z.abs() < z_crit, "covariance ({i},{j}): z = {z}");
        }
    }
}

#[test]
fn generators_are_deterministic() {
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
    assert_eq!(
        vale_maurelli_sample(&sigma, 2.0, 21.0, 100, 3).unwrap(),
        vale_maurelli_sample(&sigma, 2.0, 21.0, 100, 3).unwrap()
    );
    assert_ne!(
        vale_maurelli_sample(&sigma, 2.0, 21.0, 100, 3).unwrap(),
        vale_maurelli_sample(&sigma, 2.0, 21.0, 100, 4).unwrap()
    );
}
