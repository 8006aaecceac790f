mod common;

use common::random_pd;
use eigenfit::analysis::analyze;
use eigenfit::asymcov::{decompose, gamma_adf, gamma_normal, lambda_hat, traces, u_matrix, v_ml};
use eigenfit::datagen::{mvn_sample, vale_maurelli_sample};
use eigenfit::fit::ml_discrepancy;
use eigenfit::linalg::{devech, vech};
use eigenfit::model::{ModelSpec, MomentVector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn adf_gamma_of_normal_data_matches_closed_form() {
    let sigma = DMatrix::<f64>::identity(3, 3);
    let x = mvn_sample(&sigma, 200_000, 8).unwrap();
    let adf = gamma_adf(&x).unwrap();
    // Normal fourth moments: Gamma_(ij),(kl) = s_ik s_jl + s_il s_jk.
    let pairs = eigenfit::linalg::vech_pairs(3);
    let oracle = DMatrix::from_fn(6, 6, |r, c| {
        let ((i, j), (k, l)) = (pairs[r], pairs[c]);
        sigma[(i, k)] * sigma[(j, l)] + sigma[(i, l)] * sigma[(j, k)]
    });
    let diff = (adf.as_matrix() - &oracle).amax();
    assert!(diff < 0.02, "max deviation {diff}");
    assert!((gamma_normal(&sigma).as_matrix() - oracle).amax() < 1e-14);
}

#[test]
fn v_is_half_the_hessian_of_the_discrepancy() {
    for seed in 0..5 {
        let p = 3 + seed as usize % 2;
        let sigma = random_pd(p, seed);
        let sv = MomentVector::from_cov(&sigma);
        let base = vech(&sigma);
        let k = base.len();
        let f = |v: &DVector<f64>| {
            let s = MomentVector::from_cov(&devech(v).unwrap());
            ml_discrepancy(&s, &sv).unwrap()
        };
        let h = 1e-4;
        let mut hess = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                let mut pp = base.clone();
                let mut pm = base.clone();
                let mut mp = base.clone();
                let mut mm = base.clone();
                pp[a] += h;
                pp[b] += h;
                pm[a] += h;
                pm[b] -= h;
                mp[a] -= h;
                mp[b] += h;
                mm[a] -= h;
                mm[b] -= h;
                hess[(a, b)] = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h);
            }
        }
        let v = v_ml(&sigma).unwrap();
        let rel = (&hess - &v * 2.0).amax() / v.amax();
        assert!(rel < 1e-5, "seed {seed}: relative deviation {rel}");
    }
}

#[test]
fn normal_eigenvalues_approach_one_with_n() {
    let m = ModelSpec::fixture("one_factor_5").unwrap();
    let theta = m.start_values();
    let sigma = m.implied_cov(&theta).unwrap();
    let u = u_matrix(&v_ml(&sigma).unwrap(), &m.jacobian(&theta).unwrap()).unwrap();
    let mut means = Vec::new();
    for n in [500usize, 5_000, 50_000] {
        let mut total = 0.0;
        for r in 0..20 {
            let x = mvn_sample(&sigma, n, 1000 * n as u64 + r).unwrap();
            let l = lambda_hat(&u, &gamma_adf(&x).unwrap(), 5).unwrap();
            total += l
                .as_slice()
                .iter()
                .map(|v| (v - 1.0).abs())
                .fold(0.0, f64::max);
        }
        means.push(total / 20.0);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}

#[test]
fn fit_report_eigenvalues_near_one_for_large_normal_sample() {
    let m = ModelSpec::fixture("one_factor_5").unwrap();
    let sigma = m.implied_cov(&m.start_values()).unwrap();
    let x = mvn_sample(&sigma, 100_000, 19).unwrap();
    let a = analyze(&m, &x, &[]).unwrap();
    for &l in a.spectrum().unwrap().as_slice() {
        assert!((l - 1.0).abs() < 0.1, "{l}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spectrum_is_real_nonnegative_and_matches_traces(seed in 0u64..100_000, n in 60usize..600, heavy in any::<bool>()) {
        let m = ModelSpec::fixture("bollen_m1").unwrap();
        let sigma = m.implied_cov(&m.start_values()).unwrap();
        let (skew, kurt) = if heavy { (2.0, 21.0) } else { (1.0, 7.0) };
        let x = vale_maurelli_sample(&sigma, skew, kurt, n, seed).unwrap();
        let a = analyze(&m, &x, &[]).unwrap();
        let dec = decompose(&a.u, &a.gamma).unwrap();
        let top = dec.values[0];
        for &v in &dec.values {
            prop_assert!(v >= -1e-8 * top, "negative eigenvalue {}", v);
        }
        prop_assert!(dec.imag_residual <= 1e-8 * top);
        let w = &a.spectrum().unwrap().weights;
        let (t1, t2) = traces(&a.u, &a.gamma);
        prop_assert!((w.sum() - t1).abs() <= 1e-6 * t1);
        prop_assert!((w.sum_of_squares() - t2).abs() <= 1e-6 * t2);
    }
}
