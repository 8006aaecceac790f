mod common;

use common::mc_tail;
use eigenfit::wchisq::{chi_square_survival, mc_survival, survival, MixtureWeights};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weights(v: &[f64]) -> MixtureWeights {
    MixtureWeights::new(v.to_vec()).unwrap()
}

#[test]
fn three_one_mixture_matches_simulation() {
    let p = survival(&weights(&[3.0, 1.0]), 4.0).unwrap();
    let (mc, se) = mc_tail(&[3.0, 1.0], 4.0, 10_000_000, 11);
    assert!(
        (p - mc).abs() <= 3.0 * se,
        "exact {p}, simulated {mc} +- {se}"
    );
}

#[test]
fn simulation_sweep_on_random_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let d = rng.random_range(1..=50);
        let w: Vec<f64> = (0..d)
            .map(|_| 10f64.powf(rng.random_range(-1.0..1.0)))
            .collect();
        let mw = weights(&w);
        let t = mw.sum() * rng.random_range(0.5..2.0);
        let exact = survival(&mw, t).unwrap();
        let mc = mc_survival(&mw, t, 100_000, k).unwrap();
        worst = worst.max((exact - mc).abs());
    }
    assert!(worst <= 2e-3, "max deviation {worst}");
}

#[test]
fn agrees_with_simulation_within_binomial_error() {
    for (w, t) in [
        (vec![2.0, 1.0, 0.5], 3.0),
        (vec![5.0, 1.0, 1.0, 0.2], 12.0),
        (vec![1.5; 8], 20.0),
    ] {
        let mw = weights(&w);
        let exact = survival(&mw, t).unwrap();
        let mc = mc_survival(&mw, t, 1_000_000, 3).unwrap();
        let se = (exact * (1.0 - exact) / 1e6).sqrt();
        assert!(
            (exact - mc).abs() <= 3.0 * se,
            "{w:?} t={t}: {exact} vs {mc}"
        );
    }
}

#[test]
fn unit_weights_are_chi_square() {
    for d in [1usize, 2, 5, 35] {
        let mw = MixtureWeights::equal(d, 1.0).unwrap();
        for q in [0.5, 1.0, 2.0, 3.0] {
            let t = q * d as f64;
            let p = survival(&mw, t).unwrap();
            let reference = chi_square_survival(d as f64, t);
            assert!(
                (p - reference).abs() <= 1e-8,
                "d={d} t={t}: {p} vs {reference}"
            );
        }
    }
}

#[test]
fn table_distribution_two_weights() {
    // Eigenvalues published for the political democracy model, moderate non-normality.
    let w = [
        1.87, 1.59, 1.49, 1.44, 1.43, 1.42, 1.38, 1.36, 1.35, 1.34, 1.31, 1.29, 1.26, 1.13, 1.12,
        1.11, 1.11, 1.10, 1.10, 1.09, 1.09, 1.08, 1.08, 1.07, 1.07, 1.07, 1.06, 1.05, 1.04, 1.03,
        1.03, 1.03, 1.02, 1.02, 1.01,
    ];
    let mw = weights(&w);
    for t in [40.0, 55.0, 70.0] {
        let p = eigenfit::pvalue::p_oracle(&mw, t).unwrap().p;
        let (mc, se) = mc_tail(&w, t, 400_000, 21);
        assert!((p - mc).abs() <= 4.0 * se + 1e-4, "t={t}: {p} vs {mc}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nonincreasing_in_t(w in prop::collection::vec(0.1f64..10.0, 1..12), a in 0.0f64..60.0, b in 0.0f64..60.0) {
        let mw = weights(&w);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (plo, phi) = (survival(&mw, lo).unwrap(), survival(&mw, hi).unwrap());
        prop_assert!(phi <= plo + 1e-12);
        prop_assert!((0.0..=1.0).contains(&plo) && (0.0..=1.0).contains(&phi));
    }

    #[test]
    fn nonpositive_threshold_gives_one(w in prop::collection::vec(0.1f64..10.0, 1..12), t in -50.0f64..=0.0) {
        prop_assert_eq!(survival(&weights(&w), t).unwrap(), 1.0);
    }

    #[test]
    fn vanishes_far_in_the_tail(w in prop::collection::vec(0.1f64..10.0, 1..12)) {
        let mw = weights(&w);
        prop_assert!(survival(&mw, 200.0 * mw.sum()).unwrap() < 1e-12);
    }

    #[test]
    fn scale_equivariant(w in prop::collection::vec(0.1f64..10.0, 1..12), t in 0.1f64..80.0, c in 0.01f64..100.0) {
        let mw = weights(&w);
        let scaled = mw.scaled(c).unwrap();
        let (p, q) = (survival(&mw, t).unwrap(), survival(&scaled, c * t).unwrap());
        prop_assert!((p - q).abs() <= 1e-9, "{} vs {}", p, q);
    }
}
