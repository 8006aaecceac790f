#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent Monte Carlo tail of `sum w_j Z_j^2`: `(estimate, standard error)`.
pub fn mc_tail(w: &[f64], t: f64, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..draws {
        let q: f64 = w
            .iter()
            .map(|&wj| {
                let z: f64 = rng.sample(StandardNormal);
                wj * z * z
            })
            .sum();
        if q > t {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

/// Draws of `sum w_j Z_j^2`.
pub fn mixture_draws(w: &[f64], draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws)
        .map(|_| {
            w.iter()
                .map(|&wj| {
                    let z: f64 = rng.sample(StandardNormal);
                    wj * z * z
                })
                .sum()
        })
        .collect()
}

/// Empirical quantile by sorting.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[((v.len() as f64 * q) as usize).min(v.len() - 1)]
}

/// Random symmetric positive definite matrix `B B' + p I / 2`.
pub fn random_pd(p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose() + DMatrix::identity(p, p) * (p as f64 / 2.0)
}

/// Random positive semidefinite `p x p` matrix of rank `r`.
pub fn random_psd(p: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(p, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose()
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(ps: &[f64]) -> f64 {
    let mut v = ps.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &p)| ((i as f64 + 1.0) / n - p).max(p - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov critical value at level 0.01.
pub fn ks_critical_01(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}
