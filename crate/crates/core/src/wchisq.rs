//! Tail probabilities of positively weighted sums of independent
//! chi-square(1) variables.
//!
//! [`survival`] inverts the characteristic function along the real axis
//! (Imhof's formula):
//!
//! ```text
//! P(Q > t) = 1/2 + (1/pi) * int_0^inf sin(theta(u)) / (u rho(u)) du
//! theta(u) = 1/2 sum atan(w_j u) - t u / 2
//! rho(u)   = prod (1 + w_j^2 u^2)^(1/4)
//! ```
//!
//! The integral is split at the first zero of `sin(theta)` beyond the
//! maximum of `theta`. The head is integrated with adaptive Gauss-Kronrod;
//! past that point `theta` is strictly decreasing, so the tail is a series
//! of half-period integrals with alternating sign, summed with Wynn's
//! epsilon algorithm and cut off by the analytic envelope
//! `int_U^inf du / (u rho(u)) <= 2 / (d U^(d/2) prod sqrt(w_j))`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::seeding;

/// Smallest admissible weight relative to the largest.
pub const MIN_RELATIVE_WEIGHT: f64 = 1e-12;

/// Absolute error target on the integral (probability scale is this / pi).
const INTEGRAL_TOL: f64 = 1e-12;

const MAX_HALF_PERIODS: usize = 20_000;

/// Positive mixture weights, sorted in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("mixture weights are empty".into()));
        }
        if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "mixture weights must be finite and positive, got {bad}"
            )));
        }
        weights.sort_by(|a, b| b.total_cmp(a));
        let max = weights[0];
        let min = weights[weights.len() - 1];
        if min < MIN_RELATIVE_WEIGHT * max {
            return Err(Error::InvalidInput(format!(
                "weight {min:e} is below {MIN_RELATIVE_WEIGHT:e} relative to the largest ({max:e})"
            )));
        }
        Ok(Self(weights))
    }

    /// `d` copies of `c`.
    pub fn equal(d: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.0.iter().map(|w| w * w).sum()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|w| w * c).collect())
    }
}

impl TryFrom<Vec<f64>> for MixtureWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MixtureWeights> for Vec<f64> {
    fn from(w: MixtureWeights) -> Self {
        w.0
    }
}

/// A tail probability together with the quadrature's error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailProbability {
    pub p: f64,
    pub error_estimate: f64,
}

/// `P(sum_j w_j Z_j^2 > t)`.
pub fn survival(w: &MixtureWeights, t: f64) -> Result<f64> {
    survival_detailed(w, t).map(|r| r.p)
}

pub fn survival_detailed(w: &MixtureWeights, t: f64) -> Result<TailProbability> {
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "threshold must be finite, got {t}"
        )));
    }
    if t <= 0.0 {
        return Ok(TailProbability {
            p: 1.0,
            error_estimate: 0.0,
        });
    }
    // Work on the scale where the largest weight is 1.
    let scale = w.as_slice()[0];
    let lam: Vec<f64> = w.as_slice().iter().map(|x| x / scale).collect();
    let x = t / scale;

    let (integral, err) = Imhof::new(&lam, x).integrate();
    let raw = 0.5 + integral / PI;
    let error_estimate = err / PI;
    let p = clamp_probability(raw)?;
    Ok(TailProbability { p, error_estimate })
}

fn clamp_probability(raw: f64) -> Result<f64> {
    if !raw.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "tail probability evaluated to {raw}"
        )));
    }
    if !(-1e-9..=1.0 + 1e-9).contains(&raw) {
        return Err(Error::NumericalFailure(format!(
            "tail probability {raw:e} outside [0, 1] beyond tolerance"
        )));
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// Survival function of a central chi-square with `df` degrees of freedom.
pub fn chi_square_survival(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).map(|c| c.sf(x)).unwrap_or(f64::NAN)
}

/// Quantile of a central chi-square with `df` degrees of freedom.
pub fn chi_square_quantile(df: f64, prob: f64) -> f64 {
    ChiSquared::new(df)
        .map(|c| c.inverse_cdf(prob))
        .unwrap_or(f64::NAN)
}

struct Imhof<'a> {
    lam: &'a [f64],
    x: f64,
    half_log_prod: f64,
}

impl<'a> Imhof<'a> {
    fn new(lam: &'a [f64], x: f64) -> Self {
        let half_log_prod = 0.5 * lam.iter().map(|l| l.ln()).sum::<f64>();
        Self {
            lam,
            x,
            half_log_prod,
        }
    }

    fn theta(&self, u: f64) -> f64 {
        0.5 * self.lam.iter().map(|l| (l * u).atan()).sum::<f64>() - 0.5 * self.x * u
    }

    fn dtheta(&self, u: f64) -> f64 {
        0.5 * self
            .lam
            .iter()
            .map(|l| l / (1.0 + l * l * u * u))
            .sum::<f64>()
            - 0.5 * self.x
    }

    fn integrand(&self, u: f64) -> f64 {
        if u == 0.0 {
            return self.dtheta(0.0);
        }
        let mut theta = -0.5 * self.x * u;
        let mut log_rho = 0.0;
        for &l in self.lam {
            let lu = l * u;
            theta += 0.5 * lu.atan();
            log_rho += 0.25 * (lu * lu).ln_1p();
        }
        theta.sin() / (u * log_rho.exp())
    }

    /// Upper bound on `int_U^inf |integrand|`.
    fn envelope_tail(&self, u: f64) -> f64 {
        let d = self.lam.len() as f64;
        (std::f64::consts::LN_2 - d.ln() - 0.5 * d * u.ln() - self.half_log_prod).exp()
    }

    /// Location of the maximum of `theta` (0 when `theta` is decreasing from the start).
    fn peak(&self) -> f64 {
        if self.dtheta(0.0) <= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0;
        while self.dtheta(hi) > 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.dtheta(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solves `theta(u) = level` for `u > from`, where `theta` is decreasing
    /// on `[from, inf)` and `theta(from) >= level`.
    fn solve_level(&self, from: f64, level: f64) -> f64 {
        let mut lo = from;
        let mut step = (2.0 * PI / self.x).max(from * 1e-3).max(1e-12);
        let mut hi = from + step;
        while self.theta(hi) > level {
            lo = hi;
            step *= 2.0;
            hi = from + step;
        }
        // Safeguarded Newton inside the bracket [lo, hi].
        let mut u = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.theta(u) - level;
            if g > 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            let dg = self.dtheta(u);
            let mut next = if dg < 0.0 { u - g / dg } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - u).abs() <= 1e-15 * u.abs().max(1e-300) || hi - lo <= 1e-15 * hi {
                return next;
            }
            u = next;
        }
        u
    }

    fn integrate(&self) -> (f64, f64) {
        let f = |u: f64| self.integrand(u);
        let peak = self.peak();
        let theta_peak = self.theta(peak);
        let mut level = (theta_peak / PI).floor() * PI;
        let start = if peak == 0.0 {
            0.0
        } else if level == theta_peak {
            peak
        } else {
            self.solve_level(peak, level)
        };

        let (head, head_err) = if start > 0.0 {
            adaptive_gauss_kronrod(&f, 0.0, start, 0.25 * INTEGRAL_TOL, 4000)
        } else {
            (0.0, 0.0)
        };
        if start > 0.0 && self.envelope_tail(start) <= 0.25 * INTEGRAL_TOL {
            return (head, head_err + self.envelope_tail(start));
        }

        let mut partial = Vec::with_capacity(64);
        let mut sum = 0.0;
        let mut quad_err = head_err;
        let mut a = start;
        let mut estimates: Vec<f64> = Vec::new();
        for _ in 0..MAX_HALF_PERIODS {
            level -= PI;
            let b = self.solve_level(a, level);
            let (piece, piece_err) = adaptive_gauss_kronrod(&f, a, b, 0.05 * INTEGRAL_TOL, 200);
            sum += piece;
            quad_err += piece_err;
            partial.push(sum);
            a = b;

            let tail = self.envelope_tail(b);
            if tail <= 0.25 * INTEGRAL_TOL {
                return (head + sum, quad_err + tail);
            }
            if partial.len() >= 4 {
                let window = &partial[partial.len().saturating_sub(40)..];
                estimates.push(wynn_epsilon(window));
                let k = estimates.len();
                if k >= 3 {
                    let d1 = (estimates[k - 1] - estimates[k - 2]).abs();
                    let d2 = (estimates[k - 2] - estimates[k - 3]).abs();
                    if d1.max(d2) <= 0.25 * INTEGRAL_TOL {
                        return (head + estimates[k - 1], quad_err + d1.max(d2));
                    }
                }
            }
        }
        let last = estimates.last().copied().unwrap_or(sum);
        let k = estimates.len();
        let spread = if k >= 2 {
            (estimates[k - 1] - estimates[k - 2]).abs()
        } else {
            f64::INFINITY
        };
        (head + last, quad_err + spread)
    }
}

/// Wynn's epsilon extrapolation of a sequence of partial sums; returns the
/// entry of the highest even column computed from all terms.
fn wynn_epsilon(s: &[f64]) -> f64 {
    let n = s.len();
    let mut prev = vec![0.0; n + 1]; // column k-1
    let mut cur: Vec<f64> = s.to_vec(); // column k
    let mut best = s[n - 1];
    let mut k = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let diff = cur[i + 1] - cur[i];
            if diff == 0.0 {
                // Sequence has converged at this depth.
                return cur[i + 1];
            }
            next.push(prev[i + 1] + 1.0 / diff);
        }
        k += 1;
        prev = cur;
        cur = next;
        if k % 2 == 0 {
            let v = cur[cur.len() - 1];
            if v.is_finite() {
                best = v;
            }
        }
    }
    best
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_600_525_135_254,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

fn gauss_kronrod_21(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive Gauss-Kronrod (21 point) quadrature on `[a, b]`.
fn adaptive_gauss_kronrod(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_intervals: usize,
) -> (f64, f64) {
    let (v, e) = gauss_kronrod_21(f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut total_err = e;
    while total_err > tol && intervals.len() < max_intervals {
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, val, err) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            intervals.push((lo, hi, val, err));
            break;
        }
        let left = gauss_kronrod_21(f, lo, mid);
        let right = gauss_kronrod_21(f, mid, hi);
        total_err += left.1 + right.1 - err;
        intervals.push((lo, mid, left.0, left.1));
        intervals.push((mid, hi, right.0, right.1));
    }
    let total: f64 = intervals.iter().map(|iv| iv.2).sum();
    let total_err: f64 = intervals.iter().map(|iv| iv.3).sum();
    (total, total_err)
}

const MC_CHUNK: usize = 1 << 16;

/// Monte Carlo draws of `sum_j w_j Z_j^2`; deterministic given `seed`.
pub fn mc_draws(w: &MixtureWeights, draws: usize, seed: u64) -> Vec<f64> {
    let chunks = draws.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let len = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut rng = seeding::stream(seed, c as u64);
            (0..len)
                .map(|_| {
                    w.as_slice()
                        .iter()
                        .map(|wj| {
                            let z: f64 = rng.sample(StandardNormal);
                            wj * z * z
                        })
                        .sum::<f64>()
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Proportion of `draws` simulated mixture values exceeding `t`.
pub fn mc_survival(w: &MixtureWeights, t: f64, draws: usize, seed: u64) -> Result<f64> {
    mc_survival_many(w, &[t], draws, seed).map(|v| v[0])
}

/// [`mc_survival`] at several thresholds from one set of draws.
pub fn mc_survival_many(
    w: &MixtureWeights,
    ts: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::InvalidInput("draws must be at least 1".into()));
    }
    if let Some(t) = ts.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "threshold must be finite, got {t}"
        )));
    }
    let chunks = draws.div_ceil(MC_CHUNK);
    let counts: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut rng = seeding::stream(seed, c as u64);
            let mut counts = vec![0u64; ts.len()];
            for _ in 0..len {
                let q: f64 = w
                    .as_slice()
                    .iter()
                    .map(|wj| {
                        let z: f64 = rng.sample(StandardNormal);
                        wj * z * z
                    })
                    .sum();
                for (k, t) in ts.iter().enumerate() {
                    if q > *t {
                        counts[k] += 1;
                    }
                }
            }
            counts
        })
        .collect();
    Ok((0..ts.len())
        .map(|k| counts.iter().map(|c| c[k]).sum::<u64>() as f64 / draws as f64)
        .collect())
}
