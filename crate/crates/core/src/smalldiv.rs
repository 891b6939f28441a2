//! Strongly nonresonant frequencies: the lower bound
//! |<k, omega>| >= alpha / |k|_1^tau, its brute-force verification over
//! lattice balls, the pigeonhole upper bound on the best divisor, Monte
//! Carlo measure of the violating frequency set, and a small catalog of
//! badly approximable test vectors.

use crate::fixtures;
use crate::util::{for_each_half_lattice, parallel_map_indexed};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmallDivError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("frequency fails the divisor bound up to K = {k_max} (margin {margin:.3e} at k = {worst_k:?})")]
    NotDiophantine { k_max: u32, margin: f64, worst_k: Vec<i32> },
    #[error("no catalog entry for dimension {0}")]
    UnsupportedDimension(usize),
}

/// alpha and tau of the divisor bound; nu = tau + 1 always. tau > n - 1 is
/// required for the violating set to have small measure, and is enforced
/// here. alpha = 0 is allowed and makes the bound vacuous.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DiophantineParams {
    pub n: usize,
    pub alpha: f64,
    pub tau: f64,
    pub nu: f64,
}

impl DiophantineParams {
    pub fn new(n: usize, alpha: f64, tau: f64) -> Result<Self, SmallDivError> {
        if n == 0 {
            return Err(SmallDivError::BadParams("n must be positive".into()));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(SmallDivError::BadParams(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(tau > n as f64 - 1.0 && tau.is_finite()) {
            return Err(SmallDivError::BadParams(format!(
                "tau must exceed n - 1 = {}, got {tau}",
                n - 1
            )));
        }
        Ok(DiophantineParams { n, alpha, tau, nu: tau + 1.0 })
    }
}

/// |k|_1^tau for |k|_1 = 1..=k_max, so scans do one table lookup per k.
fn l1_pow_table(tau: f64, k_max: u32) -> Vec<f64> {
    (0..=k_max).map(|l| (l as f64).powf(tau)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiophantineReport {
    pub ok: bool,
    /// min over scanned k of |<k, omega>| |k|_1^tau / alpha; infinity when
    /// alpha = 0 (the bound is vacuous).
    pub margin: f64,
    pub worst_k: Vec<i32>,
    /// The alpha-free minimum |<k, omega>| |k|_1^tau, i.e. the largest alpha
    /// that would pass at this k_max.
    pub min_scaled: f64,
}

/// Scans every 0 != |k|_1 <= k_max (one representative per mirror pair) for
/// the minimum of |<k, omega>| |k|_1^tau. The scan runs to completion so the
/// reported worst_k is the true minimizer; only an exact zero divisor stops
/// it early, since nothing can be smaller.
pub fn check_diophantine(
    omega: &[f64],
    params: &DiophantineParams,
    k_max: u32,
) -> DiophantineReport {
    assert_eq!(omega.len(), params.n, "omega length must match params.n");
    assert!(k_max >= 1);
    let lpow = l1_pow_table(params.tau, k_max);
    let mut min_scaled = f64::INFINITY;
    let mut worst_k = vec![0i32; params.n];
    for_each_half_lattice(params.n, k_max, |k| {
        let l: u32 = k.iter().map(|&x| x.unsigned_abs()).sum();
        if l > k_max {
            return true;
        }
        let dot: f64 = k.iter().zip(omega).map(|(&ki, &w)| ki as f64 * w).sum();
        let scaled = dot.abs() * lpow[l as usize];
        if scaled < min_scaled {
            min_scaled = scaled;
            worst_k.copy_from_slice(k);
            if scaled == 0.0 {
                return false;
            }
        }
        true
    });
    let margin = if params.alpha == 0.0 { f64::INFINITY } else { min_scaled / params.alpha };
    DiophantineReport { ok: margin >= 1.0, margin, worst_k, min_scaled }
}

/// Membership witness: a frequency together with the depth to which the
/// divisor bound has actually been checked. Construction fails unless the
/// scan passes, so margin >= 1 holds whenever verified_k > 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiophantineFrequency {
    pub omega: Vec<f64>,
    pub params: DiophantineParams,
    pub verified_k: u32,
    pub margin: f64,
}

impl DiophantineFrequency {
    pub fn verify(
        omega: &[f64],
        params: &DiophantineParams,
        k_max: u32,
    ) -> Result<Self, SmallDivError> {
        let rep = check_diophantine(omega, params, k_max);
        if !rep.ok {
            return Err(SmallDivError::NotDiophantine {
                k_max,
                margin: rep.margin,
                worst_k: rep.worst_k,
            });
        }
        Ok(DiophantineFrequency {
            omega: omega.to_vec(),
            params: *params,
            verified_k: k_max,
            margin: rep.margin,
        })
    }
}

/// min over 0 != |k|_inf <= k of |<k, omega>|. Zero divisors are returned
/// as 0. The pigeonhole bound n |omega|_inf / k^(n-1) dominates this for
/// every omega; see dirichlet_bound.
pub fn dirichlet_min(omega: &[f64], k: u32) -> f64 {
    assert!(k >= 1);
    let mut best = f64::INFINITY;
    for_each_half_lattice(omega.len(), k, |kv| {
        let dot: f64 = kv.iter().zip(omega).map(|(&ki, &w)| ki as f64 * w).sum();
        let a = dot.abs();
        if a < best {
            best = a;
            if best == 0.0 {
                return false;
            }
        }
        true
    });
    best
}

/// Conservative pigeonhole upper bound on dirichlet_min.
pub fn dirichlet_bound(omega: &[f64], k: u32) -> f64 {
    let n = omega.len() as f64;
    let sup = omega.iter().fold(0.0f64, |a, &w| a.max(w.abs()));
    n * sup / (k as f64).powi(omega.len() as i32 - 1)
}

/// Axis-aligned closed box of frequencies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencyBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl FrequencyBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, SmallDivError> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(SmallDivError::BadParams("box needs matching nonempty lo/hi".into()));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(SmallDivError::BadParams(format!("bad interval [{l}, {h}]")));
            }
        }
        Ok(FrequencyBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn diameter2(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) * (h - l)).sum::<f64>().sqrt()
    }

    /// Sup-metric distance from an interior point to the boundary;
    /// negative if omega lies outside.
    pub fn boundary_distance(&self, omega: &[f64]) -> f64 {
        assert_eq!(omega.len(), self.dim());
        omega
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&w, (&l, &h))| (w - l).min(h - w))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub hits: u64,
    pub n_samples: u64,
}

/// True iff some 0 != |k|_1 <= k_max has |<k, omega>| < alpha / |k|_1^tau.
/// Exits at the first violation; thresholds arrive precomputed.
fn violates(omega: &[f64], thresholds: &[f64], k_max: u32) -> bool {
    !for_each_half_lattice(omega.len(), k_max, |k| {
        let l: u32 = k.iter().map(|&x| x.unsigned_abs()).sum();
        if l > k_max {
            return true;
        }
        let dot: f64 = k.iter().zip(omega).map(|(&ki, &w)| ki as f64 * w).sum();
        dot.abs() >= thresholds[l as usize]
    })
}

/// Monte Carlo measure of the set of omega in the box violating the divisor
/// bound for some 0 != |k|_1 <= k_max. Each sample index gets its own RNG
/// stream, so the result is bit-identical for any worker count.
pub fn resonance_measure(
    fbox: &FrequencyBox,
    params: &DiophantineParams,
    k_max: u32,
    n_samples: u64,
    seed: u64,
    workers: usize,
) -> MeasureEstimate {
    assert_eq!(fbox.dim(), params.n);
    assert!(n_samples >= 1000, "need at least 1000 samples");
    let lpow = l1_pow_table(params.tau, k_max);
    let thresholds: Vec<f64> =
        lpow.iter().map(|&lp| if lp > 0.0 { params.alpha / lp } else { f64::INFINITY }).collect();
    let n = params.n;
    let hit_flags = parallel_map_indexed(n_samples as usize, workers, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut omega = vec![0.0; n];
        for (w, (l, h)) in omega.iter_mut().zip(fbox.lo.iter().zip(&fbox.hi)) {
            *w = l + rng.gen::<f64>() * (h - l);
        }
        u64::from(violates(&omega, &thresholds, k_max))
    });
    let hits: u64 = hit_flags.iter().sum();
    let vol = fbox.volume();
    let p = hits as f64 / n_samples as f64;
    MeasureEstimate {
        estimate: vol * p,
        stderr: vol * (p * (1.0 - p) / n_samples as f64).sqrt(),
        hits,
        n_samples,
    }
}

/// Closed-form upper bound on the measure resonance_measure estimates: each
/// violating set is a slab of width 2 alpha / (|k|_1^tau |k|_2) around the
/// plane <k, omega> = 0, and its intersection with the box has measure at
/// most width * diam_2(box)^(n-1). One term per mirror pair.
pub fn slab_sum_bound(fbox: &FrequencyBox, params: &DiophantineParams, k_max: u32) -> f64 {
    let d = fbox.diameter2();
    let cross = d.powi(fbox.dim() as i32 - 1);
    let lpow = l1_pow_table(params.tau, k_max);
    let mut total = 0.0;
    for_each_half_lattice(fbox.dim(), k_max, |k| {
        let l: u32 = k.iter().map(|&x| x.unsigned_abs()).sum();
        if l > k_max {
            return true;
        }
        let k2: f64 = k.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        total += 2.0 * params.alpha / (lpow[l as usize] * k2) * cross;
        true
    });
    total
}

/// True iff omega satisfies the divisor bound up to k_max AND sits at
/// sup-metric distance >= alpha from the box boundary.
pub fn omega_alpha_member(
    omega: &[f64],
    fbox: &FrequencyBox,
    params: &DiophantineParams,
    k_max: u32,
) -> bool {
    fbox.boundary_distance(omega) >= params.alpha && check_diophantine(omega, params, k_max).ok
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub omega: Vec<f64>,
    pub tau: f64,
    /// Largest passing alpha at the stated scan depth.
    pub alpha_max: f64,
    /// alpha_max / ALPHA_SAFETY; the working value for tests and runs.
    pub fixture_alpha: f64,
    pub k_max: u32,
}

/// Badly approximable test frequencies with alphas measured at K = 500.
pub fn frequency_catalog(n: usize) -> Result<Vec<CatalogEntry>, SmallDivError> {
    match n {
        2 => Ok(vec![CatalogEntry {
            omega: fixtures::golden_omega().to_vec(),
            tau: fixtures::GOLDEN_TAU,
            alpha_max: fixtures::GOLDEN_ALPHA_MAX,
            fixture_alpha: fixtures::GOLDEN_ALPHA_MAX / fixtures::ALPHA_SAFETY,
            k_max: fixtures::CATALOG_K_MAX,
        }]),
        3 => Ok(vec![CatalogEntry {
            omega: fixtures::cubic_omega().to_vec(),
            tau: fixtures::CUBIC_TAU,
            alpha_max: fixtures::CUBIC_ALPHA_MAX,
            fixture_alpha: fixtures::CUBIC_ALPHA_MAX / fixtures::ALPHA_SAFETY,
            k_max: fixtures::CATALOG_K_MAX,
        }]),
        other => Err(SmallDivError::UnsupportedDimension(other)),
    }
}
