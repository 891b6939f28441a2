//! Strip-analyticity utilities: the derivative bound under domain
//! shrinking, coefficient decay checks, the tail bound for band-limited
//! truncation, pointwise analytic inversion of near-identity maps, and
//! Lipschitz extension from scattered samples.

use crate::fixtures;
use crate::series::{FTSeries, C64};
use crate::util::solve_dense;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("bad argument: {0}")]
    BadArgument(String),
    #[error(
        "K sigma = {product} < 1 (K = {k}, sigma = {sigma}); the tail bound needs K sigma >= 1"
    )]
    KsigmaTooSmall { k: u32, sigma: f64, product: f64 },
    #[error("precondition failed: {0}")]
    PreconditionFail(String),
    #[error("newton iteration failed: {0}")]
    NewtonFail(String),
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("lambda = {given} is below the sampled difference quotient {required}")]
    LambdaTooSmall { given: f64, required: f64 },
}

/// Derivative bound under strip loss rho: returns f_norm_r / rho.
pub fn cauchy_bound(f_norm_r: f64, rho: f64) -> Result<f64, AnalysisError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(AnalysisError::BadArgument(format!("rho must be positive, got {rho}")));
    }
    Ok(f_norm_r / rho)
}

/// Where the strip norm |v|_s comes from in fourier_decay_check.
#[derive(Clone, Copy, Debug)]
pub enum NormSource {
    /// The coefficient majorant. Safe direction: the check can then never
    /// fail, so use it only to compute the report's ratios.
    Majorant,
    /// Sampled sup over the strip boundary Im theta_j = +-s on a real-part
    /// grid of the given size per dimension, at I = 0.
    SampledSup { grid: usize },
    /// Externally supplied norm value.
    Given(f64),
}

#[derive(Clone, Debug)]
pub struct DecayReport {
    pub ok: bool,
    pub worst_k: Vec<i32>,
    /// max over modes of |v_k| e^{|k| s} / norm; ok iff <= 1 (+ rounding).
    pub worst_ratio: f64,
    pub norm_used: f64,
}

/// Sampled sup of |v(0, theta)| over the boundary of the strip of half
/// width s: all 2^n sign patterns of Im theta, real parts on a grid.
fn strip_boundary_sup(v: &FTSeries, s: f64, grid: usize) -> f64 {
    let n = v.dim();
    let actions = vec![C64::new(0.0, 0.0); n];
    let mut sup = 0.0f64;
    let step = std::f64::consts::TAU / grid as f64;
    let mut idx = vec![0usize; n];
    loop {
        for signs in 0..(1u32 << n) {
            let theta: Vec<C64> = (0..n)
                .map(|j| {
                    let im = if signs >> j & 1 == 1 { s } else { -s };
                    C64::new(idx[j] as f64 * step, im)
                })
                .collect();
            sup = sup.max(v.eval(&actions, &theta).norm());
        }
        let mut j = n;
        loop {
            if j == 0 {
                return sup;
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < grid {
                break;
            }
            idx[j] = 0;
        }
    }
}

/// Checks the per-mode decay |v_k| <= |v|_s e^{-|k| s} on the I-independent
/// part of v, with |v|_s taken from the requested source.
pub fn fourier_decay_check(v: &FTSeries, s: f64, norm: NormSource) -> DecayReport {
    assert!(s > 0.0);
    let (flat, _) = v.truncate_taylor(0);
    let norm_used = match norm {
        NormSource::Majorant => {
            flat.majorant_norm(&crate::series::DomainSpec { r: 1.0, s, h: 1.0 })
        }
        NormSource::SampledSup { grid } => strip_boundary_sup(&flat, s, grid.max(8)),
        NormSource::Given(x) => x,
    };
    let mut worst_ratio = 0.0f64;
    let mut worst_k = vec![0i32; v.dim()];
    for (_, k, c) in flat.iter() {
        if !k.is_canonical() {
            continue;
        }
        let ratio = c.norm() * (k.l1() as f64 * s).exp() / norm_used;
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_k = k.0.clone();
        }
    }
    DecayReport { ok: worst_ratio <= 1.0 + 1e-9, worst_k, worst_ratio, norm_used }
}

/// Frozen constant C(n) with
/// sum_{l > K} 4^n l^(n-1) e^(-l sigma) <= C(n) K^n e^(-K sigma)
/// for all K sigma >= 1. The ratio's supremum is approached from below as
/// K grows along K sigma = 1.
pub fn truncation_constant(n: usize) -> Result<f64, AnalysisError> {
    fixtures::TRUNC_C
        .get(n.wrapping_sub(1))
        .copied()
        .ok_or_else(|| AnalysisError::BadArgument(format!("no truncation constant for n = {n}")))
}

/// Measured ratio sum_{l>K} 4^n l^(n-1) e^(-l sigma) / (K^n e^(-K sigma));
/// the quantity truncation_constant dominates.
pub fn truncation_ratio(n: usize, k: u32, sigma: f64) -> f64 {
    assert!(k >= 1 && sigma > 0.0);
    let four_n = 4f64.powi(n as i32);
    let mut acc = 0.0f64;
    let mut l = k as u64 + 1;
    let step = (-sigma).exp();
    let mut decay = (-(l as f64) * sigma).exp();
    loop {
        let term = four_n * (l as f64).powi(n as i32 - 1) * decay;
        acc += term;
        if l as f64 * sigma > n as f64 && term < acc * 1e-16 {
            break;
        }
        decay *= step;
        l += 1;
    }
    acc / ((k as f64).powi(n as i32) * (-(k as f64) * sigma).exp())
}

/// Tail bound C(n) K^n e^(-K sigma) v_norm_s for dropping modes |k| > K.
/// Requires K sigma >= 1; the estimate is false without it.
pub fn truncation_bound(v_norm_s: f64, k: u32, sigma: f64, n: usize) -> Result<f64, AnalysisError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(AnalysisError::BadArgument(format!("sigma must be positive, got {sigma}")));
    }
    let product = k as f64 * sigma;
    if product < 1.0 {
        return Err(AnalysisError::KsigmaTooSmall { k, sigma, product });
    }
    Ok(truncation_constant(n)? * (k as f64).powi(n as i32) * (-product).exp() * v_norm_s)
}

/// Pointwise analytic inverse of a near-identity map on a sup-norm ball of
/// radius h around `center`. Valid when |f - id| <= delta <= h/4 (sampled
/// at construction); targets in the quarter ball then have unique
/// preimages, found by damped Newton seeded at the target.
pub struct InverseMap<F> {
    f: F,
    center: Vec<f64>,
    delta: f64,
    h: f64,
    /// max |f - id| over the construction samples
    pub max_deviation: f64,
}

pub fn analytic_inverse<F>(
    f: F,
    center: &[f64],
    delta: f64,
    h: f64,
) -> Result<InverseMap<F>, AnalysisError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(h > 0.0 && delta > 0.0) {
        return Err(AnalysisError::BadArgument("need h > 0 and delta > 0".into()));
    }
    if delta > h / 4.0 {
        return Err(AnalysisError::PreconditionFail(format!(
            "delta = {delta} exceeds h/4 = {}",
            h / 4.0
        )));
    }
    let n = center.len();
    // sampled deviation check on a 5^n lattice of the full ball
    let mut max_dev = 0.0f64;
    let per_axis = 5usize;
    let mut idx = vec![0usize; n];
    loop {
        let x: Vec<f64> = (0..n)
            .map(|j| center[j] - h + 2.0 * h * idx[j] as f64 / (per_axis - 1) as f64)
            .collect();
        let y = f(&x);
        if y.len() != n {
            return Err(AnalysisError::BadArgument("map changes dimension".into()));
        }
        let dev = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        max_dev = max_dev.max(dev);
        let mut j = n;
        loop {
            if j == 0 {
                if max_dev > delta {
                    return Err(AnalysisError::PreconditionFail(format!(
                        "sampled |f - id| = {max_dev} exceeds delta = {delta}"
                    )));
                }
                return Ok(InverseMap {
                    f,
                    center: center.to_vec(),
                    delta,
                    h,
                    max_deviation: max_dev,
                });
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < per_axis {
                break;
            }
            idx[j] = 0;
        }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> InverseMap<F> {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn quarter_radius(&self) -> f64 {
        self.h / 4.0
    }

    /// Solves f(x) = target for the unique x near target.
    pub fn eval(&self, target: &[f64]) -> Result<Vec<f64>, AnalysisError> {
        let n = self.center.len();
        assert_eq!(target.len(), n);
        let dist =
            target.iter().zip(&self.center).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        if dist > self.h / 4.0 + 1e-12 {
            return Err(AnalysisError::BadArgument(format!(
                "target outside the quarter ball: distance {dist} > {}",
                self.h / 4.0
            )));
        }
        let mut x = target.to_vec();
        let mut res = sub(&(self.f)(&x), target);
        let mut res_norm = sup_norm(&res);
        for _ in 0..60 {
            if res_norm <= 1e-14 * (1.0 + sup_norm(target)) {
                return Ok(x);
            }
            let jac = self.fd_jacobian(&x);
            let step = solve_dense(&jac, &res)
                .ok_or_else(|| AnalysisError::NewtonFail("singular jacobian".into()))?;
            let mut damping = 1.0;
            loop {
                let trial: Vec<f64> =
                    x.iter().zip(&step).map(|(xi, si)| xi - damping * si).collect();
                let trial_res = sub(&(self.f)(&trial), target);
                let trial_norm = sup_norm(&trial_res);
                if trial_norm < res_norm {
                    x = trial;
                    res = trial_res;
                    res_norm = trial_norm;
                    break;
                }
                damping *= 0.5;
                if damping < 1e-8 {
                    return Err(AnalysisError::NewtonFail(format!(
                        "stalled at residual {res_norm}"
                    )));
                }
            }
        }
        Err(AnalysisError::NewtonFail(format!("no convergence, residual {res_norm}")))
    }

    fn fd_jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = x.len();
        let step = 1e-7 * self.h.max(1.0);
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += step;
            xm[j] -= step;
            let fp = (self.f)(&xp);
            let fm = (self.f)(&xm);
            for i in 0..n {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * step);
            }
        }
        jac
    }

    /// Finite-difference sup operator norm of D(inverse) - Id at target.
    pub fn dphi_minus_id(&self, target: &[f64]) -> Result<f64, AnalysisError> {
        let n = target.len();
        let step = 1e-6 * self.h.max(1.0);
        let mut worst = 0.0f64;
        let mut rows = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut tp = target.to_vec();
            let mut tm = target.to_vec();
            tp[j] += step;
            tm[j] -= step;
            let xp = self.eval(&tp)?;
            let xm = self.eval(&tm)?;
            for i in 0..n {
                rows[i][j] = (xp[i] - xm[i]) / (2.0 * step) - if i == j { 1.0 } else { 0.0 };
            }
        }
        for row in rows {
            worst = worst.max(row.iter().map(|x| x.abs()).sum());
        }
        Ok(worst)
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
}

/// Scattered real-valued data to extend; lambda, when given, must dominate
/// every pairwise difference quotient.
#[derive(Clone, Debug)]
pub struct SampledFunction {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub lambda: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtensionNorm {
    Sup,
    Euclid,
}

impl ExtensionNorm {
    fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            ExtensionNorm::Sup => a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
            ExtensionNorm::Euclid => {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LipschitzExtension {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    norm: ExtensionNorm,
    pub lambda: f64,
}

/// Largest-minorant extension: U(x) = max_i (u_i - lambda |x_i - x|).
/// Agrees with the data on the sample set and is globally
/// lambda-Lipschitz in the chosen norm.
pub fn lipschitz_extend(
    sf: &SampledFunction,
    norm: ExtensionNorm,
) -> Result<LipschitzExtension, AnalysisError> {
    if sf.points.is_empty() {
        return Err(AnalysisError::EmptySampleSet);
    }
    if sf.points.len() != sf.values.len() {
        return Err(AnalysisError::BadArgument("points/values length mismatch".into()));
    }
    let dim = sf.points[0].len();
    if sf.points.iter().any(|p| p.len() != dim) {
        return Err(AnalysisError::BadArgument("inconsistent point dimensions".into()));
    }
    let mut required = 0.0f64;
    for i in 0..sf.points.len() {
        for j in i + 1..sf.points.len() {
            let d = norm.dist(&sf.points[i], &sf.points[j]);
            if d == 0.0 {
                if sf.values[i] != sf.values[j] {
                    return Err(AnalysisError::BadArgument(
                        "duplicate point with conflicting values".into(),
                    ));
                }
                continue;
            }
            required = required.max((sf.values[i] - sf.values[j]).abs() / d);
        }
    }
    let lambda = match sf.lambda {
        Some(l) => {
            if l < required {
                return Err(AnalysisError::LambdaTooSmall { given: l, required });
            }
            l
        }
        None => required,
    };
    Ok(LipschitzExtension { points: sf.points.clone(), values: sf.values.clone(), norm, lambda })
}

impl LipschitzExtension {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.points
            .iter()
            .zip(&self.values)
            .map(|(p, &u)| u - self.lambda * self.norm.dist(p, x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
