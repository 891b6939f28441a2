//! Front end for Hamiltonians given in mechanical form: a twist term h(p)
//! plus a trigonometric forcing eps * f(p, q). Expands around the action
//! where the twist runs at the requested frequency, producing the normal
//! form and perturbation series the iteration consumes, then sweeps the
//! forcing strength to locate the empirical breakdown per alpha.

use super::{build_schedule, iterate, EngineError, RunConfig, ScheduleParams};
use crate::series::{ActionDegree, FTSeries, FourierIndex, NormalForm, C64};
use crate::util::{binomial, solve_dense};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// coeff * p_1^e_1 ... p_n^e_n
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyTerm {
    pub powers: Vec<u32>,
    pub coeff: f64,
}

/// The integrable twist part.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HKind {
    /// h = (1/2) sum_j a_j p_j^2
    Quadratic {
        a: Vec<f64>,
    },
    Poly {
        terms: Vec<PolyTerm>,
    },
}

/// One forcing mode g_c(p) cos<k, q> + g_s(p) sin<k, q>.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub k: Vec<i32>,
    #[serde(default)]
    pub cos: Vec<PolyTerm>,
    #[serde(default)]
    pub sin: Vec<PolyTerm>,
}

/// H(p, q) = h(p) + epsilon * f(p, q), with f the listed modes. The
/// bounds f_bound and m_bound are the user's norm estimates of f and of
/// the twist hessian; they only set the expansion radius and the
/// theoretical threshold, never the series itself.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalProblem {
    pub n: usize,
    pub h: HKind,
    #[serde(default)]
    pub f: Vec<FourierMode>,
    pub epsilon: f64,
    /// cap on the expansion radius; also the fallback when epsilon = 0
    #[serde(default)]
    pub r_domain: Option<f64>,
    pub m_bound: f64,
    pub f_bound: f64,
}

fn poly_eval(terms: &[PolyTerm], p: &[f64]) -> f64 {
    terms
        .iter()
        .map(|t| t.coeff * t.powers.iter().zip(p).map(|(&e, &x)| x.powi(e as i32)).product::<f64>())
        .sum()
}

#[allow(clippy::needless_range_loop)]
fn poly_grad(terms: &[PolyTerm], p: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for t in terms {
        for j in 0..p.len() {
            let e = t.powers[j];
            if e == 0 {
                continue;
            }
            let mut w = t.coeff * e as f64;
            for (i, (&ei, &x)) in t.powers.iter().zip(p).enumerate() {
                let d = if i == j { ei - 1 } else { ei };
                w *= x.powi(d as i32);
            }
            out[j] += w;
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn poly_hess(terms: &[PolyTerm], p: &[f64], out: &mut [Vec<f64>]) {
    for row in out.iter_mut() {
        row.fill(0.0);
    }
    let n = p.len();
    for t in terms {
        for j in 0..n {
            for l in j..n {
                let (ej, el) = (t.powers[j], t.powers[l]);
                let factor = if j == l {
                    (ej as f64) * (ej as f64 - 1.0)
                } else {
                    (ej as f64) * (el as f64)
                };
                if factor == 0.0 {
                    continue;
                }
                let mut w = t.coeff * factor;
                for (i, (&ei, &x)) in t.powers.iter().zip(p).enumerate() {
                    let mut d = ei;
                    if i == j {
                        d -= 1;
                    }
                    if i == l {
                        d -= 1;
                    }
                    w *= x.powi(d as i32);
                }
                out[j][l] += w;
                if j != l {
                    out[l][j] += w;
                }
            }
        }
    }
}

impl HKind {
    fn value(&self, p: &[f64]) -> f64 {
        match self {
            HKind::Quadratic { a } => {
                0.5 * a.iter().zip(p).map(|(&aj, &x)| aj * x * x).sum::<f64>()
            }
            HKind::Poly { terms } => poly_eval(terms, p),
        }
    }

    fn grad(&self, p: &[f64], out: &mut [f64]) {
        match self {
            HKind::Quadratic { a } => {
                for (o, (&aj, &x)) in out.iter_mut().zip(a.iter().zip(p)) {
                    *o = aj * x;
                }
            }
            HKind::Poly { terms } => poly_grad(terms, p, out),
        }
    }

    fn hess(&self, p: &[f64], out: &mut [Vec<f64>]) {
        match self {
            HKind::Quadratic { a } => {
                for (j, row) in out.iter_mut().enumerate() {
                    row.fill(0.0);
                    row[j] = a[j];
                }
            }
            HKind::Poly { terms } => poly_hess(terms, p, out),
        }
    }

    fn monomials(&self) -> Vec<PolyTerm> {
        match self {
            HKind::Quadratic { a } => a
                .iter()
                .enumerate()
                .filter(|(_, &aj)| aj != 0.0)
                .map(|(j, &aj)| {
                    let mut powers = vec![0u32; a.len()];
                    powers[j] = 2;
                    PolyTerm { powers, coeff: 0.5 * aj }
                })
                .collect(),
            HKind::Poly { terms } => terms.clone(),
        }
    }
}

fn validate(prob: &ClassicalProblem, omega: &[f64]) -> Result<(), EngineError> {
    let n = prob.n;
    if n == 0 {
        return Err(EngineError::BadInput("dimension must be at least 1".into()));
    }
    if omega.len() != n {
        return Err(EngineError::BadInput(format!(
            "frequency has {} entries, problem is {n}-dimensional",
            omega.len()
        )));
    }
    if !(prob.epsilon >= 0.0 && prob.epsilon.is_finite()) {
        return Err(EngineError::BadInput(format!("epsilon must be >= 0, got {}", prob.epsilon)));
    }
    for (name, v) in [("m_bound", prob.m_bound), ("f_bound", prob.f_bound)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(EngineError::BadInput(format!("{name} must be positive, got {v}")));
        }
    }
    if let Some(rd) = prob.r_domain {
        if !(rd > 0.0 && rd.is_finite()) {
            return Err(EngineError::BadInput(format!("r_domain must be positive, got {rd}")));
        }
    }
    let check_terms = |terms: &[PolyTerm], what: &str| -> Result<(), EngineError> {
        for t in terms {
            if t.powers.len() != n {
                return Err(EngineError::BadInput(format!(
                    "{what} monomial has {} exponents, expected {n}",
                    t.powers.len()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(EngineError::BadInput(format!("{what} coefficient not finite")));
            }
        }
        Ok(())
    };
    match &prob.h {
        HKind::Quadratic { a } => {
            if a.len() != n {
                return Err(EngineError::BadInput(format!(
                    "quadratic twist has {} entries, expected {n}",
                    a.len()
                )));
            }
            for &aj in a {
                if !(aj != 0.0 && aj.is_finite()) {
                    return Err(EngineError::BadInput(
                        "quadratic twist entries must be nonzero and finite".into(),
                    ));
                }
            }
        }
        HKind::Poly { terms } => check_terms(terms, "twist")?,
    }
    for mode in &prob.f {
        if mode.k.len() != n {
            return Err(EngineError::BadInput(format!(
                "forcing mode has {} frequency entries, expected {n}",
                mode.k.len()
            )));
        }
        check_terms(&mode.cos, "forcing")?;
        check_terms(&mode.sin, "forcing")?;
    }
    Ok(())
}

/// Action where the twist gradient equals omega. Closed form for the
/// quadratic twist, damped newton otherwise.
fn solve_action(h: &HKind, omega: &[f64]) -> Result<Vec<f64>, EngineError> {
    let n = omega.len();
    if let HKind::Quadratic { a } = h {
        return Ok(omega.iter().zip(a).map(|(&w, &aj)| w / aj).collect());
    }
    let scale = 1.0 + omega.iter().fold(0.0f64, |m, &w| m.max(w.abs()));
    let gap = |x: &[f64], g: &mut [f64]| {
        h.grad(x, g);
        for (gj, &wj) in g.iter_mut().zip(omega) {
            *gj -= wj;
        }
    };
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));

    let mut x = omega.to_vec();
    let mut g = vec![0.0; n];
    let mut hess = vec![vec![0.0; n]; n];
    gap(&x, &mut g);
    for _ in 0..60 {
        if inf(&g) <= 1e-13 * scale {
            return Ok(x);
        }
        h.hess(&x, &mut hess);
        let dx = solve_dense(&hess, &g)
            .ok_or_else(|| EngineError::NewtonFail("twist hessian is singular".into()))?;
        let g_old = inf(&g);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(&xi, &di)| xi - lambda * di).collect();
            gap(&trial, &mut g);
            if inf(&g) < g_old || lambda < 1e-10 {
                x = trial;
                break;
            }
            lambda *= 0.5;
        }
        if lambda < 1e-10 {
            break;
        }
    }
    if inf(&g) <= 1e-13 * scale {
        Ok(x)
    } else {
        Err(EngineError::NewtonFail(format!("twist frequency equation stalled at gap {}", inf(&g))))
    }
}

/// Re-expands coeff * p^e around p0 and adds every resulting I^m
/// coefficient into the accumulator.
fn shift_monomial(coeff: f64, powers: &[u32], p0: &[f64], out: &mut BTreeMap<Vec<u32>, f64>) {
    let n = powers.len();
    let mut m = vec![0u32; n];
    loop {
        let mut w = coeff;
        for j in 0..n {
            w *= binomial(powers[j] as u64, m[j] as u64) as f64
                * p0[j].powi((powers[j] - m[j]) as i32);
        }
        if w != 0.0 {
            *out.entry(m.clone()).or_insert(0.0) += w;
        }
        let mut j = n;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            if m[j] < powers[j] {
                m[j] += 1;
                for t in m.iter_mut().skip(j + 1) {
                    *t = 0;
                }
                break;
            }
            m[j] = 0;
        }
    }
}

fn shift_poly(terms: &[PolyTerm], p0: &[f64]) -> BTreeMap<Vec<u32>, f64> {
    let mut out = BTreeMap::new();
    for t in terms {
        shift_monomial(t.coeff, &t.powers, p0, &mut out);
    }
    out
}

fn forcing_eval(modes: &[FourierMode], p: &[f64], q: &[f64]) -> f64 {
    modes
        .iter()
        .map(|mode| {
            let phase: f64 = mode.k.iter().zip(q).map(|(&kj, &qj)| kj as f64 * qj).sum();
            poly_eval(&mode.cos, p) * phase.cos() + poly_eval(&mode.sin, p) * phase.sin()
        })
        .sum()
}

/// Expands H = h(p) + eps f(p, q) around the action p0 with twist
/// frequency omega. Returns the normal form at p0, the perturbation
/// series in (I, theta) = (p - p0, q), and the expansion radius
/// sqrt(f_bound eps / m_bound) capped by r_domain. The series is exact
/// up to rounding; a resample over random points guards the expansion.
pub fn setup_classical(
    prob: &ClassicalProblem,
    omega: &[f64],
) -> Result<(NormalForm, FTSeries, f64), EngineError> {
    validate(prob, omega)?;
    let n = prob.n;
    let p0 = solve_action(&prob.h, omega)?;
    let e0 = prob.h.value(&p0);

    // the twist hessian at p0 must be invertible and within the claimed
    // bound, or the frequency map cannot be steered
    let mut hess = vec![vec![0.0; n]; n];
    prob.h.hess(&p0, &mut hess);
    let max_entry = hess.iter().flatten().fold(0.0f64, |m, &x| m.max(x.abs()));
    if max_entry > prob.m_bound * (1.0 + 1e-9) {
        return Err(EngineError::BadInput(format!(
            "twist hessian entry {max_entry} exceeds m_bound = {}",
            prob.m_bound
        )));
    }
    if solve_dense(&hess, &vec![0.0; n]).is_none() {
        return Err(EngineError::BadInput("twist hessian is singular at p0".into()));
    }

    // coefficient accumulation; a map keyed by (m, k) because set_coeff
    // overwrites and distinct modes can land on the same canonical k
    let mut acc: BTreeMap<(Vec<u32>, Vec<i32>), C64> = BTreeMap::new();
    let k0 = vec![0i32; n];

    let mut twist = shift_poly(&prob.h.monomials(), &p0);
    twist.remove(&vec![0u32; n]); // absorbed into e0
    for j in 0..n {
        let mut unit = vec![0u32; n];
        unit[j] = 1;
        *twist.entry(unit).or_insert(0.0) -= omega[j];
    }
    let mut d_max = 0u32;
    let mut band = 0u32;
    for (m, w) in &twist {
        if *w == 0.0 {
            continue;
        }
        d_max = d_max.max(m.iter().sum());
        acc.insert((m.clone(), k0.clone()), C64::new(*w, 0.0));
    }

    if prob.epsilon > 0.0 {
        for mode in &prob.f {
            let k = FourierIndex(mode.k.clone());
            let (kc, sin_sign) = if k.is_canonical() { (k, 1.0) } else { (k.neg(), -1.0) };
            let gc = shift_poly(&mode.cos, &p0);
            let gs = shift_poly(&mode.sin, &p0);
            band = band.max(kc.l1());
            let mut keys: Vec<&Vec<u32>> = gc.keys().chain(gs.keys()).collect();
            keys.sort();
            keys.dedup();
            for m in keys {
                let a = gc.get(m).copied().unwrap_or(0.0);
                let b = gs.get(m).copied().unwrap_or(0.0) * sin_sign;
                let add = if kc.is_zero() {
                    C64::new(prob.epsilon * a, 0.0) // sin<0, q> = 0
                } else {
                    C64::new(prob.epsilon * a / 2.0, -prob.epsilon * b / 2.0)
                };
                if add == C64::new(0.0, 0.0) {
                    continue;
                }
                d_max = d_max.max(m.iter().sum());
                let slot = acc.entry((m.clone(), kc.0.clone())).or_insert(C64::new(0.0, 0.0));
                *slot += add;
            }
        }
    }

    let mut series = FTSeries::new(n, d_max.max(1), band.max(1));
    for ((m, k), c) in acc {
        if c != C64::new(0.0, 0.0) {
            series.set_coeff(ActionDegree(m), FourierIndex(k), c)?;
        }
    }

    let r_auto = if prob.epsilon > 0.0 {
        let r = (prob.f_bound * prob.epsilon / prob.m_bound).sqrt();
        match prob.r_domain {
            Some(rd) => r.min(rd),
            None => r,
        }
    } else {
        prob.r_domain.unwrap_or(0.1)
    };

    // resample guard: the expansion is exact, so any disagreement beyond
    // rounding means the input was mis-assembled
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let r_eval = r_auto.min(1.0);
    for _ in 0..20 {
        let i_pt: Vec<f64> = (0..n).map(|_| rng.gen_range(-r_eval..=r_eval)).collect();
        let th_pt: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let p_pt: Vec<f64> = p0.iter().zip(&i_pt).map(|(&a, &b)| a + b).collect();
        let lin: f64 = omega.iter().zip(&i_pt).map(|(&w, &x)| w * x).sum();
        let direct =
            prob.h.value(&p_pt) - e0 - lin + prob.epsilon * forcing_eval(&prob.f, &p_pt, &th_pt);
        let fitted = series.eval_real(&i_pt, &th_pt);
        let diff = (direct - fitted).abs();
        let tol = 1e-9 * (1.0 + direct.abs());
        if diff > tol {
            return Err(EngineError::SpectralAliasing { diff, tol });
        }
    }

    Ok((NormalForm::new(e0, omega.to_vec()), series, r_auto))
}

/// Forcing strength below which the entry condition is guaranteed at
/// radius sqrt(f_bound eps / m_bound): eps ≤ gamma^2 alpha^2 s^(2 nu)
/// / (4 f_bound m_bound).
pub fn epsilon_threshold(prob: &ClassicalProblem, alpha: f64, s: f64, nu: f64, gamma: f64) -> f64 {
    gamma * gamma * alpha * alpha * s.powf(2.0 * nu) / (4.0 * prob.f_bound * prob.m_bound)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTrial {
    pub eps: f64,
    pub converged: bool,
    pub iterations: usize,
    /// torus defect reached, absent when the run aborted
    pub residual: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    /// largest grid point that still converged; 0 when none did
    pub eps_max: f64,
    pub threshold: f64,
    pub trials: Vec<SweepTrial>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// least-squares slope of ln eps_max against ln alpha
    pub slope: Option<f64>,
}

/// Bisects each alpha over the forcing grid for the largest strength the
/// iteration still certifies, and fits the scaling exponent across
/// alphas. Aborted runs count as failures; structural errors propagate.
pub fn sweep(
    prob: &ClassicalProblem,
    omega: &[f64],
    alpha_list: &[f64],
    eps_grid: &[f64],
    sp_base: &ScheduleParams,
    cfg: &RunConfig,
) -> Result<SweepTable, EngineError> {
    if alpha_list.is_empty() || eps_grid.is_empty() {
        return Err(EngineError::BadInput("alpha list and eps grid must be nonempty".into()));
    }
    if eps_grid.windows(2).any(|w| w[0] >= w[1]) || eps_grid[0] < 0.0 {
        return Err(EngineError::BadInput("eps grid must be strictly increasing and >= 0".into()));
    }
    let nu = sp_base.tau + 1.0;

    let mut rows = Vec::with_capacity(alpha_list.len());
    for &alpha in alpha_list {
        let mut trials: Vec<SweepTrial> = Vec::new();
        let mut try_eps = |eps: f64| -> Result<bool, EngineError> {
            let mut pr = prob.clone();
            pr.epsilon = eps;
            let (n0, p0, r_auto) = setup_classical(&pr, omega)?;
            let mut sp = sp_base.clone();
            sp.n = prob.n;
            sp.alpha = alpha;
            sp.r0 = r_auto;
            let sched = build_schedule(&sp)?;
            match iterate(&n0, &p0, &sched, cfg) {
                Ok(res) => {
                    trials.push(SweepTrial {
                        eps,
                        converged: true,
                        iterations: res.iterations,
                        residual: Some(res.residual),
                    });
                    Ok(true)
                }
                Err(
                    EngineError::NoConvergence { .. }
                    | EngineError::PreconditionViolated { .. }
                    | EngineError::Step(_),
                ) => {
                    trials.push(SweepTrial {
                        eps,
                        converged: false,
                        iterations: 0,
                        residual: None,
                    });
                    Ok(false)
                }
                Err(e) => Err(e),
            }
        };

        let mut lo: isize = -1;
        let mut hi: isize = eps_grid.len() as isize;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if try_eps(eps_grid[mid as usize])? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let eps_max = if lo >= 0 { eps_grid[lo as usize] } else { 0.0 };
        trials.sort_by(|a, b| a.eps.total_cmp(&b.eps));
        rows.push(SweepRow {
            alpha,
            eps_max,
            threshold: epsilon_threshold(prob, alpha, sp_base.s0, nu, cfg.gamma),
            trials,
        });
    }

    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.eps_max > 0.0).map(|r| (r.alpha.ln(), r.eps_max.ln())).collect();
    let slope = if pts.len() >= 2 {
        let xm = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let ym = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxx: f64 = pts.iter().map(|p| (p.0 - xm) * (p.0 - xm)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
        if sxx > 0.0 {
            Some(sxy / sxx)
        } else {
            None
        }
    } else {
        None
    };
    Ok(SweepTable { rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tests::golden_schedule_params;
    use crate::fixtures as fx;
    use approx::assert_abs_diff_eq;

    fn pendulum_like(eps: f64) -> ClassicalProblem {
        ClassicalProblem {
            n: 2,
            h: HKind::Quadratic { a: vec![1.0, 1.0] },
            f: vec![FourierMode {
                k: vec![1, 0],
                cos: vec![PolyTerm { powers: vec![0, 0], coeff: 1.0 }],
                sin: vec![],
            }],
            epsilon: eps,
            r_domain: None,
            m_bound: 1.0,
            f_bound: 1.0,
        }
    }

    #[test]
    fn quadratic_setup_is_exact() {
        let eps = 1e-5;
        let prob = pendulum_like(eps);
        let omega = fx::golden_omega();
        let (n0, p, r_auto) = setup_classical(&prob, &omega).unwrap();
        assert_eq!(n0.omega, omega);
        let e0 = 0.5 * (omega[0] * omega[0] + omega[1] * omega[1]);
        assert_abs_diff_eq!(n0.e, e0, epsilon = 1e-15);
        assert_abs_diff_eq!(r_auto, eps.sqrt(), epsilon = 1e-18);

        // exactly (1/2)|I|^2 + eps cos theta_1: a_j p0_j - omega_j = 0 here
        let m2 = |a, b| ActionDegree(vec![a, b]);
        let kz = FourierIndex(vec![0, 0]);
        assert_eq!(p.coeff(&m2(2, 0), &kz), C64::new(0.5, 0.0));
        assert_eq!(p.coeff(&m2(0, 2), &kz), C64::new(0.5, 0.0));
        assert_eq!(p.coeff(&m2(1, 0), &kz), C64::new(0.0, 0.0));
        assert_eq!(p.coeff(&m2(0, 1), &kz), C64::new(0.0, 0.0));
        assert_eq!(p.coeff(&m2(0, 0), &FourierIndex(vec![1, 0])), C64::new(eps / 2.0, 0.0));
        assert_eq!(p.len(), 4); // two squares, one mirror pair
    }

    #[test]
    fn epsilon_zero_gives_pure_twist() {
        let prob = pendulum_like(0.0);
        let omega = fx::golden_omega();
        let (_, p, r_auto) = setup_classical(&prob, &omega).unwrap();
        assert_abs_diff_eq!(r_auto, 0.1, epsilon = 1e-18);
        assert_eq!(p.len(), 2);
        for (m, k, c) in p.iter() {
            assert_eq!(m.total(), 2);
            assert!(k.is_zero());
            assert_eq!(c, C64::new(0.5, 0.0));
        }
    }

    #[test]
    fn cubic_twist_newton_matches_gradient() {
        let prob = ClassicalProblem {
            n: 2,
            h: HKind::Poly {
                terms: vec![
                    PolyTerm { powers: vec![2, 0], coeff: 0.5 },
                    PolyTerm { powers: vec![0, 2], coeff: 0.5 },
                    PolyTerm { powers: vec![3, 0], coeff: 0.1 },
                ],
            },
            f: vec![],
            epsilon: 0.0,
            r_domain: Some(0.05),
            m_bound: 2.0,
            f_bound: 1.0,
        };
        let omega = [0.9, 0.6];
        let (n0, p, r_auto) = setup_classical(&prob, &omega).unwrap();
        assert_abs_diff_eq!(r_auto, 0.05, epsilon = 1e-18);

        // p0 solves p + 0.3 p^2 = 0.9 in the first slot
        let p01 = (-1.0 + 2.08f64.sqrt()) / 0.6;
        assert_abs_diff_eq!(
            n0.e,
            0.5 * p01 * p01 + 0.5 * 0.36 + 0.1 * p01.powi(3),
            epsilon = 1e-12
        );

        // quadratic coefficient carries half the local hessian
        let c20 = p.coeff(&ActionDegree(vec![2, 0]), &FourierIndex(vec![0, 0]));
        assert_abs_diff_eq!(c20.re, 0.5 * (1.0 + 0.6 * p01), epsilon = 1e-12);
        // the linear jet is zero up to the newton stop
        for j in 0..2 {
            let c = p.coeff(&ActionDegree::unit(2, j), &FourierIndex(vec![0, 0]));
            assert!(c.norm() < 1e-12);
        }
        let c30 = p.coeff(&ActionDegree(vec![3, 0]), &FourierIndex(vec![0, 0]));
        assert_abs_diff_eq!(c30.re, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn forcing_modes_merge_on_the_canonical_index() {
        let prob = ClassicalProblem {
            n: 2,
            h: HKind::Quadratic { a: vec![1.0, 1.0] },
            f: vec![
                FourierMode {
                    k: vec![-1, 0],
                    cos: vec![PolyTerm { powers: vec![0, 0], coeff: 2.0 }],
                    sin: vec![],
                },
                FourierMode {
                    k: vec![1, 0],
                    cos: vec![],
                    sin: vec![PolyTerm { powers: vec![0, 0], coeff: 3.0 }],
                },
            ],
            epsilon: 1.0,
            r_domain: Some(0.1),
            m_bound: 1.0,
            f_bound: 5.0,
        };
        let omega = fx::golden_omega();
        let (_, p, _) = setup_classical(&prob, &omega).unwrap();
        let c = p.coeff(&ActionDegree(vec![0, 0]), &FourierIndex(vec![1, 0]));
        // cos at flipped index keeps its sign, sin flips
        assert_abs_diff_eq!(c.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.im, -1.5, epsilon = 1e-15);
        let cm = p.coeff(&ActionDegree(vec![0, 0]), &FourierIndex(vec![-1, 0]));
        assert_eq!(cm, c.conj());
    }

    #[test]
    fn degenerate_twist_is_rejected() {
        let mut prob = pendulum_like(1e-5);
        prob.h = HKind::Quadratic { a: vec![1.0, 0.0] };
        assert!(matches!(
            setup_classical(&prob, &fx::golden_omega()),
            Err(EngineError::BadInput(_))
        ));

        let prob2 = ClassicalProblem {
            n: 2,
            h: HKind::Poly { terms: vec![PolyTerm { powers: vec![2, 0], coeff: 0.5 }] },
            f: vec![],
            epsilon: 0.0,
            r_domain: None,
            m_bound: 1.0,
            f_bound: 1.0,
        };
        assert!(matches!(
            setup_classical(&prob2, &fx::golden_omega()),
            Err(EngineError::NewtonFail(_))
        ));
    }

    #[test]
    fn hessian_exceeding_the_claimed_bound_is_rejected() {
        let mut prob = pendulum_like(1e-5);
        prob.h = HKind::Quadratic { a: vec![3.0, 1.0] };
        assert!(matches!(
            setup_classical(&prob, &fx::golden_omega()),
            Err(EngineError::BadInput(_))
        ));
    }

    #[test]
    fn threshold_formula() {
        let prob = pendulum_like(1e-5);
        let t = epsilon_threshold(&prob, 0.1, 1.0, 2.2, 0.15);
        assert_abs_diff_eq!(t, 0.15 * 0.15 * 0.01 / 4.0, epsilon = 1e-18);
    }

    #[test]
    fn sweep_bisects_the_grid() {
        let prob = pendulum_like(0.0);
        let omega = fx::golden_omega();
        let sp = golden_schedule_params();
        let cfg = RunConfig::default();
        let grid = [1e-6, 1e-5, 1e-4];
        let table = sweep(&prob, &omega, &[sp.alpha], &grid, &sp, &cfg).unwrap();
        assert_eq!(table.rows.len(), 1);
        let row = &table.rows[0];
        // 1e-5 converges, 1e-4 overshoots the entry cap
        assert_abs_diff_eq!(row.eps_max, 1e-5, epsilon = 1e-18);
        assert_eq!(row.trials.len(), 2);
        assert!(row.trials[0].converged && !row.trials[1].converged);
        assert!(row.trials[0].residual.unwrap() <= cfg.residual_stop);
        assert!(row.threshold > 0.0);
        assert!(table.slope.is_none());
    }
}
