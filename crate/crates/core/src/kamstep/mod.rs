//! One transformation step: cut the perturbation down to its affine band
//! part, solve the linearized equation for a generator, push the
//! Hamiltonian through the generator's time-1 flow, and collect what is
//! left as the new, smaller perturbation.

pub mod flow;

use crate::analysis;
use crate::homological::{self, HomologicalError};
use crate::series::{
    multiply, poisson, ActionDegree, DomainSpec, FTSeries, FourierIndex, NormalForm, SeriesError,
};
use crate::smalldiv::{DiophantineParams, SmallDivError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("bad step parameters: {0}")]
    BadParams(String),
    #[error("step conditions violated: smallness {} shift {} cutoff {}",
        .0.smallness.ok, .0.shift.ok, .0.cutoff.ok)]
    ConditionViolation(Box<StepConditions>),
    #[error(
        "generator series did not settle: order {order}, last term {last_norm}, ratio {ratio:?}"
    )]
    LieDivergence { order: u32, last_norm: f64, ratio: Option<f64> },
    #[error(transparent)]
    Homological(#[from] HomologicalError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    SmallDiv(#[from] SmallDivError),
}

/// Geometry and constants for one step on the domain |I| < r,
/// |Im theta| < s, |omega' - omega| < h. sigma is the strip loss per
/// stage (the step spends 5 sigma), eta the action shrink factor, k_cut
/// the band kept for the generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepParams {
    pub r: f64,
    pub s: f64,
    pub h: f64,
    pub sigma: f64,
    pub eta: f64,
    pub k_cut: u32,
    pub alpha: f64,
    pub tau: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub divisor_factor: f64,
}

impl StepParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        r: f64,
        s: f64,
        h: f64,
        sigma: f64,
        eta: f64,
        k_cut: u32,
        alpha: f64,
        tau: f64,
    ) -> Result<Self, StepError> {
        let p = StepParams {
            r,
            s,
            h,
            sigma,
            eta,
            k_cut,
            alpha,
            tau,
            c_a: 1.0,
            c_b: 1.0,
            divisor_factor: 0.5,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_constants(
        mut self,
        c_a: f64,
        c_b: f64,
        divisor_factor: f64,
    ) -> Result<Self, StepError> {
        self.c_a = c_a;
        self.c_b = c_b;
        self.divisor_factor = divisor_factor;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), StepError> {
        let bad = |msg: String| Err(StepError::BadParams(msg));
        for (name, v) in [("r", self.r), ("s", self.s), ("h", self.h), ("alpha", self.alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.eta > 0.0 && self.eta < 0.125) {
            return bad(format!("eta must lie in (0, 1/8), got {}", self.eta));
        }
        if !(self.sigma > 0.0 && 5.0 * self.sigma < self.s) {
            return bad(format!("need 0 < 5 sigma < s, got sigma = {} s = {}", self.sigma, self.s));
        }
        if self.k_cut == 0 {
            return bad("k_cut must be at least 1".into());
        }
        if (self.k_cut as f64) * self.sigma < 1.0 {
            return bad(format!(
                "K sigma = {} < 1; the band tail bound needs K sigma >= 1",
                self.k_cut as f64 * self.sigma
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.c_a > 0.0 && self.c_b > 0.0) {
            return bad("c_a and c_b must be positive".into());
        }
        if !(self.divisor_factor > 0.0 && self.divisor_factor <= 1.0) {
            return bad(format!("divisor_factor must lie in (0, 1], got {}", self.divisor_factor));
        }
        Ok(())
    }

    pub fn nu(&self) -> f64 {
        self.tau + 1.0
    }

    pub fn domain(&self) -> DomainSpec {
        DomainSpec { r: self.r, s: self.s, h: self.h }
    }

    /// Domain the step's output lives on.
    pub fn shrunk_domain(&self) -> DomainSpec {
        DomainSpec { r: self.eta * self.r, s: self.s - 5.0 * self.sigma, h: self.h / 4.0 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

fn check(lhs: f64, rhs: f64) -> ConditionCheck {
    ConditionCheck { lhs, rhs, ok: lhs <= rhs }
}

/// The three entry conditions of a step, with the compared numbers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepConditions {
    /// eps <= c_a alpha eta r sigma^nu
    pub smallness: ConditionCheck,
    /// eps <= c_b h r
    pub shift: ConditionCheck,
    /// h <= alpha / (2 K^nu)
    pub cutoff: ConditionCheck,
    pub ok: bool,
}

pub fn check_step_conditions(p: &StepParams, eps: f64) -> StepConditions {
    let nu = p.nu();
    let smallness = check(eps, p.c_a * p.alpha * p.eta * p.r * p.sigma.powf(nu));
    let shift = check(eps, p.c_b * p.h * p.r);
    let cutoff = check(p.h, p.alpha / (2.0 * (p.k_cut as f64).powf(nu)));
    let ok = smallness.ok && shift.ok && cutoff.ok;
    StepConditions { smallness, shift, cutoff, ok }
}

/// Sizes of the two parts dropped when passing from P to the affine
/// band-limited R, with the a priori caps they must stay under.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruncationReport {
    pub eps_in: f64,
    /// |P - Q| on the doubled shrunk action radius 2 eta r
    pub jet_tail: f64,
    /// 4 eta^2 eps_in
    pub jet_tail_bound: f64,
    /// |Q - R| after losing one sigma of strip
    pub band_tail: f64,
    /// C(n) K^n e^(-K sigma) |Q|
    pub band_tail_bound: f64,
}

/// Splits P into the affine action jet Q, the band-limited R used for the
/// generator, and measures both discarded tails against their caps.
pub fn truncate_perturbation(
    p_series: &FTSeries,
    p: &StepParams,
) -> Result<(FTSeries, FTSeries, TruncationReport), StepError> {
    let n = p_series.dim();
    let dom = p.domain();
    let eps_in = p_series.majorant_norm(&dom);
    let (q, jet) = p_series.truncate_taylor(1);
    let (r, band) = q.truncate_fourier(p.k_cut);
    let jet_dom = DomainSpec { r: 2.0 * p.eta * p.r, s: p.s, h: p.h };
    let jet_tail = jet.majorant_norm(&jet_dom);
    let band_dom = DomainSpec { r: p.r, s: p.s - p.sigma, h: p.h };
    let band_tail = band.majorant_norm(&band_dom);
    let q_norm = q.majorant_norm(&dom);
    let band_tail_bound = analysis::truncation_bound(q_norm, p.k_cut, p.sigma, n)?;
    let report = TruncationReport {
        eps_in,
        jet_tail,
        jet_tail_bound: 4.0 * p.eta * p.eta * eps_in,
        band_tail,
        band_tail_bound,
    };
    Ok((q, r, report))
}

/// Working caps for repeated bracket sums: terms are truncated to degree
/// d_out and band k_out after every bracket, and norms for the stopping
/// rule are taken on dom.
#[derive(Clone, Debug)]
pub struct LieParams {
    pub max_order: u32,
    /// relative term tolerance; the absolute cutoff is tol * max(1, |g0|)
    pub tol: f64,
    pub d_out: u32,
    pub k_out: u32,
    pub dom: DomainSpec,
}

struct BracketSum {
    sum: FTSeries,
    /// geometric estimate of the dropped orders plus truncation discards
    tail: f64,
    orders: u32,
}

/// sum_{idx >= start} weight(idx) ad^idx(g0), where ad g = {g, F}.
/// Stops when a weighted term's norm falls under tol and the last ratio
/// shows decay, or when a term vanishes identically.
fn weighted_bracket_sum(
    g0: &FTSeries,
    f: &FTSeries,
    start: u32,
    weight: &dyn Fn(u32) -> f64,
    lp: &LieParams,
) -> Result<BracketSum, StepError> {
    let n = g0.dim();
    let d_sum = g0.d_max().max(lp.d_out);
    let k_sum = g0.k_max().max(lp.k_out);
    let mut sum = FTSeries::new(n, d_sum, k_sum);
    let mut g = g0.clone();
    let mut discarded = 0.0f64;
    let mut prev_norm: Option<f64> = None;
    let tol_abs = lp.tol * g0.majorant_norm(&lp.dom).max(1.0);
    let mut idx = 0u32;
    loop {
        if idx >= start {
            let w = weight(idx);
            let term = g.scale(w);
            let norm = term.majorant_norm(&lp.dom);
            if !norm.is_finite() {
                return Err(StepError::LieDivergence { order: idx, last_norm: norm, ratio: None });
            }
            sum = sum.add(&term)?;
            if norm == 0.0 {
                return Ok(BracketSum { sum, tail: discarded, orders: idx });
            }
            if norm < tol_abs {
                if let Some(prev) = prev_norm {
                    let rho = norm / prev;
                    if rho < 0.5 {
                        let tail = norm * rho / (1.0 - rho) + discarded;
                        return Ok(BracketSum { sum, tail, orders: idx });
                    }
                }
            }
            prev_norm = Some(norm);
        }
        if idx >= lp.max_order {
            return Err(StepError::LieDivergence {
                order: idx,
                last_norm: prev_norm.unwrap_or(f64::NAN),
                ratio: None,
            });
        }
        let (next, cut) = poisson(&g, f, lp.d_out, lp.k_out, &lp.dom)?;
        discarded += cut;
        g = next;
        idx += 1;
    }
}

fn inv_factorial(l: u32) -> f64 {
    let mut acc = 1.0f64;
    for i in 1..=l {
        acc /= i as f64;
    }
    acc
}

/// Pushes H = N + P through the time-1 flow of the generator F:
/// sum_l ad^l(N + P) / l!. Returns the transformed series and an estimate
/// of everything dropped (orders past the stop plus truncation discards).
pub fn lie_transform(
    nf: &NormalForm,
    p: &FTSeries,
    f: &FTSeries,
    lp: &LieParams,
) -> Result<(FTSeries, f64), StepError> {
    let h0 = nf.to_series(p.d_max().max(1), p.k_max()).add(p)?;
    let b = weighted_bracket_sum(&h0, f, 0, &|l| inv_factorial(l), lp)?;
    Ok((b.sum, b.tail))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NewErrorReport {
    /// majorant of the new perturbation on the shrunk domain
    pub eps_out: f64,
    /// cap: C (eps^2 / (alpha r sigma^nu) + (eta^2 + K^n e^(-K sigma)) eps)
    pub bound: f64,
    pub within: bool,
    /// stop orders of the three bracket chains
    pub lie_orders: [u32; 3],
    /// dropped-order estimates plus truncation discards, summed
    pub tail: f64,
    /// measured |P - Q| entering the eta^2 part of the cap
    pub jet_tail: f64,
}

/// Everything the transformed Hamiltonian keeps beyond the new normal
/// form:
///   sum_{m>=1} (ad^m N_hat + m ad^m R) / (m+1)! + sum_{l>=0} ad^l(P - R) / l!
pub fn new_error(
    p_series: &FTSeries,
    q: &FTSeries,
    r: &FTSeries,
    n_hat: &FTSeries,
    f: &FTSeries,
    p: &StepParams,
    lp: &LieParams,
) -> Result<(FTSeries, NewErrorReport), StepError> {
    let n = p_series.dim();
    let eps = p_series.majorant_norm(&p.domain());
    let c1 = weighted_bracket_sum(n_hat, f, 1, &|m| inv_factorial(m + 1), lp)?;
    let c2 = weighted_bracket_sum(r, f, 1, &|m| m as f64 * inv_factorial(m + 1), lp)?;
    let rest = p_series.add(&r.scale(-1.0))?;
    let c3 = weighted_bracket_sum(&rest, f, 0, &|l| inv_factorial(l), lp)?;
    let p_plus = c1.sum.add(&c2.sum)?.add(&c3.sum)?;

    let shrunk = p.shrunk_domain();
    let eps_out = p_plus.majorant_norm(&shrunk);
    let nu = p.nu();
    let kf = p.k_cut as f64;
    let geom = p.eta * p.eta + kf.powi(n as i32) * (-kf * p.sigma).exp();
    let bound =
        crate::fixtures::NEWERR_C * (eps * eps / (p.alpha * p.r * p.sigma.powf(nu)) + geom * eps);
    let jet_dom = DomainSpec { r: 2.0 * p.eta * p.r, s: p.s, h: p.h };
    let jet_tail = p_series.add(&q.scale(-1.0))?.majorant_norm(&jet_dom);
    let report = NewErrorReport {
        eps_out,
        bound,
        within: eps_out <= bound,
        lie_orders: [c1.orders, c2.orders, c3.orders],
        tail: c1.tail + c2.tail + c3.tail,
        jet_tail,
    };
    Ok((p_plus, report))
}

/// What a step did to the coordinates: the generator whose time-1 flow
/// is the transformation, and the frequency shift absorbed into the
/// normal form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformRecord {
    pub f_gen: FTSeries,
    pub v_shift: Vec<f64>,
    pub e_shift: f64,
    pub lie_orders: [u32; 3],
    pub discarded: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepReport {
    pub eps_in: f64,
    pub eps_out: f64,
    pub e_in: f64,
    pub e_out: f64,
    pub omega_in: Vec<f64>,
    pub omega_out: Vec<f64>,
    pub shift_norm: f64,
    pub conditions: StepConditions,
    pub min_divisor: f64,
    pub used_threshold: f64,
    pub truncation: Option<TruncationReport>,
    pub new_error: Option<NewErrorReport>,
    /// true when the entry conditions failed but the step ran anyway
    pub forced: bool,
}

#[derive(Clone, Debug)]
pub struct StepOptions {
    pub force: bool,
    pub max_order: u32,
    pub tol: f64,
    pub k_out_factor: u32,
    /// working degree cap; the perturbation's own degree when absent
    pub d_out: Option<u32>,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            force: false,
            max_order: crate::fixtures::LIE_MAX_ORDER,
            tol: crate::fixtures::LIE_TOL_REL,
            k_out_factor: crate::fixtures::K_OUT_FACTOR,
            d_out: None,
        }
    }
}

/// One full step: N + P becomes N' + P' on the shrunk domain, where
/// N' absorbs the mean and the frequency shift and P' is quadratically
/// small in P. The returned record is enough to replay the coordinate
/// change.
pub fn apply_step(
    n: &NormalForm,
    p_series: &FTSeries,
    p: &StepParams,
    opts: &StepOptions,
) -> Result<(NormalForm, FTSeries, TransformRecord, StepReport), StepError> {
    let dim = n.dim();
    if p_series.dim() != dim {
        return Err(StepError::BadParams(format!(
            "dimension mismatch: normal form {dim}, perturbation {}",
            p_series.dim()
        )));
    }
    let dom = p.domain();
    let eps_in = p_series.majorant_norm(&dom);
    let conditions = check_step_conditions(p, eps_in);
    if !conditions.ok && !opts.force {
        return Err(StepError::ConditionViolation(Box::new(conditions)));
    }
    let forced = !conditions.ok;

    if p_series.is_zero() {
        let rec = TransformRecord {
            f_gen: FTSeries::new(dim, 1, 1),
            v_shift: vec![0.0; dim],
            e_shift: 0.0,
            lie_orders: [0, 0, 0],
            discarded: 0.0,
        };
        let rep = StepReport {
            eps_in: 0.0,
            eps_out: 0.0,
            e_in: n.e,
            e_out: n.e,
            omega_in: n.omega.clone(),
            omega_out: n.omega.clone(),
            shift_norm: 0.0,
            conditions,
            min_divisor: f64::INFINITY,
            used_threshold: 0.0,
            truncation: None,
            new_error: None,
            forced,
        };
        return Ok((n.clone(), FTSeries::new(dim, p_series.d_max(), 1), rec, rep));
    }

    let (q, r, trunc) = truncate_perturbation(p_series, p)?;
    let dioph = DiophantineParams::new(dim, p.alpha, p.tau)?;
    let sol = homological::solve(&r, &n.omega, &dioph, p.divisor_factor)?;

    let zero_m = ActionDegree::zero(dim);
    let zero_k = FourierIndex::zero(dim);
    let e_shift = sol.n_hat.coeff(&zero_m, &zero_k).re;
    let v: Vec<f64> =
        (0..dim).map(|j| sol.n_hat.coeff(&ActionDegree::unit(dim, j), &zero_k).re).collect();
    let omega_out: Vec<f64> = n.omega.iter().zip(&v).map(|(w, vi)| w + vi).collect();
    let n_plus = NormalForm::new(n.e + e_shift, omega_out.clone());

    let lp = LieParams {
        max_order: opts.max_order,
        tol: opts.tol,
        d_out: opts.d_out.unwrap_or_else(|| p_series.d_max().max(2)),
        k_out: p.k_cut.saturating_mul(opts.k_out_factor).max(p_series.k_max()),
        dom,
    };
    let (p_plus, ne) = new_error(p_series, &q, &r, &sol.n_hat, &sol.f, p, &lp)?;

    let shift_norm = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let rec = TransformRecord {
        f_gen: sol.f,
        v_shift: v,
        e_shift,
        lie_orders: ne.lie_orders,
        discarded: ne.tail,
    };
    let rep = StepReport {
        eps_in,
        eps_out: ne.eps_out,
        e_in: n.e,
        e_out: n_plus.e,
        omega_in: n.omega.clone(),
        omega_out,
        shift_norm,
        conditions,
        min_divisor: sol.min_divisor,
        used_threshold: sol.used_threshold,
        truncation: Some(trunc),
        new_error: Some(ne),
        forced,
    };
    Ok((n_plus, p_plus, rec, rep))
}

/// Product helper for tests and diagnostics: (a b) with the step's
/// working caps.
pub fn product(a: &FTSeries, b: &FTSeries, lp: &LieParams) -> Result<(FTSeries, f64), StepError> {
    Ok(multiply(a, b, lp.d_out, lp.k_out, &lp.dom)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    fn golden_step_params() -> StepParams {
        let alpha = fixtures::GOLDEN_ALPHA_MAX / fixtures::ALPHA_SAFETY;
        StepParams::new(0.1, 1.0, 6.7e-8, 0.05, 0.1118, 400, alpha, fixtures::GOLDEN_TAU)
            .unwrap()
            .with_constants(fixtures::C_A, fixtures::C_B, fixtures::DIVISOR_FACTOR)
            .unwrap()
    }

    fn lie_params(p: &StepParams, d_out: u32) -> LieParams {
        LieParams {
            max_order: fixtures::LIE_MAX_ORDER,
            tol: fixtures::LIE_TOL_REL,
            d_out,
            k_out: p.k_cut * fixtures::K_OUT_FACTOR,
            dom: p.domain(),
        }
    }

    #[test]
    fn params_validation() {
        assert!(StepParams::new(0.1, 1.0, 0.01, 0.05, 0.2, 40, 0.1, 1.2).is_err()); // eta
        assert!(StepParams::new(0.1, 1.0, 0.01, 0.25, 0.1, 40, 0.1, 1.2).is_err()); // 5 sigma
        assert!(StepParams::new(0.1, 1.0, 0.01, 0.05, 0.1, 10, 0.1, 1.2).is_err()); // K sigma
        assert!(StepParams::new(0.1, 1.0, 0.01, 0.05, 0.1, 40, 0.1, 1.2).is_ok());
    }

    #[test]
    fn conditions_arithmetic() {
        let p = StepParams::new(0.1, 1.0, 0.01, 0.05, 0.1, 40, 0.08, 1.2).unwrap();
        let nu = 2.2f64;
        let cap_a = 0.08 * 0.1 * 0.1 * 0.05f64.powf(nu);
        let c = check_step_conditions(&p, cap_a * 0.9);
        assert!(c.smallness.ok);
        assert_abs_diff_eq!(c.smallness.rhs, cap_a, epsilon = 1e-18);
        let c = check_step_conditions(&p, cap_a * 1.1);
        assert!(!c.smallness.ok && !c.ok);
        // shift: eps <= h r = 1e-3
        let c = check_step_conditions(&p, 2e-3);
        assert!(!c.shift.ok);
        // cutoff is independent of eps
        assert_eq!(c.cutoff.ok, 0.01 <= 0.08 / (2.0 * 40f64.powf(nu)));
    }

    #[test]
    fn truncation_splits_and_caps() {
        let p = golden_step_params();
        let n = 2;
        let mut pert = FTSeries::new(n, 2, 3);
        // band part within the cut, an affine piece, and a quadratic piece
        pert = pert.add(&FTSeries::cos_mode(n, &[0, 0], &[1, 0], 1e-5)).unwrap();
        pert = pert.add(&FTSeries::cos_mode(n, &[1, 0], &[1, 1], 3e-6)).unwrap();
        pert = pert.add(&FTSeries::cos_mode(n, &[2, 0], &[0, 1], 2e-4)).unwrap();
        pert = pert.add(&FTSeries::cos_mode(n, &[1, 1], &[0, 0], 5e-4)).unwrap();
        let (q, r, rep) = truncate_perturbation(&pert, &p).unwrap();
        assert_eq!(q.support_degree(), 1);
        assert!(r.support_band() <= p.k_cut);
        // reassembly is exact: P = Q + jet tail, Q = R + band tail
        let (_, jet) = pert.truncate_taylor(1);
        let back = q.add(&jet).unwrap();
        assert_eq!(back, pert);
        // the quadratic pieces carry degree 2 exactly, so the jet tail
        // equals (2 eta)^2 times its weight at full radius
        let jet_full = jet.majorant_norm(&DomainSpec { r: p.r, s: p.s, h: p.h });
        assert_abs_diff_eq!(rep.jet_tail, 4.0 * p.eta * p.eta * jet_full, epsilon = 1e-18);
        assert!(rep.jet_tail <= rep.jet_tail_bound);
        // everything here is inside the band, so no band tail
        assert_eq!(rep.band_tail, 0.0);
        assert!(rep.band_tail <= rep.band_tail_bound);
    }

    #[test]
    fn band_tail_within_cap() {
        // K sigma = 1 boundary with a slowly decaying band
        let p = StepParams::new(0.1, 1.0, 0.01, 0.05, 0.1, 20, 0.08, 1.2).unwrap();
        let n = 2;
        let mut pert = FTSeries::new(n, 0, 40);
        for l in 1..=40i32 {
            pert = pert
                .add(&FTSeries::cos_mode(n, &[0, 0], &[l, 0], (-0.97 * l as f64).exp()))
                .unwrap();
        }
        let (_, _, rep) = truncate_perturbation(&pert, &p).unwrap();
        assert!(rep.band_tail > 0.0);
        assert!(
            rep.band_tail <= rep.band_tail_bound,
            "{} > {}",
            rep.band_tail,
            rep.band_tail_bound
        );
    }

    #[test]
    fn lie_transform_terminating_series_is_exact() {
        // F = cos th1 is action free, so ad^2 vanishes identically:
        // e^{ad}(N) = N - d_omega F = N + w1 sin th1
        let omega = vec![1.3, 0.7];
        let nf = NormalForm::new(0.2, omega.clone());
        let f = FTSeries::cos_mode(2, &[0, 0], &[1, 0], 0.4);
        let p0 = FTSeries::new(2, 1, 4);
        let lp = LieParams {
            max_order: 10,
            tol: 1e-14,
            d_out: 1,
            k_out: 4,
            dom: DomainSpec { r: 0.5, s: 0.5, h: 0.1 },
        };
        let (out, tail) = lie_transform(&nf, &p0, &f, &lp).unwrap();
        let expect = nf
            .to_series(1, 4)
            .add(&FTSeries::sin_mode(2, &[0, 0], &[1, 0], 0.4 * omega[0]))
            .unwrap();
        let diff = out.add(&expect.scale(-1.0)).unwrap();
        assert!(diff.majorant_norm(&lp.dom) <= 1e-15);
        assert_eq!(tail, 0.0);
    }

    #[test]
    fn lie_transform_matches_flow_samples() {
        // dual route: series composition vs numerically flowing the
        // generator and evaluating the original Hamiltonian there
        let omega = vec![1.0, crate::fixtures::golden_omega()[1]];
        let nf = NormalForm::new(0.0, omega.clone());
        let mut p0 = FTSeries::new(2, 2, 3);
        p0 = p0.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 1], 0.02)).unwrap();
        p0 = p0.add(&FTSeries::cos_mode(2, &[2, 0], &[0, 0], 0.5)).unwrap();
        let mut f = FTSeries::new(2, 1, 2);
        f = f.add(&FTSeries::sin_mode(2, &[0, 0], &[1, 0], 0.015)).unwrap();
        f = f.add(&FTSeries::cos_mode(2, &[1, 0], &[0, 1], 0.01)).unwrap();
        let lp = LieParams {
            max_order: 24,
            tol: 1e-15,
            d_out: 6,
            k_out: 16,
            dom: DomainSpec { r: 0.3, s: 0.5, h: 0.1 },
        };
        let (out, _) = lie_transform(&nf, &p0, &f, &lp).unwrap();
        let h0 = nf.to_series(2, 3).add(&p0).unwrap();
        for (i0, th0) in
            [([0.1, 0.05], [0.3, 1.1]), ([0.0, 0.2], [2.0, 4.4]), ([0.15, 0.1], [5.1, 0.2])]
        {
            let z1 = flow::flow_time1(&f, &[i0[0], i0[1], th0[0], th0[1]], 256);
            let direct = h0.eval_real(&z1[0..2], &z1[2..4]);
            let series = out.eval_real(&i0, &th0);
            assert_abs_diff_eq!(series, direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn new_error_consistency_with_full_transform() {
        // e^{ad}(N + P) must equal N + N_hat + P_plus coefficientwise
        let p = golden_step_params();
        let omega = crate::fixtures::golden_omega().to_vec();
        let nf = NormalForm::new(0.0, omega.clone());
        let mut pert = FTSeries::new(2, 2, 3);
        pert = pert.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 0], 1e-5)).unwrap();
        pert = pert.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 1], 1e-5)).unwrap();
        pert = pert.add(&FTSeries::cos_mode(2, &[1, 0], &[0, 1], 4e-6)).unwrap();
        pert = pert.add(&FTSeries::cos_mode(2, &[2, 0], &[0, 0], 1e-4)).unwrap();
        let (q, r, _) = truncate_perturbation(&pert, &p).unwrap();
        let dioph = DiophantineParams::new(2, p.alpha, p.tau).unwrap();
        let sol = homological::solve(&r, &omega, &dioph, p.divisor_factor).unwrap();
        let lp = lie_params(&p, 2);
        let (p_plus, _) = new_error(&pert, &q, &r, &sol.n_hat, &sol.f, &p, &lp).unwrap();
        let (full, _) = lie_transform(&nf, &pert, &sol.f, &lp).unwrap();
        let expect = nf.to_series(2, lp.k_out).add(&sol.n_hat).unwrap().add(&p_plus).unwrap();
        let diff = full.add(&expect.scale(-1.0)).unwrap();
        let scale = full.majorant_norm(&lp.dom).max(1e-300);
        assert!(
            diff.majorant_norm(&lp.dom) <= 1e-11 * scale,
            "defect {}",
            diff.majorant_norm(&lp.dom) / scale
        );
    }

    #[test]
    fn action_free_perturbation_vanishes_in_one_step() {
        let p = golden_step_params();
        let omega = crate::fixtures::golden_omega().to_vec();
        let nf = NormalForm::new(0.0, omega);
        let mut pert = FTSeries::new(2, 2, 400);
        pert = pert.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 0], 1e-5)).unwrap();
        pert = pert.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 1], 1e-5)).unwrap();
        let (n1, p1, rec, rep) = apply_step(&nf, &pert, &p, &StepOptions::default()).unwrap();
        assert!(p1.is_zero(), "residual perturbation {:?}", p1.len());
        assert_eq!(rep.eps_out, 0.0);
        assert_eq!(rec.v_shift, vec![0.0, 0.0]);
        assert_eq!(n1.omega, nf.omega);
        assert_eq!(n1.e, 0.0);
        assert!(rep.conditions.ok && !rep.forced);
    }

    #[test]
    fn quadratic_twist_fixture_contracts() {
        // rotator with twist plus one band mode; the step must absorb the
        // mode and leave an error dominated by the persistent twist
        let p = golden_step_params();
        let r_small = 3.16227766016838e-3;
        let p = StepParams::new(r_small, p.s, p.h, p.sigma, p.eta, p.k_cut, p.alpha, p.tau)
            .unwrap()
            .with_constants(p.c_a, p.c_b, p.divisor_factor)
            .unwrap();
        let omega = crate::fixtures::golden_omega().to_vec();
        let nf = NormalForm::new(0.0, omega.clone());
        let mut pert = FTSeries::new(2, 2, 400);
        pert = pert.add(&FTSeries::cos_mode(2, &[2, 0], &[0, 0], 0.5)).unwrap();
        pert = pert.add(&FTSeries::cos_mode(2, &[0, 2], &[0, 0], 0.5)).unwrap();
        pert = pert.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 0], 1e-5)).unwrap();
        let (n1, p1, _, rep) = apply_step(&nf, &pert, &p, &StepOptions::default()).unwrap();
        // frequency untouched at this order
        assert_eq!(n1.omega, omega);
        // the generated first-order mode is gone from the band part:
        // remaining angle dependence is order eps^2 or carries an action
        let flat = p1.truncate_taylor(0).0;
        let mut worst = 0.0f64;
        for (_, k, c) in flat.iter() {
            if !k.is_zero() {
                worst = worst.max(c.norm());
            }
        }
        assert!(worst <= 1e-9, "surviving flat mode {worst}");
        // twist survives: eps_out is close to the twist majorant
        let twist = (p.eta * p.r) * (p.eta * p.r);
        assert!(rep.eps_out >= 0.5 * twist && rep.eps_out <= 2.0 * twist, "{}", rep.eps_out);
        assert!(rep.new_error.as_ref().unwrap().within);
    }

    #[test]
    fn zero_perturbation_short_circuits() {
        let p = golden_step_params();
        let nf = NormalForm::new(0.1, crate::fixtures::golden_omega().to_vec());
        let zero = FTSeries::new(2, 2, 4);
        let (n1, p1, rec, rep) = apply_step(&nf, &zero, &p, &StepOptions::default()).unwrap();
        assert!(p1.is_zero());
        assert_eq!(n1.e, 0.1);
        assert_eq!(rep.eps_in, 0.0);
        assert!(rec.f_gen.is_zero());
    }

    #[test]
    fn conditions_gate_and_force() {
        let p = golden_step_params();
        let nf = NormalForm::new(0.0, crate::fixtures::golden_omega().to_vec());
        // eps far above the smallness cap
        let pert = FTSeries::cos_mode(2, &[0, 0], &[1, 0], 10.0);
        let err = apply_step(&nf, &pert, &p, &StepOptions::default());
        assert!(matches!(err, Err(StepError::ConditionViolation(_))));
        let opts = StepOptions { force: true, ..StepOptions::default() };
        let (_, _, _, rep) = apply_step(&nf, &pert, &p, &opts).unwrap();
        assert!(rep.forced);
    }

    #[test]
    fn small_divisor_violation_propagates() {
        let p = StepParams::new(0.1, 1.0, 5e-5, 0.05, 0.1, 40, 0.5, 1.2)
            .unwrap()
            .with_constants(1e6, 1e9, 1.0)
            .unwrap();
        // resonant frequency: k = (1, -1) has zero divisor
        let nf = NormalForm::new(0.0, vec![1.0, 1.0]);
        let pert = FTSeries::cos_mode(2, &[0, 0], &[1, -1], 1e-6);
        let err = apply_step(&nf, &pert, &p, &StepOptions::default());
        match err {
            Err(StepError::Homological(HomologicalError::SmallDivisorViolation { k, .. })) => {
                assert_eq!(k, vec![1, -1]);
            }
            other => panic!("expected a small divisor violation, got {other:?}"),
        }
    }
}
