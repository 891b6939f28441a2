//! The full iteration: a geometric schedule of shrinking domains, the
//! step loop driving the perturbation to zero, and the outer frequency
//! matching that tunes the starting frequency until the torus carries a
//! prescribed one.

pub mod classical;
pub mod diagnostics;

use crate::kamstep::{apply_step, StepError, StepOptions, StepParams, TransformRecord};
use crate::series::{DomainSpec, FTSeries, NormalForm, SeriesError};
use crate::smalldiv::{DiophantineParams, SmallDivError};
use crate::util::solve_dense;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("schedule infeasible at stage {j}: {inequality}")]
    ScheduleInfeasible { j: usize, inequality: String },
    #[error("initial perturbation too large: |P| = {eps0} over cap {cap} (margin {margin})")]
    PreconditionViolated { eps0: f64, cap: f64, margin: f64 },
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("no convergence after {iterations} stages, residual {residual}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("frequency matching stalled after {iterations} updates, gap {gap}")]
    OuterNoConvergence { iterations: usize, gap: f64 },
    #[error("newton solve failed: {0}")]
    NewtonFail(String),
    #[error(
        "expanded series disagrees with direct evaluation: difference {diff} over tolerance {tol}"
    )]
    SpectralAliasing { diff: f64, tol: f64 },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    SmallDiv(#[from] SmallDivError),
}

/// Inputs that generate the whole schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub n: usize,
    pub s0: f64,
    pub alpha: f64,
    pub tau: f64,
    /// weighted-error cap at stage 0; must stay under 1/64
    pub e0: f64,
    pub k0: u32,
    /// contraction constant in E' = sqrt(c) E^(3/2)
    pub c: f64,
    /// sets h0 = alpha c0 E0 sigma0^nu
    pub c0: f64,
    pub r0: f64,
    pub max_iters: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub j: usize,
    pub sigma: f64,
    pub k_cut: u32,
    pub h: f64,
    pub e: f64,
    pub r: f64,
    pub s: f64,
    pub eta: f64,
}

/// The resolved per-stage geometry. Strips halve their loss each stage,
/// bands quadruple, the weighted error cap contracts with exponent 3/2.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Schedule {
    pub n: usize,
    pub rows: Vec<ScheduleRow>,
    pub alpha: f64,
    pub tau: f64,
    pub nu: f64,
    pub kappa: f64,
    pub c: f64,
    pub c0: f64,
    /// strip where residuals are measured; half the starting width
    pub s_star: f64,
}

pub fn build_schedule(p: &ScheduleParams) -> Result<Schedule, EngineError> {
    DiophantineParams::new(p.n, p.alpha, p.tau)?;
    // negated form so NaN fails the gate
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(p.alpha > 0.0) {
        return Err(EngineError::BadInput("alpha must be positive".into()));
    }
    for (name, v) in [("s0", p.s0), ("r0", p.r0), ("c", p.c), ("c0", p.c0)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(EngineError::BadInput(format!("{name} must be positive, got {v}")));
        }
    }
    if !(p.e0 > 0.0 && p.e0 < 1.0 / 64.0) {
        return Err(EngineError::BadInput(format!(
            "e0 must lie in (0, 1/64) so the action shrink stays under 1/8, got {}",
            p.e0
        )));
    }
    if p.k0 == 0 {
        return Err(EngineError::BadInput("k0 must be at least 1".into()));
    }
    if p.max_iters == 0 || p.max_iters > 12 {
        return Err(EngineError::BadInput(format!(
            "max_iters must lie in 1..=12, got {}",
            p.max_iters
        )));
    }
    let nu = p.tau + 1.0;
    let kappa = 1.5;
    if p.c * p.e0 >= 1.0 {
        return Err(EngineError::ScheduleInfeasible {
            j: 0,
            inequality: format!("c E0 = {} must stay under 1 for contraction", p.c * p.e0),
        });
    }
    let sigma0 = p.s0 / 20.0;
    if (p.k0 as f64) * sigma0 < 1.0 {
        return Err(EngineError::ScheduleInfeasible {
            j: 0,
            inequality: format!(
                "K0 sigma0 = {} must be at least 1 for the band tail bound",
                p.k0 as f64 * sigma0
            ),
        });
    }
    let cutoff_lhs = 2.0 * p.c0 * p.e0 * ((p.k0 as f64) * sigma0).powf(nu);
    if cutoff_lhs > 1.0 {
        return Err(EngineError::ScheduleInfeasible {
            j: 0,
            inequality: format!("2 c0 E0 (K0 sigma0)^nu = {cutoff_lhs} must stay at or under 1"),
        });
    }

    let h0 = p.alpha * p.c0 * p.e0 * sigma0.powf(nu);
    let mut rows = Vec::with_capacity(p.max_iters);
    let mut sigma = sigma0;
    let mut k_cut = p.k0 as u64;
    let mut h = h0;
    let mut e = p.e0;
    let mut r = p.r0;
    let mut s = p.s0;
    for j in 0..p.max_iters {
        if k_cut > u32::MAX as u64 {
            return Err(EngineError::ScheduleInfeasible {
                j,
                inequality: format!("band cutoff K = {k_cut} overflows"),
            });
        }
        let kf = k_cut as f64;
        let trunc_lhs = kf.powf(nu) * (-kf * sigma).exp();
        if trunc_lhs > e {
            return Err(EngineError::ScheduleInfeasible {
                j,
                inequality: format!("K^nu exp(-K sigma) = {trunc_lhs} must stay under E = {e}"),
            });
        }
        let eta = e.sqrt();
        rows.push(ScheduleRow { j, sigma, k_cut: k_cut as u32, h, e, r, s, eta });
        s -= 5.0 * sigma;
        sigma *= 0.5;
        k_cut *= 4;
        h /= 4f64.powf(nu);
        r *= eta;
        e = p.c.sqrt() * e.powf(kappa);
    }
    Ok(Schedule {
        n: p.n,
        rows,
        alpha: p.alpha,
        tau: p.tau,
        nu,
        kappa,
        c: p.c,
        c0: p.c0,
        s_star: p.s0 / 2.0,
    })
}

impl Schedule {
    pub fn step_params(&self, j: usize, cfg: &RunConfig) -> Result<StepParams, EngineError> {
        let row = &self.rows[j];
        Ok(StepParams::new(
            row.r, row.s, row.h, row.sigma, row.eta, row.k_cut, self.alpha, self.tau,
        )?
        .with_constants(cfg.c_a, cfg.c_b, cfg.divisor_factor)?)
    }
}

/// Knobs of the iteration loop. Everything has a working default; the
/// command line patches single fields by key.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// slack factor on the entry smallness cap
    pub entry_margin: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub divisor_factor: f64,
    /// stop when the torus defect falls under this
    pub residual_stop: f64,
    /// stop when the weighted error falls under this
    pub e_floor: f64,
    pub lie_max_order: u32,
    pub lie_tol: f64,
    pub k_out_factor: u32,
    pub d_out: Option<u32>,
    pub flow_steps: usize,
    pub embed_grid: usize,
    pub embed_band: u32,
    pub outer_max: usize,
    pub outer_tol: f64,
    pub fd_step: f64,
    pub gamma: f64,
    pub force: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        use crate::fixtures as fx;
        RunConfig {
            entry_margin: fx::ENTRY_MARGIN,
            c_a: fx::C_A,
            c_b: fx::C_B,
            divisor_factor: fx::DIVISOR_FACTOR,
            residual_stop: fx::RESIDUAL_STOP,
            e_floor: fx::E_FLOOR,
            lie_max_order: fx::LIE_MAX_ORDER,
            lie_tol: fx::LIE_TOL_REL,
            k_out_factor: fx::K_OUT_FACTOR,
            d_out: None,
            flow_steps: fx::FLOW_STEPS as usize,
            embed_grid: fx::EMBED_GRID,
            embed_band: 8,
            outer_max: 10,
            outer_tol: 1e-10,
            fd_step: 1e-5,
            gamma: fx::GAMMA,
            force: false,
        }
    }
}

/// The invariance defect of the model torus I = 0 read off the series:
/// the angle gradient of the flat part plus the action gradient at I = 0,
/// both on the limit strip.
pub fn jet_defect(p: &FTSeries, s_star: f64) -> f64 {
    let mut acc = 0.0f64;
    for (m, k, c) in p.iter() {
        let deg = m.total();
        let w = (k.l1() as f64 * s_star).exp();
        if deg == 0 {
            acc += c.norm() * k.l1() as f64 * w;
        } else if deg == 1 {
            acc += c.norm() * w;
        }
    }
    acc
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRow {
    pub j: usize,
    pub eps_in: f64,
    pub eps_out: f64,
    /// eps_in / (alpha r sigma^nu)
    pub weighted_e: f64,
    pub residual_in: f64,
    pub residual_out: f64,
    pub min_divisor: f64,
    pub shift_norm: f64,
    pub conditions_ok: bool,
    pub forced: bool,
}

/// Outcome of a full run. The records are kept for embedding and
/// diagnostics but stay out of the serialized summary.
#[derive(Clone, Debug, Serialize)]
pub struct TorusResult {
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    pub omega_start: Vec<f64>,
    /// frequency of the final normal form; the torus carries this one
    pub final_omega: Vec<f64>,
    /// first-order corrected starting guess: omega_start minus the
    /// accumulated shifts
    pub omega_tilde: Vec<f64>,
    pub e_final: f64,
    pub residual: f64,
    pub eps_final: f64,
    pub history: Vec<IterationRow>,
    #[serde(skip_serializing)]
    pub records: Vec<TransformRecord>,
}

/// Runs the schedule until the torus defect or the weighted error is
/// negligible. The perturbation produced by stage j lives exactly on the
/// stage j+1 domain, so rows can chain without re-measuring.
pub fn iterate(
    n0: &NormalForm,
    p0: &FTSeries,
    sched: &Schedule,
    cfg: &RunConfig,
) -> Result<TorusResult, EngineError> {
    let dim = n0.dim();
    if dim != sched.n || p0.dim() != dim {
        return Err(EngineError::BadInput(format!(
            "dimension mismatch: normal form {dim}, perturbation {}, schedule {}",
            p0.dim(),
            sched.n
        )));
    }
    let mut nf = n0.clone();
    let mut p = p0.clone();
    let mut records: Vec<TransformRecord> = Vec::new();
    let mut history: Vec<IterationRow> = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;
    let mut residual = jet_defect(&p, sched.s_star);
    let mut eps = {
        let row = &sched.rows[0];
        p.majorant_norm(&DomainSpec { r: row.r, s: row.s, h: row.h })
    };

    for j in 0..=sched.rows.len() {
        let e_meas = if j < sched.rows.len() {
            let row = &sched.rows[j];
            eps / (sched.alpha * row.r * row.sigma.powf(sched.nu))
        } else {
            f64::INFINITY
        };
        if residual <= cfg.residual_stop || e_meas < cfg.e_floor {
            converged = true;
            iterations = j;
            break;
        }
        if j == sched.rows.len() {
            return Err(EngineError::NoConvergence { iterations: j, residual });
        }
        if j == 0 {
            let row = &sched.rows[0];
            let cap = sched.alpha * row.e * row.r * row.sigma.powf(sched.nu);
            if eps > cfg.entry_margin * cap {
                return Err(EngineError::PreconditionViolated {
                    eps0: eps,
                    cap,
                    margin: cfg.entry_margin,
                });
            }
        }
        let params = sched.step_params(j, cfg)?;
        let opts = StepOptions {
            force: cfg.force,
            max_order: cfg.lie_max_order,
            tol: cfg.lie_tol,
            k_out_factor: cfg.k_out_factor,
            d_out: cfg.d_out,
        };
        let (n_next, p_next, rec, rep) = apply_step(&nf, &p, &params, &opts)?;
        let residual_out = jet_defect(&p_next, sched.s_star);
        history.push(IterationRow {
            j,
            eps_in: rep.eps_in,
            eps_out: rep.eps_out,
            weighted_e: e_meas,
            residual_in: residual,
            residual_out,
            min_divisor: rep.min_divisor,
            shift_norm: rep.shift_norm,
            conditions_ok: rep.conditions.ok,
            forced: rep.forced,
        });
        records.push(rec);
        nf = n_next;
        p = p_next;
        residual = residual_out;
        eps = rep.eps_out;
        iterations = j + 1;
    }

    let omega_tilde: Vec<f64> =
        (0..dim).map(|d| n0.omega[d] - records.iter().map(|r| r.v_shift[d]).sum::<f64>()).collect();
    Ok(TorusResult {
        n: dim,
        converged,
        iterations,
        omega_start: n0.omega.clone(),
        final_omega: nf.omega.clone(),
        omega_tilde,
        e_final: nf.e,
        residual,
        eps_final: eps,
        history,
        records,
    })
}

/// Tunes the starting frequency of a family until the constructed torus
/// carries omega_star: an outer root find on the final frequency, with a
/// finite-difference update.
#[allow(clippy::needless_range_loop)]
pub fn frequency_match<F>(
    family: F,
    omega_star: &[f64],
    sched: &Schedule,
    cfg: &RunConfig,
) -> Result<(Vec<f64>, TorusResult), EngineError>
where
    F: Fn(&[f64]) -> Result<(NormalForm, FTSeries), EngineError>,
{
    let n = omega_star.len();
    if n != sched.n {
        return Err(EngineError::BadInput("omega_star dimension mismatch".into()));
    }
    let run = |w: &[f64]| -> Result<TorusResult, EngineError> {
        let (n0, p0) = family(w)?;
        if n0.omega != w {
            return Err(EngineError::BadInput(
                "family must produce a normal form at the requested frequency".into(),
            ));
        }
        iterate(&n0, &p0, sched, cfg)
    };
    let mut x = omega_star.to_vec();
    let mut last_gap = f64::INFINITY;
    for _ in 0..cfg.outer_max {
        let res = run(&x)?;
        let g: Vec<f64> = res.final_omega.iter().zip(omega_star).map(|(a, b)| a - b).collect();
        let gap = g.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if gap <= cfg.outer_tol {
            return Ok((x, res));
        }
        last_gap = gap;
        // finite-difference jacobian of final_omega with respect to x
        let mut jac = vec![vec![0.0f64; n]; n];
        for col in 0..n {
            let mut xp = x.clone();
            xp[col] += cfg.fd_step;
            let rp = run(&xp)?;
            for row in 0..n {
                jac[row][col] = (rp.final_omega[row] - res.final_omega[row]) / cfg.fd_step;
            }
        }
        let dx = solve_dense(&jac, &g)
            .ok_or_else(|| EngineError::NewtonFail("singular frequency response".into()))?;
        for d in 0..n {
            x[d] -= dx[d];
        }
    }
    Err(EngineError::OuterNoConvergence { iterations: cfg.outer_max, gap: last_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures as fx;
    use crate::series::FTSeries;
    use approx::assert_abs_diff_eq;

    pub(crate) fn golden_schedule_params() -> ScheduleParams {
        ScheduleParams {
            n: 2,
            s0: fx::S0,
            alpha: fx::GOLDEN_ALPHA_MAX / fx::ALPHA_SAFETY,
            tau: fx::GOLDEN_TAU,
            e0: fx::E0,
            k0: fx::K0,
            c: fx::SCHED_C,
            c0: fx::SCHED_C0,
            r0: 0.1,
            max_iters: fx::MAX_ITERS as usize,
        }
    }

    #[test]
    fn schedule_recursions_and_feasibility() {
        let sp = golden_schedule_params();
        let sched = build_schedule(&sp).unwrap();
        assert_eq!(sched.rows.len(), 10);
        let r0 = &sched.rows[0];
        assert_abs_diff_eq!(r0.sigma, 0.05, epsilon = 1e-15);
        assert_eq!(r0.k_cut, 400);
        assert_abs_diff_eq!(r0.e, 0.0125, epsilon = 1e-15);
        assert_abs_diff_eq!(
            r0.h,
            sched.alpha * sp.c0 * sp.e0 * 0.05f64.powf(sched.nu),
            epsilon = 1e-20
        );
        for w in sched.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert_abs_diff_eq!(b.sigma, a.sigma / 2.0, epsilon = 1e-15);
            assert_eq!(b.k_cut, a.k_cut * 4);
            assert_abs_diff_eq!(b.h, a.h / 4f64.powf(sched.nu), epsilon = 1e-25);
            assert_abs_diff_eq!(b.e, sp.c.sqrt() * a.e.powf(1.5), epsilon = 1e-18);
            assert_abs_diff_eq!(b.r, a.eta * a.r, epsilon = 1e-18);
            assert_abs_diff_eq!(b.s, a.s - 5.0 * a.sigma, epsilon = 1e-15);
            // step conditions hold on every row
            let kf = b.k_cut as f64;
            assert!(b.h <= sched.alpha / (2.0 * kf.powf(sched.nu)));
            assert!(kf.powf(sched.nu) * (-kf * b.sigma).exp() <= b.e);
            assert!(b.eta < 0.125);
        }
        // the strip never drops under half its starting width
        assert!(sched.rows.last().unwrap().s > sp.s0 / 2.0);
        assert_abs_diff_eq!(sched.s_star, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn schedule_rejections() {
        let mut sp = golden_schedule_params();
        sp.e0 = 0.02; // 1/64 = 0.015625
        assert!(matches!(build_schedule(&sp), Err(EngineError::BadInput(_))));
        let mut sp = golden_schedule_params();
        sp.k0 = 100; // K0 sigma0 = 5 fine, but cutoff vs trunc fails
        let err = build_schedule(&sp);
        assert!(err.is_ok() || matches!(err, Err(EngineError::ScheduleInfeasible { .. })));
        let mut sp = golden_schedule_params();
        sp.k0 = 10; // K0 sigma0 = 0.5 < 1
        assert!(matches!(build_schedule(&sp), Err(EngineError::ScheduleInfeasible { j: 0, .. })));
        let mut sp = golden_schedule_params();
        sp.c = 100.0; // c E0 > 1
        assert!(matches!(build_schedule(&sp), Err(EngineError::ScheduleInfeasible { .. })));
    }

    #[test]
    fn jet_defect_counts_the_right_modes() {
        let mut p = FTSeries::new(2, 2, 3);
        p = p.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 1], 2.0)).unwrap(); // flat, |k| = 2
        p = p.add(&FTSeries::cos_mode(2, &[1, 0], &[0, 1], 3.0)).unwrap(); // degree 1
        p = p.add(&FTSeries::cos_mode(2, &[2, 0], &[0, 1], 7.0)).unwrap(); // degree 2: ignored
        p = p.add(&FTSeries::cos_mode(2, &[0, 0], &[0, 0], 5.0)).unwrap(); // constant: ignored
        let s = 0.5f64;
        let expect = 2.0 * (2.0 / 2.0) * 2.0 * (2.0 * s).exp() // two mirrored coeffs, |k|1 = 2, |c| = 1
            + 2.0 * 1.5 * s.exp(); // degree-1 pair, |c| = 3/2
        assert_abs_diff_eq!(jet_defect(&p, s), expect, epsilon = 1e-12);
    }

    #[test]
    fn iterate_one_exact_stage_for_flat_perturbation() {
        let sp = golden_schedule_params();
        let sched = build_schedule(&sp).unwrap();
        let nf = NormalForm::new(0.0, fx::golden_omega().to_vec());
        let mut p0 = FTSeries::new(2, 2, 400);
        p0 = p0.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 0], 1e-5)).unwrap();
        p0 = p0.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 1], 1e-5)).unwrap();
        let res = iterate(&nf, &p0, &sched, &RunConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.residual, 0.0);
        assert_eq!(res.eps_final, 0.0);
        assert_eq!(res.final_omega, nf.omega);
        assert_eq!(res.history.len(), 1);
        assert!(res.history[0].residual_in > 1e-5);
        assert_eq!(res.history[0].residual_out, 0.0);
    }

    #[test]
    fn iterate_zero_perturbation_converges_without_steps() {
        let sp = golden_schedule_params();
        let sched = build_schedule(&sp).unwrap();
        let nf = NormalForm::new(0.3, fx::golden_omega().to_vec());
        let p0 = FTSeries::new(2, 2, 4);
        let res = iterate(&nf, &p0, &sched, &RunConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
        assert!(res.history.is_empty());
        assert_eq!(res.omega_tilde, res.omega_start);
    }

    #[test]
    fn iterate_rejects_oversized_perturbation() {
        let sp = golden_schedule_params();
        let sched = build_schedule(&sp).unwrap();
        let nf = NormalForm::new(0.0, fx::golden_omega().to_vec());
        let p0 = FTSeries::cos_mode(2, &[0, 0], &[1, 0], 1.0);
        let cfg = RunConfig { entry_margin: 1.0, ..RunConfig::default() };
        let err = iterate(&nf, &p0, &sched, &cfg);
        assert!(matches!(err, Err(EngineError::PreconditionViolated { .. })));
    }

    #[test]
    fn iterate_quadratic_twist_contracts_residual() {
        let sp = ScheduleParams { r0: 3.16227766016838e-3, ..golden_schedule_params() };
        let sched = build_schedule(&sp).unwrap();
        let nf = NormalForm::new(0.0, fx::golden_omega().to_vec());
        let mut p0 = FTSeries::new(2, 2, 400);
        p0 = p0.add(&FTSeries::cos_mode(2, &[2, 0], &[0, 0], 0.5)).unwrap();
        p0 = p0.add(&FTSeries::cos_mode(2, &[0, 2], &[0, 0], 0.5)).unwrap();
        p0 = p0.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 0], 1e-5)).unwrap();
        let res = iterate(&nf, &p0, &sched, &RunConfig::default()).unwrap();
        assert!(res.converged, "history: {:#?}", res.history);
        assert!(res.iterations >= 2 && res.iterations <= 6, "{}", res.iterations);
        assert!(res.residual <= 1e-12);
        // residuals contract fast once the twist interaction appears
        for w in res.history.windows(2) {
            assert!(w[1].residual_out <= 0.5 * w[0].residual_out.max(1e-16));
        }
    }

    #[test]
    fn frequency_match_fixed_point_when_family_is_flat() {
        // action-free perturbation: one stage, no shift, so the match
        // succeeds immediately
        let sp = golden_schedule_params();
        let sched = build_schedule(&sp).unwrap();
        let target = fx::golden_omega().to_vec();
        let family = |w: &[f64]| -> Result<(NormalForm, FTSeries), EngineError> {
            let mut p0 = FTSeries::new(2, 2, 400);
            p0 = p0.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 0], 1e-5))?;
            Ok((NormalForm::new(0.0, w.to_vec()), p0))
        };
        let (w_tilde, res) =
            frequency_match(family, &target, &sched, &RunConfig::default()).unwrap();
        assert_eq!(w_tilde, target);
        assert!(res.converged);
        assert_abs_diff_eq!(res.final_omega[0], target[0], epsilon = 1e-12);
    }

    #[test]
    fn frequency_match_compensates_a_forced_shift() {
        // family that bakes a constant frequency shift into the
        // perturbation: the matcher must start lower by that shift
        let sp = golden_schedule_params();
        let sched = build_schedule(&sp).unwrap();
        let target = fx::golden_omega().to_vec();
        let shift = 2e-6;
        let family = move |w: &[f64]| -> Result<(NormalForm, FTSeries), EngineError> {
            let mut p0 = FTSeries::new(2, 2, 400);
            p0 = p0.add(&FTSeries::cos_mode(2, &[0, 0], &[1, 0], 1e-5))?;
            p0 = p0.add(&FTSeries::cos_mode(2, &[1, 0], &[0, 0], shift))?;
            p0 = p0.add(&FTSeries::cos_mode(2, &[0, 1], &[0, 0], shift))?;
            Ok((NormalForm::new(0.0, w.to_vec()), p0))
        };
        let cfg = RunConfig::default();
        let (w_tilde, res) = frequency_match(family, &target, &sched, &cfg).unwrap();
        for d in 0..2 {
            assert_abs_diff_eq!(w_tilde[d], target[d] - shift, epsilon = 1e-9);
            assert_abs_diff_eq!(res.final_omega[d], target[d], epsilon = 1e-10);
        }
    }
}
