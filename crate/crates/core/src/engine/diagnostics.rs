//! After-the-fact checks on a constructed torus. Both work on the
//! embedded surface alone, so they are independent of the series
//! bookkeeping that produced it: one compares the Hamiltonian vector
//! field against the pushed-forward rotation, the other measures how far
//! the surface is from Lagrangian.

use super::{EngineError, TorusResult};
use crate::fixtures as fx;
use crate::kamstep::flow::{embed_torus, for_each_grid_point, TorusEmbedding};
use crate::series::FTSeries;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsOpts {
    pub embed_grid: usize,
    pub embed_band: u32,
    pub flow_steps: usize,
    /// sample points per angle axis for the defect sups
    pub grid: usize,
    pub fd_step: f64,
}

impl Default for DiagnosticsOpts {
    fn default() -> Self {
        DiagnosticsOpts {
            embed_grid: fx::EMBED_GRID,
            embed_band: 8,
            flow_steps: fx::FLOW_STEPS as usize,
            grid: 64,
            fd_step: 1e-5,
        }
    }
}

/// Embeds the model torus of a finished run through its recorded
/// transformations.
pub fn embed(result: &TorusResult, opts: &DiagnosticsOpts) -> Result<TorusEmbedding, EngineError> {
    Ok(embed_torus(&result.records, result.n, opts.embed_grid, opts.embed_band, opts.flow_steps)?)
}

fn validate(opts: &DiagnosticsOpts) -> Result<(), EngineError> {
    if opts.grid < 2 {
        return Err(EngineError::BadInput(format!("grid must be at least 2, got {}", opts.grid)));
    }
    if !(opts.fd_step > 0.0 && opts.fd_step.is_finite()) {
        return Err(EngineError::BadInput(format!(
            "fd_step must be positive, got {}",
            opts.fd_step
        )));
    }
    Ok(())
}

fn angle_partials(comp: &[FTSeries], n: usize) -> Vec<Vec<FTSeries>> {
    comp.iter().map(|s| (0..n).map(|j| s.partial_theta(j)).collect()).collect()
}

/// Sup over the torus of |X_H(Phi(theta)) - DPhi(theta) omega|: the flow
/// defect of the embedding as an invariant rotation carrier. The field
/// is sampled by central differences of h, the pushforward from the
/// fitted series, so agreement is evidence and not tautology.
pub fn conjugacy_residual<H>(
    emb: &TorusEmbedding,
    h: H,
    omega: &[f64],
    opts: &DiagnosticsOpts,
) -> Result<f64, EngineError>
where
    H: Fn(&[f64], &[f64]) -> f64,
{
    validate(opts)?;
    let n = emb.n;
    if omega.len() != n {
        return Err(EngineError::BadInput(format!(
            "frequency has {} entries, embedding is {n}-dimensional",
            omega.len()
        )));
    }
    let du = angle_partials(&emb.u, n);
    let dv = angle_partials(&emb.v, n);
    let zero = vec![0.0; n];
    let step = std::f64::consts::TAU / opts.grid as f64;
    let d = opts.fd_step;

    let mut worst = 0.0f64;
    for_each_grid_point(n, opts.grid, |idx, _| {
        let theta: Vec<f64> = idx.iter().map(|&p| p as f64 * step).collect();
        let (ipt, qpt) = emb.eval(&theta);
        for a in 0..n {
            let mut qp = qpt.clone();
            let mut qm = qpt.clone();
            qp[a] += d;
            qm[a] -= d;
            let i_dot = -(h(&ipt, &qp) - h(&ipt, &qm)) / (2.0 * d);
            let mut ip = ipt.clone();
            let mut im = ipt.clone();
            ip[a] += d;
            im[a] -= d;
            let q_dot = (h(&ip, &qpt) - h(&im, &qpt)) / (2.0 * d);

            let u_dot: f64 = (0..n).map(|j| du[a][j].eval_real(&zero, &theta) * omega[j]).sum();
            let v_dot: f64 = omega[a]
                + (0..n).map(|j| dv[a][j].eval_real(&zero, &theta) * omega[j]).sum::<f64>();
            worst = worst.max((i_dot - u_dot).abs()).max((q_dot - v_dot).abs());
        }
    });
    Ok(worst)
}

/// Sup of the pulled-back symplectic form on the embedded surface. An
/// exact invariant torus of this kind is Lagrangian, so the value is a
/// geometric error gauge:
/// W_ab = d_a U_b - d_b U_a + sum_j (d_a U_j d_b V_j - d_b U_j d_a V_j).
pub fn lagrangian_defect(emb: &TorusEmbedding, opts: &DiagnosticsOpts) -> Result<f64, EngineError> {
    validate(opts)?;
    let n = emb.n;
    if n < 2 {
        return Ok(0.0);
    }
    let du = angle_partials(&emb.u, n);
    let dv = angle_partials(&emb.v, n);
    let zero = vec![0.0; n];
    let step = std::f64::consts::TAU / opts.grid as f64;

    let mut worst = 0.0f64;
    let mut du_val = vec![vec![0.0f64; n]; n];
    let mut dv_val = vec![vec![0.0f64; n]; n];
    for_each_grid_point(n, opts.grid, |idx, _| {
        let theta: Vec<f64> = idx.iter().map(|&p| p as f64 * step).collect();
        for j in 0..n {
            for a in 0..n {
                du_val[j][a] = du[j][a].eval_real(&zero, &theta);
                dv_val[j][a] = dv[j][a].eval_real(&zero, &theta);
            }
        }
        for a in 0..n {
            for b in (a + 1)..n {
                let mut w = du_val[b][a] - du_val[a][b];
                for j in 0..n {
                    w += du_val[j][a] * dv_val[j][b] - du_val[j][b] * dv_val[j][a];
                }
                worst = worst.max(w.abs());
            }
        }
    });
    Ok(worst)
}
