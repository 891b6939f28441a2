//! Canonical flows of series Hamiltonians and the reconstruction of the
//! invariant torus embedding from a stack of step records.
//!
//! State layout everywhere: z = [I_0 .. I_{n-1}, theta_0 .. theta_{n-1}].

use super::{StepError, TransformRecord};
use crate::series::{ActionDegree, FTSeries, FourierIndex, C64};
use serde::{Deserialize, Serialize};

/// A generator with its first partials evaluated many times; build once
/// per generator, flow many points.
pub struct CanonicalFlow {
    n: usize,
    f_i: Vec<FTSeries>,
    f_th: Vec<FTSeries>,
}

impl CanonicalFlow {
    pub fn new(f: &FTSeries) -> Self {
        let n = f.dim();
        CanonicalFlow {
            n,
            f_i: (0..n).map(|j| f.partial_i(j)).collect(),
            f_th: (0..n).map(|j| f.partial_theta(j)).collect(),
        }
    }

    /// I' = -F_theta, theta' = F_I.
    fn field(&self, z: &[f64], out: &mut [f64]) {
        let (i, th) = z.split_at(self.n);
        for j in 0..self.n {
            out[j] = -self.f_th[j].eval_real(i, th);
            out[self.n + j] = self.f_i[j].eval_real(i, th);
        }
    }

    /// Fourth-order fixed-step integration to time 1.
    pub fn time1(&self, z0: &[f64], steps: usize) -> Vec<f64> {
        assert!(steps >= 1);
        let dim = 2 * self.n;
        assert_eq!(z0.len(), dim);
        let dt = 1.0 / steps as f64;
        let mut z = z0.to_vec();
        let mut k1 = vec![0.0; dim];
        let mut k2 = vec![0.0; dim];
        let mut k3 = vec![0.0; dim];
        let mut k4 = vec![0.0; dim];
        let mut tmp = vec![0.0; dim];
        for _ in 0..steps {
            self.field(&z, &mut k1);
            for d in 0..dim {
                tmp[d] = z[d] + 0.5 * dt * k1[d];
            }
            self.field(&tmp, &mut k2);
            for d in 0..dim {
                tmp[d] = z[d] + 0.5 * dt * k2[d];
            }
            self.field(&tmp, &mut k3);
            for d in 0..dim {
                tmp[d] = z[d] + dt * k3[d];
            }
            self.field(&tmp, &mut k4);
            for d in 0..dim {
                z[d] += dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
            }
        }
        z
    }
}

pub fn flow_time1(f: &FTSeries, z0: &[f64], steps: usize) -> Vec<f64> {
    CanonicalFlow::new(f).time1(z0, steps)
}

/// Flow together with the solution of the variational equation
/// M' = A(z) M, A = d(field)/dz. Returns (z(1), M(1)) with M row-major
/// 2n x 2n, M(0) = Id.
pub fn flow_time1_with_jacobian(f: &FTSeries, z0: &[f64], steps: usize) -> (Vec<f64>, Vec<f64>) {
    let n = f.dim();
    let dim = 2 * n;
    assert_eq!(z0.len(), dim);
    let base = CanonicalFlow::new(f);
    // second partials; the action degree is finite so these are exact
    let f_th_i: Vec<Vec<FTSeries>> =
        (0..n).map(|j| (0..n).map(|l| base.f_th[j].partial_i(l)).collect()).collect();
    let f_th_th: Vec<Vec<FTSeries>> =
        (0..n).map(|j| (0..n).map(|l| base.f_th[j].partial_theta(l)).collect()).collect();
    let f_i_i: Vec<Vec<FTSeries>> =
        (0..n).map(|j| (0..n).map(|l| base.f_i[j].partial_i(l)).collect()).collect();
    let f_i_th: Vec<Vec<FTSeries>> =
        (0..n).map(|j| (0..n).map(|l| base.f_i[j].partial_theta(l)).collect()).collect();

    let a_matrix = |z: &[f64], a: &mut [f64]| {
        let (i, th) = z.split_at(n);
        // rows 0..n: d(I')  = -F_{th,I} dI - F_{th,th} dth
        // rows n..:  d(th') =  F_{I,I}  dI + F_{I,th}  dth
        for j in 0..n {
            for l in 0..n {
                a[j * dim + l] = -f_th_i[j][l].eval_real(i, th);
                a[j * dim + n + l] = -f_th_th[j][l].eval_real(i, th);
                a[(n + j) * dim + l] = f_i_i[j][l].eval_real(i, th);
                a[(n + j) * dim + n + l] = f_i_th[j][l].eval_real(i, th);
            }
        }
    };

    let dt = 1.0 / steps as f64;
    let mut z = z0.to_vec();
    let mut m = vec![0.0; dim * dim];
    for d in 0..dim {
        m[d * dim + d] = 1.0;
    }
    let mut kz = vec![vec![0.0; dim]; 4];
    let mut km = vec![vec![0.0; dim * dim]; 4];
    let mut a = vec![0.0; dim * dim];
    let mut ztmp = vec![0.0; dim];
    let mut mtmp = vec![0.0; dim * dim];
    let matmul = |a: &[f64], b: &[f64], out: &mut [f64]| {
        for r in 0..dim {
            for c in 0..dim {
                let mut acc = 0.0;
                for t in 0..dim {
                    acc += a[r * dim + t] * b[t * dim + c];
                }
                out[r * dim + c] = acc;
            }
        }
    };
    for _ in 0..steps {
        for stage in 0..4 {
            let (coef, prev) = match stage {
                0 => (0.0, 0),
                1 => (0.5, 0),
                2 => (0.5, 1),
                _ => (1.0, 2),
            };
            for d in 0..dim {
                ztmp[d] = z[d] + coef * dt * kz[prev][d];
            }
            for d in 0..dim * dim {
                mtmp[d] = m[d] + coef * dt * km[prev][d];
            }
            base.field(&ztmp, &mut kz[stage]);
            a_matrix(&ztmp, &mut a);
            let mut out = std::mem::take(&mut km[stage]);
            matmul(&a, &mtmp, &mut out);
            km[stage] = out;
        }
        for d in 0..dim {
            z[d] += dt / 6.0 * (kz[0][d] + 2.0 * kz[1][d] + 2.0 * kz[2][d] + kz[3][d]);
        }
        for d in 0..dim * dim {
            m[d] += dt / 6.0 * (km[0][d] + 2.0 * km[1][d] + 2.0 * km[2][d] + km[3][d]);
        }
    }
    (z, m)
}

/// The torus embedding theta -> (U(theta), theta + V(theta)) in the
/// original coordinates, as band-limited series fitted on a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusEmbedding {
    pub n: usize,
    pub grid: usize,
    /// action components U_a
    pub u: Vec<FTSeries>,
    /// angle offsets V_a; the embedded angle is theta_a + V_a(theta)
    pub v: Vec<FTSeries>,
    /// grid sups of |U| and |V|
    pub sup_u: f64,
    pub sup_v: f64,
    /// worst interpolation defect of the fitted series on the grid
    pub fit_defect: f64,
}

/// Walks every multi-index in [0, grid)^n.
pub(crate) fn for_each_grid_point(n: usize, grid: usize, mut visit: impl FnMut(&[usize], usize)) {
    let mut idx = vec![0usize; n];
    let mut flat = 0usize;
    loop {
        visit(&idx, flat);
        flat += 1;
        let mut j = n;
        loop {
            if j == 0 {
                return;
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

/// Applies the recorded transformations to the model torus I = 0 and
/// fits each component of the resulting embedding with a band-limited
/// series. Records are applied innermost first, i.e. in reverse order
/// of the steps that produced them.
pub fn embed_torus(
    records: &[TransformRecord],
    n: usize,
    grid: usize,
    k_keep: u32,
    steps: usize,
) -> Result<TorusEmbedding, StepError> {
    if grid < 4 || !grid.is_power_of_two() {
        return Err(StepError::BadParams(format!("grid must be a power of two >= 4, got {grid}")));
    }
    if 2 * k_keep as usize >= grid {
        return Err(StepError::BadParams(format!("k_keep = {k_keep} too large for grid = {grid}")));
    }
    let flows: Vec<CanonicalFlow> =
        records.iter().rev().map(|rec| CanonicalFlow::new(&rec.f_gen)).collect();
    let total = grid.pow(n as u32);
    let step_angle = std::f64::consts::TAU / grid as f64;

    // samples[c][flat]: components U_0..U_{n-1}, V_0..V_{n-1}
    let mut samples = vec![vec![0.0f64; total]; 2 * n];
    for_each_grid_point(n, grid, |idx, flat| {
        let mut z = vec![0.0; 2 * n];
        for j in 0..n {
            z[n + j] = idx[j] as f64 * step_angle;
        }
        for fl in &flows {
            z = fl.time1(&z, steps);
        }
        for j in 0..n {
            samples[j][flat] = z[j];
            samples[n + j][flat] = z[n + j] - idx[j] as f64 * step_angle;
        }
    });

    // per-axis twiddle table: tw[kk][p] = e^{-i kk p step}, kk in 0..=k_keep
    let tw: Vec<Vec<C64>> = (0..=k_keep as usize)
        .map(|kk| {
            (0..grid)
                .map(|p| {
                    let phase = -(kk as f64) * (p as f64) * step_angle;
                    C64::new(phase.cos(), phase.sin())
                })
                .collect()
        })
        .collect();
    let twiddle = |kk: i32, p: usize| -> C64 {
        let t = tw[kk.unsigned_abs() as usize][p];
        if kk < 0 {
            t.conj()
        } else {
            t
        }
    };

    let mut sup_u = 0.0f64;
    let mut sup_v = 0.0f64;
    for (c, comp) in samples.iter().enumerate() {
        let sup = comp.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        if c < n {
            sup_u = sup_u.max(sup);
        } else {
            sup_v = sup_v.max(sup);
        }
    }
    let scale = sup_u.max(sup_v).max(1e-300);

    let mut out: Vec<FTSeries> = Vec::with_capacity(2 * n);
    for comp in &samples {
        // the mode walk fills the box |k_j| <= k_keep, so the l1 band cap
        // must be n k_keep
        let mut series = FTSeries::new(n, 0, k_keep * n as u32);
        let mut kv = vec![-(k_keep as i32); n];
        loop {
            let k = FourierIndex(kv.clone());
            let canonical = k.is_zero() || k.is_canonical();
            if canonical {
                let mut acc = C64::new(0.0, 0.0);
                for_each_grid_point(n, grid, |idx, flat| {
                    let mut w = C64::new(comp[flat], 0.0);
                    for j in 0..n {
                        w *= twiddle(kv[j], idx[j]);
                    }
                    acc += w;
                });
                acc /= total as f64;
                if k.is_zero() {
                    acc = C64::new(acc.re, 0.0);
                }
                if acc.norm() >= 1e-15 * scale {
                    series.set_coeff(ActionDegree::zero(n), k, acc)?;
                }
            }
            let mut j = n;
            let mut done = true;
            loop {
                if j == 0 {
                    break;
                }
                j -= 1;
                if kv[j] < k_keep as i32 {
                    kv[j] += 1;
                    for t in kv.iter_mut().skip(j + 1) {
                        *t = -(k_keep as i32);
                    }
                    done = false;
                    break;
                }
            }
            if done {
                break;
            }
        }
        out.push(series);
    }
    let v = out.split_off(n);
    let u = out;

    // interpolation defect on the grid itself
    let mut fit_defect = 0.0f64;
    for_each_grid_point(n, grid, |idx, flat| {
        let theta: Vec<f64> = idx.iter().map(|&p| p as f64 * step_angle).collect();
        let zero = vec![0.0; n];
        for j in 0..n {
            fit_defect = fit_defect.max((u[j].eval_real(&zero, &theta) - samples[j][flat]).abs());
            fit_defect =
                fit_defect.max((v[j].eval_real(&zero, &theta) - samples[n + j][flat]).abs());
        }
    });

    Ok(TorusEmbedding { n, grid, u, v, sup_u, sup_v, fit_defect })
}

impl TorusEmbedding {
    /// (actions, angles) of the embedded point over theta.
    pub fn eval(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let zero = vec![0.0; self.n];
        let actions = self.u.iter().map(|s| s.eval_real(&zero, theta)).collect();
        let angles =
            self.v.iter().enumerate().map(|(j, s)| theta[j] + s.eval_real(&zero, theta)).collect();
        (actions, angles)
    }
}
