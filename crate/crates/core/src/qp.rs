//! Primal-dual interior-point method (Mehrotra predictor-corrector) for
//! small dense convex QPs: min 1/2 x'Qx + c'x s.t. Ax <= b.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Constraint rows stored sparsely as (column, coefficient) pairs.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
}

fn row_dot(row: &SparseRow, x: &DVector<f64>) -> f64 {
    row.iter().map(|&(j, a)| a * x[j]).sum()
}

pub fn solve_qp(q: &DMatrix<f64>, c: &DVector<f64>, a: &[SparseRow], b: &[f64], tol: f64) -> Result<QpSolution> {
    let n = c.len();
    let m = a.len();
    let mut x = DVector::zeros(n);
    let scale_b = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale_c = 1.0 + c.amax() + q.amax();
    let mut s: Vec<f64> = (0..m).map(|i| (b[i] - row_dot(&a[i], &x)).max(scale_b * 1e-2)).collect();
    let mut z: Vec<f64> = vec![1.0; m];
    let mut best = (x.clone(), f64::INFINITY, 0usize);

    for it in 0..200 {
        let ax: Vec<f64> = a.iter().map(|r| row_dot(r, &x)).collect();
        let mut rd = q * &x + c;
        for i in 0..m {
            for &(j, aij) in &a[i] {
                rd[j] += aij * z[i];
            }
        }
        let rp: Vec<f64> = (0..m).map(|i| ax[i] + s[i] - b[i]).collect();
        let mu = if m > 0 { s.iter().zip(&z).map(|(s, z)| s * z).sum::<f64>() / m as f64 } else { 0.0 };
        let rp_norm = rp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rd_norm = rd.amax() / scale_c;
        let (rp_rel, mu_rel) = (rp_norm / scale_b, mu / scale_b);
        let merit = rd_norm.max(rp_rel).max(mu_rel);
        if merit <= tol {
            return Ok(QpSolution { x, iterations: it });
        }
        if merit < best.1 {
            best = (x.clone(), merit, it);
        } else if it >= best.2 + 10 && best.1 <= tol.sqrt() {
            // stalled at the limit of double precision; accept the best iterate
            return Ok(QpSolution { x: best.0, iterations: it });
        }

        let mut h = q.clone();
        for i in 0..m {
            let d = z[i] / s[i];
            for &(j, aj) in &a[i] {
                for &(k, ak) in &a[i] {
                    h[(j, k)] += d * aj * ak;
                }
            }
        }
        let chol = factor(h)?;

        let solve_dir = |rc: &[f64]| -> (DVector<f64>, Vec<f64>, Vec<f64>) {
            let mut rhs = -&rd;
            for i in 0..m {
                let t = (rc[i] - z[i] * rp[i]) / s[i];
                for &(j, aij) in &a[i] {
                    rhs[j] += aij * t;
                }
            }
            let dx = chol.solve(&rhs);
            let adx: Vec<f64> = a.iter().map(|r| row_dot(r, &dx)).collect();
            let dz: Vec<f64> = (0..m).map(|i| (-rc[i] + z[i] * rp[i] + z[i] * adx[i]) / s[i]).collect();
            let ds: Vec<f64> = (0..m).map(|i| -rp[i] - adx[i]).collect();
            (dx, ds, dz)
        };
        let max_step = |v: &[f64], dv: &[f64]| -> f64 {
            v.iter().zip(dv).fold(1.0f64, |al, (v, d)| if *d < 0.0 { al.min(-v / d) } else { al })
        };

        // predictor
        let rc_aff: Vec<f64> = (0..m).map(|i| s[i] * z[i]).collect();
        let (_, ds_a, dz_a) = solve_dir(&rc_aff);
        let ap = max_step(&s, &ds_a);
        let ad = max_step(&z, &dz_a);
        let mu_aff = if m > 0 {
            (0..m).map(|i| (s[i] + ap * ds_a[i]) * (z[i] + ad * dz_a[i])).sum::<f64>() / m as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };
        // corrector
        let rc: Vec<f64> = (0..m).map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu).collect();
        let (dx, ds, dz) = solve_dir(&rc);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += alpha * dx;
        for i in 0..m {
            s[i] = (s[i] + alpha * ds[i]).max(1e-300);
            z[i] = (z[i] + alpha * dz[i]).max(1e-300);
        }
    }
    if best.1 <= tol.sqrt() {
        return Ok(QpSolution { x: best.0, iterations: 200 });
    }
    Err(Error::NonConvergence("interior-point method hit the iteration limit".into()))
}

/// Cholesky factor of the Newton matrix. Nearly active rows make z/s huge,
/// which can swamp the curvature along the all-ones direction; a tiny
/// diagonal shift restores definiteness at the cost of an inexact step.
fn factor(h: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let top = h.diagonal().amax().max(1e-300);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut m = h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        if let Some(c) = m.cholesky() {
            return Ok(c);
        }
        shift = if shift == 0.0 { top * 1e-14 } else { shift * 100.0 };
    }
    Err(Error::Singular("interior-point Newton system"))
}
