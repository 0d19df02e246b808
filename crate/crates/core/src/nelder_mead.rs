//! Derivative-free Nelder-Mead and a finite-difference BFGS polish.

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2) from an axis-aligned initial simplex of size `step`.
/// Stops when the spread of simplex values falls below `tol` or after
/// `max_evals` evaluations.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: f64, tol: f64, max_evals: usize) -> Minimum {
    let n = x0.len();
    if n == 0 {
        return Minimum { x: vec![], value: f(&[]), evaluations: 1 };
    }
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    loop {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        let spread = (vals[n] - vals[0]).abs();
        let size = pts.iter().skip(1).map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
        if (spread <= tol && size <= tol.sqrt()) || evals >= max_evals {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let p: Vec<f64> = pts[i].iter().zip(&pts[0]).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    vals[i] = f(&p);
                    pts[i] = p;
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).fold(0, |m, i| if vals[i] < vals[m] { i } else { m });
    Minimum { x: pts[best].clone(), value: vals[best], evaluations: evals }
}

/// Quasi-Newton polish with central-difference gradients and a
/// backtracking line search; returns the start if no descent is found.
pub fn bfgs_polish<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], max_iters: usize, tol: f64) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    if n == 0 {
        return Minimum { x, value: fx, evaluations: evals };
    }
    let grad = |f: &mut F, x: &[f64], evals: &mut usize| -> Vec<f64> {
        let mut g = vec![0.0; n];
        let mut p = x.to_vec();
        for j in 0..n {
            let h = 1e-6 * (1.0 + x[j].abs());
            p[j] = x[j] + h;
            let fp = f(&p);
            p[j] = x[j] - h;
            let fm = f(&p);
            p[j] = x[j];
            g[j] = (fp - fm) / (2.0 * h);
        }
        *evals += 2 * n;
        g
    };
    let mut h_inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut g = grad(&mut f, &x, &mut evals);
    for _ in 0..max_iters {
        let dir: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h_inv[i][j] * g[j]).sum::<f64>()).collect();
        let slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if !(slope < 0.0) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            let fn_ = f(&xn);
            evals += 1;
            if fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let improvement = fx - fnew;
        let gn = grad(&mut f, &xn, &mut evals);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        x = xn;
        fx = fnew;
        g = gn;
        if sy > 1e-16 {
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h_inv[i][j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += (1.0 + yhy / sy) * s[i] * s[j] / sy - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        if improvement <= tol {
            break;
        }
    }
    Minimum { x, value: fx, evaluations: evals }
}
