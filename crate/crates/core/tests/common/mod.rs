#![allow(dead_code)]

use evagg::{Study, StudyPool, TargetSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal CDF from statrs, independent of the library's erfc path.
pub fn phi(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// max_{t>=0} t Phi(a - t) by a dense grid followed by golden section.
pub fn eta_oracle(a: f64) -> (f64, f64) {
    let f = |t: f64| t * phi(a - t);
    let hi = a.max(0.0) + 12.0;
    let n = 20_000;
    let mut best = 0;
    for i in 0..=n {
        if f(hi * i as f64 / n as f64) > f(hi * best as f64 / n as f64) {
            best = i;
        }
    }
    let h = hi / n as f64;
    let (mut lo, mut up) = ((best as f64 - 1.0) * h, (best as f64 + 1.0) * h);
    lo = lo.max(0.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let x1 = up - g * (up - lo);
        let x2 = lo + g * (up - lo);
        if f(x1) < f(x2) {
            lo = x1;
        } else {
            up = x2;
        }
    }
    let t = 0.5 * (lo + up);
    (f(t), t)
}

pub fn pool(rows: &[(f64, f64, Vec<f64>)]) -> StudyPool {
    let dx = rows[0].2.len();
    let studies = rows
        .iter()
        .enumerate()
        .map(|(i, (e, s, x))| Study { id: format!("s{}", i + 1), estimate: *e, se: *s, covariates: x.clone() })
        .collect();
    StudyPool::new(studies, (0..dx).map(|j| format!("x{j}")).collect()).unwrap()
}

/// The grid design: K=30, x_k = (k-1)/29, sigma_k = 1.
pub fn grid30() -> StudyPool {
    pool(&(0..30).map(|k| (0.0, 1.0, vec![k as f64 / 29.0])).collect::<Vec<_>>())
}

/// Random pool with K studies, d covariates in [0,1], se in [0.3, 2].
pub fn random_pool(r: &mut ChaCha8Rng, k: usize, d: usize) -> StudyPool {
    let rows: Vec<_> = (0..k)
        .map(|_| (r.random_range(-1.0..1.0), r.random_range(0.3..2.0), (0..d).map(|_| r.random::<f64>()).collect()))
        .collect();
    pool(&rows)
}

pub fn random_target(r: &mut ChaCha8Rng, d: usize) -> TargetSpec {
    TargetSpec::new((0..d).map(|_| r.random::<f64>()).collect(), 0.0)
}

/// Random weights summing to one (entries may be negative).
pub fn random_weights(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| r.random_range(-0.5..1.5)).collect();
    let s: f64 = w.iter().sum();
    if s.abs() < 0.2 {
        w[0] += 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

pub fn sd(w: &[f64], pool: &StudyPool) -> f64 {
    w.iter().zip(pool.ses()).map(|(w, s)| (w * s).powi(2)).sum::<f64>().sqrt()
}
