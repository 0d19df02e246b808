use serde::Serialize;

use crate::error::{input, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const GOLDEN: f64 = 0.618_033_988_749_894_8;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// eta(a) together with its maximizer t*(a).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaValue {
    pub value: f64,
    pub t_star: f64,
}

impl EtaValue {
    /// eta'(a) = Phi(a - t*(a)).
    pub fn slope(&self, a: f64) -> f64 {
        normal_cdf(a - self.t_star)
    }
}

/// eta(a) = max_{t >= 0} t * Phi(a - t), defined for a >= 0.
pub fn eta(a: f64) -> Result<EtaValue> {
    if !(a >= 0.0) || !a.is_finite() {
        return input(format!("eta is defined for finite a >= 0, got {a}"));
    }
    Ok(eta_any(a))
}

/// The same maximization for any finite a. Refined regret bounds can have
/// negative arguments, where the maximizer is still interior.
pub fn eta_any(a: f64) -> EtaValue {
    let f = |t: f64| t * normal_cdf(a - t);
    let (mut lo, mut hi) = (0.0, a.max(0.0) + 10.0);
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-12 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        }
    }
    // Newton on the first-order condition Phi(a - t) = t phi(t - a); the
    // golden bracket is only accurate to about sqrt(machine epsilon) in t.
    let mut t = 0.5 * (lo + hi);
    for _ in 0..4 {
        let u = t - a;
        let g = normal_cdf(-u) - t * normal_pdf(u);
        let dg = normal_pdf(u) * (t * u - 2.0);
        if dg >= 0.0 {
            break;
        }
        let next = t - g / dg;
        if !(next > 0.0) || (next - t).abs() > 1e-6 {
            break;
        }
        t = next;
    }
    EtaValue { value: f(t), t_star: t }
}

/// Piecewise-linear interpolant of eta on [0, a_max] with a linear tail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaTable {
    spacing: f64,
    a_max: f64,
    values: Vec<f64>,
    slope_tail: f64,
}

impl EtaTable {
    pub fn build(a_max: f64, spacing: f64) -> Result<Self> {
        if !(a_max > 0.0) || !(spacing > 0.0) || !a_max.is_finite() {
            return input("eta table needs a_max > 0 and spacing > 0");
        }
        let n = (a_max / spacing).round() as usize;
        if n == 0 {
            return input("eta table spacing exceeds a_max");
        }
        let spacing = a_max / n as f64;
        let values = (0..=n).map(|i| eta_any(i as f64 * spacing).value).collect();
        let last = eta_any(a_max);
        Ok(EtaTable { spacing, a_max, values, slope_tail: last.slope(a_max) })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().enumerate().map(|(i, v)| (i as f64 * self.spacing, *v))
    }

    pub fn slope_tail(&self) -> f64 {
        self.slope_tail
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    /// Interpolated eta(a); arguments below 0 are clamped to 0.
    pub fn eval(&self, a: f64) -> f64 {
        self.eval_with_slope(a).0
    }

    /// Interpolated value and the slope of the active segment.
    pub fn eval_with_slope(&self, a: f64) -> (f64, f64) {
        let a = a.max(0.0);
        let n = self.values.len() - 1;
        if a >= self.a_max {
            return (self.values[n] + self.slope_tail * (a - self.a_max), self.slope_tail);
        }
        let pos = a / self.spacing;
        let i = (pos.floor() as usize).min(n - 1);
        let frac = pos - i as f64;
        let slope = (self.values[i + 1] - self.values[i]) / self.spacing;
        (self.values[i] + frac * (self.values[i + 1] - self.values[i]), slope)
    }
}

impl Default for EtaTable {
    fn default() -> Self {
        EtaTable::build(10.0, 0.01).expect("default eta table")
    }
}
