use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::bias::metric_closure;
use crate::error::{input, Error, Result};
use crate::eta::{eta_any, normal_cdf};
use crate::lp::{LinearProgram, LpOutcome};
use crate::model::{sd_raw, ParameterSpace, StudyPool, TargetSpec, WeightVector};
use crate::nelder_mead::{bfgs_polish, nelder_mead};
use crate::weights::{solve_minimax_regret, SolverConfig};

/// Grid size for the outer maximization over tau_0 when reporting.
pub const REPORT_T_GRID: usize = 512;
/// Coarser grid used inside the weight optimizer.
pub const SEARCH_T_GRID: usize = 64;

/// Data-driven subset of the parameter space.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfidenceRegion {
    /// tau_k in [lower_k, upper_k] for every study, intersected with `space`.
    HyperRectangle { lower: Vec<f64>, upper: Vec<f64>, z: f64, space: ParameterSpace },
    /// {beta : (beta_hat - beta)' S^{-1} (beta_hat - beta) <= chi}, intercept free.
    MetaEllipsoid { beta_hat: Vec<f64>, s: DMatrix<f64>, chi: f64 },
}

/// z with P(|Z| <= z) = (1 - alpha)^(1/K).
pub fn simultaneous_z(alpha: f64, k: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return input(format!("alpha must lie in (0,1), got {alpha}"));
    }
    let level = (1.0 - alpha).powf(1.0 / k as f64);
    let n = Normal::standard();
    Ok(n.inverse_cdf(0.5 * (1.0 + level)))
}

/// (1 - alpha) quantile of the chi-square distribution with `df` degrees.
pub fn chi_square_quantile(alpha: f64, df: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || df == 0 {
        return input("chi-square quantile needs alpha in (0,1) and df >= 1");
    }
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::Input(e.to_string()))?;
    Ok(chi.inverse_cdf(1.0 - alpha))
}

pub fn hyperrectangle_region(pool: &StudyPool, target: &TargetSpec, space: &ParameterSpace, alpha: f64) -> Result<ConfidenceRegion> {
    space.check(pool)?;
    let z = simultaneous_z(alpha, pool.len())?;
    let lower = pool.studies().iter().map(|s| s.estimate - s.se * z).collect();
    let upper = pool.studies().iter().map(|s| s.estimate + s.se * z).collect();
    let region = ConfidenceRegion::HyperRectangle { lower, upper, z, space: space.clone() };
    region.support(pool, target)?;
    Ok(region)
}

pub fn meta_ellipsoid_region(pool: &StudyPool, space: &ParameterSpace, alpha: f64) -> Result<ConfidenceRegion> {
    if !space.is_meta() {
        return input("the meta ellipsoid needs a meta-regression space");
    }
    space.check(pool)?;
    let x = pool.design();
    let p = x.ncols();
    if pool.len() < p {
        return Err(Error::RankDeficient);
    }
    let xtx_inv = x.tr_mul(&x).try_inverse().ok_or(Error::RankDeficient)?;
    let tau = DVector::from_vec(pool.estimates());
    let coef = &xtx_inv * x.tr_mul(&tau);
    let mut meat = DMatrix::zeros(p, p);
    for (k, v) in pool.variances().iter().enumerate() {
        let row = x.row(k);
        meat += (row.transpose() * row) * *v;
    }
    let full = &xtx_inv * meat * &xtx_inv;
    let d = p - 1;
    let s = full.view((1, 1), (d, d)).into_owned();
    let chi = chi_square_quantile(alpha, d)?;
    Ok(ConfidenceRegion::MetaEllipsoid { beta_hat: coef.iter().skip(1).copied().collect(), s, chi })
}

/// Variables and linear rows describing a hyper-rectangle region; tau is
/// recovered from the variables y as tau = map * y (index 0 = target).
struct RegionLp {
    map: DMatrix<f64>,
    rows: Vec<(Vec<f64>, f64)>,
    lattice: Option<Lattice>,
}

/// Lipschitz rows plus a box form a lattice once tau_0 is pinned, so for
/// non-negative weights the LP optimum is its least or greatest element.
struct Lattice {
    dist: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Lattice {
    /// Least (sign > 0) or greatest (sign < 0) feasible tau with tau_0 = t.
    fn extreme(&self, t: f64, sign: f64) -> Option<Vec<f64>> {
        let n = self.lower.len() + 1;
        let lo = |i: usize| if i == 0 { t } else { self.lower[i - 1] };
        let up = |i: usize| if i == 0 { t } else { self.upper[i - 1] };
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let v = if sign > 0.0 {
                (0..n).map(|j| lo(j) - self.dist[(j, k)]).fold(f64::NEG_INFINITY, f64::max)
            } else {
                (0..n).map(|j| up(j) + self.dist[(j, k)]).fold(f64::INFINITY, f64::min)
            };
            let slack = 1e-12 * (1.0 + v.abs());
            if v > up(k) + slack || v < lo(k) - slack {
                return None;
            }
            out.push(v);
        }
        Some(out)
    }
}

impl RegionLp {
    fn new(space: &ParameterSpace, lower: &[f64], upper: &[f64], pool: &StudyPool, target: &TargetSpec) -> Self {
        let k = pool.len();
        let mut rows = Vec::new();
        let mut lattice = None;
        let map = match space {
            ParameterSpace::MetaBox { .. } | ParameterSpace::MetaPolyhedron { .. } => {
                let p = pool.dx() + 1;
                let map = DMatrix::from_fn(k + 1, p, |i, j| if j == 0 { 1.0 } else { pool.point(target, i)[j - 1] });
                let mut slope_row = |coef: Vec<f64>, rhs: f64| {
                    let mut r = vec![0.0; p];
                    r[1..].copy_from_slice(&coef);
                    rows.push((r, rhs));
                };
                match space {
                    ParameterSpace::MetaBox { bounds } => {
                        for (j, b) in bounds.iter().enumerate() {
                            let mut e = vec![0.0; p - 1];
                            e[j] = 1.0;
                            slope_row(e.clone(), *b);
                            e[j] = -1.0;
                            slope_row(e, *b);
                        }
                    }
                    ParameterSpace::MetaPolyhedron { a, c } => {
                        for i in 0..a.nrows() {
                            slope_row(a.row(i).iter().copied().collect(), c[i]);
                        }
                    }
                    _ => unreachable!(),
                }
                map
            }
            _ => {
                let d = metric_closure(&space.pairwise(pool, target).expect("Lipschitz"));
                let n = k + 1;
                for i in 0..n {
                    for j in (i + 1)..n {
                        let implied = (0..n).any(|m| {
                            m != i && m != j && d[(i, m)] > 0.0 && d[(m, j)] > 0.0 && d[(i, m)] + d[(m, j)] <= d[(i, j)] * (1.0 + 1e-12)
                        });
                        if implied {
                            continue;
                        }
                        let mut r = vec![0.0; n];
                        r[i] = 1.0;
                        r[j] = -1.0;
                        rows.push((r.clone(), d[(i, j)]));
                        rows.push((r.iter().map(|v| -v).collect(), d[(i, j)]));
                    }
                }
                lattice = Some(Lattice { dist: d, lower: lower.to_vec(), upper: upper.to_vec() });
                DMatrix::identity(n, n)
            }
        };
        for kk in 0..k {
            let r: Vec<f64> = map.row(kk + 1).iter().copied().collect();
            rows.push((r.clone(), upper[kk]));
            rows.push((r.iter().map(|v| -v).collect(), -lower[kk]));
        }
        RegionLp { map, rows, lattice }
    }

    fn program(&self, objective_tau: &[f64]) -> LinearProgram {
        let obj: Vec<f64> = (0..self.map.ncols()).map(|j| (0..self.map.nrows()).map(|i| objective_tau[i] * self.map[(i, j)]).sum()).collect();
        let mut lp = LinearProgram::maximize(obj);
        for (r, b) in &self.rows {
            lp.leq(r.clone(), *b);
        }
        lp
    }

    fn pin_target(&self, lp: &mut LinearProgram, t: f64) {
        lp.equal(self.map.row(0).iter().copied().collect(), t);
    }
}

impl ConfidenceRegion {
    /// Interval S of tau_0 values compatible with the region.
    pub fn support(&self, pool: &StudyPool, target: &TargetSpec) -> Result<(f64, f64)> {
        match self {
            ConfidenceRegion::MetaEllipsoid { .. } => Ok((f64::NEG_INFINITY, f64::INFINITY)),
            ConfidenceRegion::HyperRectangle { lower, upper, space, .. } => {
                let rl = RegionLp::new(space, lower, upper, pool, target);
                let mut e0 = vec![0.0; pool.len() + 1];
                e0[0] = 1.0;
                let hi = region_value(rl.program(&e0).solve())?;
                e0[0] = -1.0;
                let lo = -region_value(rl.program(&e0).solve())?;
                Ok((lo, hi))
            }
        }
    }

    /// Signed maximum bias b~(t, w) = -min over the region with tau_0 = t of
    /// sgn(t) sum_k w_k (tau_k - t). Zero t counts as positive.
    pub fn signed_bias(&self, t: f64, w: &[f64], pool: &StudyPool, target: &TargetSpec) -> Result<f64> {
        let sign = if t < 0.0 { -1.0 } else { 1.0 };
        match self {
            ConfidenceRegion::MetaEllipsoid { beta_hat, s, chi } => {
                let (bp, bm) = ellipsoid_bias(w, beta_hat, s, *chi, pool, target);
                Ok(if sign > 0.0 { bp } else { bm })
            }
            ConfidenceRegion::HyperRectangle { lower, upper, space, .. } => {
                let rl = RegionLp::new(space, lower, upper, pool, target);
                signed_bias_lp(&rl, t, w)
            }
        }
    }
}

fn region_value(out: LpOutcome) -> Result<f64> {
    match out {
        LpOutcome::Optimal { value, .. } => Ok(value),
        LpOutcome::Infeasible => Err(Error::EmptyRegion),
        LpOutcome::Unbounded => Err(Error::BiasUnbounded),
    }
}

fn signed_bias_lp(rl: &RegionLp, t: f64, w: &[f64]) -> Result<f64> {
    let sign = if t < 0.0 { -1.0 } else { 1.0 };
    if let Some(lat) = &rl.lattice {
        if w.iter().all(|v| *v >= 0.0) {
            if let Some(tau) = lat.extreme(t, sign) {
                let agg: f64 = w.iter().zip(&tau[1..]).map(|(a, b)| a * b).sum();
                return Ok(t.abs() - sign * agg);
            }
        }
    }
    let mut obj = vec![0.0; w.len() + 1];
    for (k, wk) in w.iter().enumerate() {
        obj[k + 1] = -sign * wk;
    }
    let mut lp = rl.program(&obj);
    rl.pin_target(&mut lp, t);
    Ok(region_value(lp.solve())? + t.abs())
}

/// Closed-form signed biases over the meta ellipsoid:
/// b+ = X0'beta_hat + sqrt(chi X0'S X0), b- = -X0'beta_hat + sqrt(chi X0'S X0),
/// with X0 = sum_k w_k (x_0 - x_k).
pub fn ellipsoid_bias(w: &[f64], beta_hat: &[f64], s: &DMatrix<f64>, chi: f64, pool: &StudyPool, target: &TargetSpec) -> (f64, f64) {
    let d = beta_hat.len();
    let mut x0 = DVector::zeros(d);
    for (wk, st) in w.iter().zip(pool.studies()) {
        for j in 0..d {
            x0[j] += wk * (target.x0[j] - st.covariates[j]);
        }
    }
    let center: f64 = x0.iter().zip(beta_hat).map(|(a, b)| a * b).sum();
    let spread = (chi * (x0.transpose() * s * &x0)[(0, 0)]).max(0.0).sqrt();
    (center + spread, -center + spread)
}

/// Worst-case regret of the linear rule over the region, maximizing over
/// tau_0 in S: |t| Phi((b~(t, w) - |t|) / s(w)).
pub fn refined_max_regret(w: &WeightVector, region: &ConfidenceRegion, pool: &StudyPool, target: &TargetSpec) -> Result<f64> {
    if w.len() != pool.len() {
        return input("weight length does not match the pool");
    }
    RefinedObjective::new(region, pool, target)?.value(w.as_slice(), REPORT_T_GRID)
}

struct RefinedObjective<'a> {
    region: &'a ConfidenceRegion,
    pool: &'a StudyPool,
    target: &'a TargetSpec,
    ses: Vec<f64>,
    lp: Option<RegionLp>,
    support: (f64, f64),
}

impl<'a> RefinedObjective<'a> {
    fn new(region: &'a ConfidenceRegion, pool: &'a StudyPool, target: &'a TargetSpec) -> Result<Self> {
        let lp = match region {
            ConfidenceRegion::HyperRectangle { lower, upper, space, .. } => Some(RegionLp::new(space, lower, upper, pool, target)),
            _ => None,
        };
        let support = region.support(pool, target)?;
        Ok(RefinedObjective { region, pool, target, ses: pool.ses(), lp, support })
    }

    fn value(&self, w: &[f64], grid: usize) -> Result<f64> {
        let s = sd_raw(w, &self.ses);
        match self.region {
            ConfidenceRegion::MetaEllipsoid { beta_hat, s: cov, chi } => {
                let (bp, bm) = ellipsoid_bias(w, beta_hat, cov, *chi, self.pool, self.target);
                Ok((s * eta_any(bp / s).value).max(s * eta_any(bm / s).value))
            }
            ConfidenceRegion::HyperRectangle { .. } => {
                let rl = self.lp.as_ref().expect("region LP");
                let regret = |t: f64| -> Result<f64> {
                    if t == 0.0 {
                        return Ok(0.0);
                    }
                    let b = signed_bias_lp(rl, t, w)?;
                    Ok(t.abs() * normal_cdf((b - t.abs()) / s))
                };
                let (lo, hi) = self.support;
                let n = grid.max(2);
                let ts: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
                let vals = ts.iter().map(|&t| regret(t)).collect::<Result<Vec<f64>>>()?;
                let ib = (0..n).fold(0, |m, i| if vals[i] > vals[m] { i } else { m });
                let mut best = vals[ib];
                // golden polish between the neighbours of the best node
                let (mut a, mut b) = (ts[ib.saturating_sub(1)], ts[(ib + 1).min(n - 1)]);
                let g = 0.618_033_988_749_894_8;
                let mut x1 = b - g * (b - a);
                let mut x2 = a + g * (b - a);
                let (mut f1, mut f2) = (regret(x1)?, regret(x2)?);
                for _ in 0..40 {
                    if f1 > f2 {
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - g * (b - a);
                        f1 = regret(x1)?;
                    } else {
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + g * (b - a);
                        f2 = regret(x2)?;
                    }
                    if b - a <= 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
                        break;
                    }
                }
                best = best.max(f1).max(f2);
                Ok(best)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinedSolution {
    pub weights: WeightVector,
    pub refined_max_regret: f64,
}

/// Weights minimizing the refined maximum regret: multistart Nelder-Mead
/// with a quasi-Newton polish, started from the unrefined minimax weights,
/// inverse-variance, uniform and the nearest-study unit vectors.
pub fn solve_refined_minimax(
    pool: &StudyPool,
    target: &TargetSpec,
    region: &ConfidenceRegion,
    base_space: Option<&ParameterSpace>,
    cfg: &SolverConfig,
) -> Result<RefinedSolution> {
    cfg.check()?;
    let k = pool.len();
    if k == 1 {
        let w = WeightVector::unit(1, 0);
        let v = refined_max_regret(&w, region, pool, target)?;
        return Ok(RefinedSolution { weights: w, refined_max_regret: v });
    }
    let obj = RefinedObjective::new(region, pool, target)?;
    // Lipschitz regions are searched over non-negative weights: infeasible
    // points are clipped back onto the simplex and charged a penalty.
    let nonneg = obj.lp.as_ref().is_some_and(|l| l.lattice.is_some());
    let penalty = 1.0 + (obj.support.1 - obj.support.0).abs();
    let full = |z: &[f64]| -> (Vec<f64>, f64) {
        let mut w = z.to_vec();
        w.push(1.0 - z.iter().sum::<f64>());
        if !nonneg {
            return (w, 0.0);
        }
        let neg: f64 = w.iter().map(|v| (-v).max(0.0)).sum();
        w.iter_mut().for_each(|v| *v = v.max(0.0));
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|v| *v /= total);
        } else {
            w = vec![1.0 / k as f64; k];
        }
        (w, neg)
    };
    let f = |z: &[f64]| {
        let (w, neg) = full(z);
        obj.value(&w, SEARCH_T_GRID).map_or(f64::INFINITY, |v| v + penalty * neg)
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    let space = match region {
        ConfidenceRegion::HyperRectangle { space, .. } => Some(space),
        ConfidenceRegion::MetaEllipsoid { .. } => base_space,
    };
    if let Some(space) = space {
        if let Ok(sol) = solve_minimax_regret(pool, target, space, cfg) {
            starts.push(sol.weights.into_vec());
        }
    }
    starts.push(WeightVector::inverse_variance(pool).into_vec());
    starts.push(WeightVector::uniform(k).into_vec());
    let dist: Vec<f64> = pool
        .studies()
        .iter()
        .map(|s| s.covariates.iter().zip(&target.x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .collect();
    let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
    for i in 0..k {
        if dist[i] <= dmin * (1.0 + 1e-12) {
            starts.push(WeightVector::unit(k, i).into_vec());
        }
    }
    starts.truncate(cfg.multistart_count);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let z0 = &s[..k - 1];
        let nm = nelder_mead(f, z0, 0.1, cfg.objective_tol * 1e-3, cfg.max_iters);
        let nm = nelder_mead(f, &nm.x, 0.01, cfg.objective_tol * 1e-3, cfg.max_iters);
        let q = bfgs_polish(f, &nm.x, 50, cfg.objective_tol * 1e-3);
        let (w, _) = full(&q.x);
        let v = obj.value(&w, REPORT_T_GRID)?;
        let better = match &best {
            None => true,
            Some((bw, bv)) => {
                v < bv - cfg.objective_tol * bv.abs()
                    || (v <= bv + cfg.objective_tol * bv.abs() && w.iter().zip(bw).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Less))
            }
        };
        if better {
            best = Some((w, v));
        }
    }
    let (w, _) = best.expect("at least one start");
    let weights = WeightVector::normalized(w)?;
    let v = obj.value(weights.as_slice(), REPORT_T_GRID)?;
    Ok(RefinedSolution { weights, refined_max_regret: v })
}

/// Identified set [lower, upper] of tau_0 when the study effects are known
/// exactly, and the resulting decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiedSetDecision {
    pub lower: f64,
    pub upper: f64,
    /// adopt iff -(lower - c0) <= upper - c0
    pub adopt: bool,
    /// |upper| / (|lower| + |upper|) of the cost-netted set when it straddles 0.
    pub randomized_fraction: Option<f64>,
}

pub fn identified_set_rule(pool: &StudyPool, space: &ParameterSpace, target: &TargetSpec) -> Result<IdentifiedSetDecision> {
    space.check(pool)?;
    target.check(pool)?;
    let tau = pool.estimates();
    let k = pool.len();
    let (lower, upper) = match space {
        ParameterSpace::LipschitzMetric { .. } => {
            let c = space.pairwise(pool, target).expect("Lipschitz");
            for i in 1..=k {
                for j in (i + 1)..=k {
                    if (tau[i - 1] - tau[j - 1]).abs() > c[(i, j)] * (1.0 + 1e-12) + 1e-15 {
                        return Err(Error::EmptyIdentifiedSet);
                    }
                }
            }
            let lo = (1..=k).map(|i| tau[i - 1] - c[(0, i)]).fold(f64::NEG_INFINITY, f64::max);
            let hi = (1..=k).map(|i| tau[i - 1] + c[(0, i)]).fold(f64::INFINITY, f64::min);
            if lo > hi + 1e-12 * (1.0 + lo.abs()) {
                return Err(Error::EmptyIdentifiedSet);
            }
            (lo, hi.max(lo))
        }
        _ => identified_set_lp(pool, space, target)?,
    };
    let (lo, hi) = (lower - target.cost, upper - target.cost);
    let randomized_fraction = (lo < 0.0 && hi > 0.0).then(|| hi.abs() / (lo.abs() + hi.abs()));
    Ok(IdentifiedSetDecision { lower, upper, adopt: -lo <= hi, randomized_fraction })
}

/// LP form of the identified set: min and max of tau_0 with tau_k = tau_hat_k.
pub fn identified_set_lp(pool: &StudyPool, space: &ParameterSpace, target: &TargetSpec) -> Result<(f64, f64)> {
    let tau = pool.estimates();
    let rl = RegionLp::new(space, &tau, &tau, pool, target);
    let mut e0 = vec![0.0; pool.len() + 1];
    e0[0] = 1.0;
    let solve = |obj: &[f64]| -> Result<f64> {
        let mut lp = rl.program(obj);
        for k in 0..pool.len() {
            lp.equal(rl.map.row(k + 1).iter().copied().collect(), tau[k]);
        }
        match lp.solve() {
            LpOutcome::Optimal { value, .. } => Ok(value),
            LpOutcome::Infeasible => Err(Error::EmptyIdentifiedSet),
            LpOutcome::Unbounded => Err(Error::BiasUnbounded),
        }
    };
    let hi = solve(&e0)?;
    e0[0] = -1.0;
    let lo = -solve(&e0)?;
    Ok((lo, hi))
}
