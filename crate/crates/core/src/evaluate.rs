use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bias::max_bias;
use crate::error::{input, Error, Result};
use crate::eta::{eta_any, normal_cdf};
use crate::model::{sd_of, Decision, ParameterSpace, RegretProfile, StudyPool, TargetSpec, WeightVector};
use crate::weights::{hb_weights, ols_weights, solve_mse_with, solve_regret_with, HbPrior, Problem, Solved, SolverConfig};

/// Maximum regret s(w) eta(b(w)/s(w)) with b from the exact bias program.
pub fn max_regret_of(w: &WeightVector, pool: &StudyPool, target: &TargetSpec, space: &ParameterSpace) -> Result<RegretProfile> {
    let b = max_bias(w, space, pool, target)?;
    Ok(RegretProfile::from_bias_sd(b, sd_of(w, pool)))
}

/// Regret of the linear rule at one effect vector tau = (tau_0, ..., tau_K):
/// |tau_0| Phi(-sgn(tau_0) sum_k w_k tau_k / s(w)).
pub fn pointwise_regret(w: &WeightVector, tau: &[f64], pool: &StudyPool) -> Result<f64> {
    if tau.len() != pool.len() + 1 || w.len() != pool.len() {
        return input("tau must have K+1 entries and w K entries");
    }
    if tau[0] == 0.0 {
        return Ok(0.0);
    }
    let s = sd_of(w, pool);
    let m: f64 = w.as_slice().iter().zip(&tau[1..]).map(|(w, t)| w * t).sum();
    Ok(tau[0].abs() * normal_cdf(-tau[0].signum() * m / s))
}

/// Nets the cost from every estimate and adopts iff the aggregate is >= 0.
pub fn decide(pool: &StudyPool, target: &TargetSpec, w: &WeightVector, profile: RegretProfile, rule_name: &str) -> Decision {
    let aggregate = w.as_slice().iter().zip(pool.studies()).map(|(w, s)| w * (s.estimate - target.cost)).sum::<f64>();
    Decision { rule_name: rule_name.to_string(), adopt: aggregate >= 0.0, aggregate, weights: w.clone(), profile }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Minimax,
    Mse,
    Ols,
    Hb,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Minimax => "minimax",
            Rule::Mse => "mse",
            Rule::Ols => "ols",
            Rule::Hb => "hb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleReport {
    pub rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    /// sum_k w_k tau_hat_k
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_over_sd: Option<f64>,
    /// max-regret(rule) / max-regret(minimax)
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    /// ids of studies with weight >= 1/K
    pub heavy_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rules: Vec<RuleReport>,
}

impl ComparisonReport {
    pub fn get(&self, rule: Rule) -> Option<&RuleReport> {
        self.rules.iter().find(|r| r.rule == rule.name())
    }
}

/// Solves every requested rule and scores all of them under `space`,
/// with ratios taken against the minimax regret rule. Failures are
/// recorded per rule.
pub fn compare_rules(
    pool: &StudyPool,
    target: &TargetSpec,
    space: &ParameterSpace,
    cfg: &SolverConfig,
    rules: &[Rule],
    prior: Option<&HbPrior>,
) -> Result<ComparisonReport> {
    if rules.is_empty() {
        return input("no rules requested");
    }
    let problem = Problem::new(pool, target, space)?;
    let mse = solve_mse_with(&problem, pool, target, cfg);
    let minimax = match &mse {
        Ok(m) => solve_regret_with(&problem, pool, target, cfg, m),
        Err(e) => Err(e.clone()),
    };
    let reference = minimax.as_ref().ok().map(|m| m.profile.max_regret);
    let k = pool.len();
    let solved = |rule: Rule| -> Result<Solved> {
        match rule {
            Rule::Minimax => minimax.clone(),
            Rule::Mse => mse.clone(),
            Rule::Ols => profile_of(&problem, ols_weights(pool, target)?),
            Rule::Hb => {
                let prior = prior.ok_or_else(|| Error::Input("hb rule needs a prior".into()))?;
                profile_of(&problem, hb_weights(pool, target, prior)?)
            }
        }
    };
    let rules = rules
        .iter()
        .map(|&rule| match solved(rule) {
            Ok(s) => {
                let estimate = s.weights.as_slice().iter().zip(pool.studies()).map(|(w, st)| w * st.estimate).sum();
                let heavy_ids = s
                    .weights
                    .as_slice()
                    .iter()
                    .zip(pool.studies())
                    .filter(|(w, _)| **w >= 1.0 / k as f64)
                    .map(|(_, st)| st.id.clone())
                    .collect();
                RuleReport {
                    rule: rule.name().into(),
                    estimate: Some(estimate),
                    bias_over_sd: Some(s.profile.bias_over_sd()),
                    ratio: reference.map(|r| s.profile.max_regret / r),
                    decision: Some(decide(pool, target, &s.weights, s.profile, rule.name())),
                    heavy_ids,
                    error: None,
                }
            }
            Err(e) => RuleReport {
                rule: rule.name().into(),
                decision: None,
                estimate: None,
                bias_over_sd: None,
                ratio: None,
                heavy_ids: vec![],
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(ComparisonReport { rules })
}

fn profile_of(problem: &Problem, w: WeightVector) -> Result<Solved> {
    let profile = problem.profile(w.as_slice())?;
    Ok(Solved { weights: w, profile })
}

/// Minimax regret weights and decision for one target.
pub fn solve_decision(pool: &StudyPool, target: &TargetSpec, space: &ParameterSpace, cfg: &SolverConfig) -> Result<Decision> {
    let s = crate::weights::solve_minimax_regret(pool, target, space, cfg)?;
    Ok(decide(pool, target, &s.weights, s.profile, "minimax"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvPoint {
    pub c: f64,
    /// (1/K) sum_k tau_hat_k d_k(C); None when a fold failed
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub best_c: f64,
    pub grid: Vec<CvPoint>,
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| 10f64.powf(lo.log10() + (hi.log10() - lo.log10()) * i as f64 / (n - 1) as f64)).collect()
}

/// Leave-one-out choice of the Lipschitz constant: each study in turn is
/// the target, minimax weights are fitted on the rest, and C is scored by
/// the realized welfare (1/K) sum_k tau_hat_k d_k(C). Ties go to the
/// smallest C.
pub fn cross_validate_c(pool: &StudyPool, grid: &[f64], cfg: &SolverConfig) -> Result<CvResult> {
    if grid.is_empty() {
        return input("cross-validation grid is empty");
    }
    if pool.len() < 2 {
        return input("cross-validation needs at least two studies");
    }
    if grid.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return input("cross-validation grid values must be finite and non-negative");
    }
    let k = pool.len();
    let folds: Vec<(StudyPool, TargetSpec, f64)> = (0..k)
        .map(|i| {
            let st = &pool.studies()[i];
            Ok((pool.without(i)?, TargetSpec::new(st.covariates.clone(), 0.0), st.estimate))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    for &c in grid {
        let space = ParameterSpace::LipschitzMetric { c };
        let mut total = 0.0;
        let mut err = None;
        for (rest, target, tau) in &folds {
            match solve_decision(rest, target, &space, cfg) {
                Ok(d) => {
                    let agg: f64 = d.weights.as_slice().iter().zip(rest.studies()).map(|(w, s)| w * s.estimate).sum();
                    if agg >= 0.0 {
                        total += tau;
                    }
                }
                Err(e) => {
                    err = Some(e.to_string());
                    break;
                }
            }
        }
        points.push(match err {
            None => CvPoint { c, score: Some(total / k as f64), error: None },
            Some(e) => CvPoint { c, score: None, error: Some(e) },
        });
    }
    let best = points
        .iter()
        .filter_map(|p| p.score.map(|s| (p.c, s)))
        .fold(None, |acc: Option<(f64, f64)>, (c, s)| match acc {
            None => Some((c, s)),
            Some((bc, bs)) => {
                if s > bs || (s == bs && c < bc) {
                    Some((c, s))
                } else {
                    Some((bc, bs))
                }
            }
        })
        .ok_or_else(|| Error::NonConvergence("every cross-validation grid point failed".into()))?;
    Ok(CvResult { best_c: best.0, grid: points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Directional {
    pub dregret: f64,
    pub db: f64,
    pub ds: f64,
}

/// One-sided finite differences of max-regret, b and s along
/// (1 - h) w + h theta.
pub fn directional_diagnostic(
    w: &WeightVector,
    theta: &WeightVector,
    pool: &StudyPool,
    target: &TargetSpec,
    space: &ParameterSpace,
    h: f64,
) -> Result<Directional> {
    if !(h > 0.0) {
        return input("step must be positive");
    }
    let p0 = max_regret_of(w, pool, target, space)?;
    let moved: Vec<f64> = w.as_slice().iter().zip(theta.as_slice()).map(|(a, b)| (1.0 - h) * a + h * b).collect();
    let p1 = max_regret_of(&WeightVector::normalized(moved)?, pool, target, space)?;
    Ok(Directional { dregret: (p1.max_regret - p0.max_regret) / h, db: (p1.bias - p0.bias) / h, ds: (p1.sd - p0.sd) / h })
}

/// Analytic directional derivative Phi(b/s - t*) (ds (t* - b/s) + db).
pub fn directional_closed_form(profile: &RegretProfile, db: f64, ds: f64) -> f64 {
    let a = profile.bias / profile.sd;
    let e = eta_any(a);
    normal_cdf(a - e.t_star) * (ds * (e.t_star - a) + db)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatCell {
    pub x: f64,
    pub y: f64,
    pub estimate: f64,
}

/// Minimax estimate tau_hat_0(w_minimax) for each target in `cells`,
/// keyed by the caller's (x, y) coordinates and kept in input order.
pub fn heatmap(pool: &StudyPool, cells: &[(f64, f64, TargetSpec)], space: &ParameterSpace, cfg: &SolverConfig) -> Result<Vec<HeatCell>> {
    cells
        .iter()
        .map(|(x, y, target)| {
            let s = crate::weights::solve_minimax_regret(pool, target, space, cfg)?;
            let estimate = s.weights.as_slice().iter().zip(pool.studies()).map(|(w, st)| w * st.estimate).sum();
            Ok(HeatCell { x: *x, y: *y, estimate })
        })
        .collect()
}

/// Weighted least squares of tau_hat on (1, x) with weights 1/sigma_k^2;
/// returns the coefficients (intercept first).
pub fn wls_coefficients(pool: &StudyPool) -> Result<Vec<f64>> {
    let x = pool.design();
    if pool.len() < x.ncols() {
        return Err(Error::RankDeficient);
    }
    let var = pool.variances();
    let xs = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] / var[i]);
    let xtx = x.tr_mul(&xs);
    let rhs = xs.tr_mul(&DVector::from_vec(pool.estimates()));
    let sol = xtx.cholesky().ok_or(Error::RankDeficient)?.solve(&rhs);
    Ok(sol.iter().copied().collect())
}
