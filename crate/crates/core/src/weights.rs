use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bias::BiasEvaluator;
use crate::error::{input, Error, Result};
use crate::eta::{normal_cdf, EtaTable};
use crate::model::{sd_raw, ParameterSpace, RegretProfile, StudyPool, TargetSpec, WeightVector};
use crate::nelder_mead::{bfgs_polish, nelder_mead};
use crate::qp::{solve_qp, SparseRow};

/// Above this b/s the regret is decreasing in s, so the optimum can leave
/// the (b, s) frontier and the family search is no longer conclusive.
const FRONTIER_LIMIT: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub multistart_count: usize,
    pub objective_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub eta_a_max: f64,
    pub eta_spacing: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { multistart_count: 16, objective_tol: 1e-9, max_iters: 4000, seed: 0, eta_a_max: 10.0, eta_spacing: 0.01 }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        if self.multistart_count == 0 {
            return input("multistart_count must be at least 1");
        }
        if !(self.objective_tol > 0.0) {
            return input("objective_tol must be positive");
        }
        if !(self.eta_a_max > 0.0) || !(self.eta_spacing > 0.0) {
            return input("eta table parameters must be positive");
        }
        Ok(())
    }

    pub(crate) fn eta_table(&self) -> Result<EtaTable> {
        static DEFAULT: OnceLock<EtaTable> = OnceLock::new();
        if self.eta_a_max == 10.0 && self.eta_spacing == 0.01 {
            Ok(DEFAULT.get_or_init(EtaTable::default).clone())
        } else {
            EtaTable::build(self.eta_a_max, self.eta_spacing)
        }
    }
}

/// Weights plus their regret profile (computed with the exact eta).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solved {
    pub weights: WeightVector,
    pub profile: RegretProfile,
}

/// Everything the weight searches need about one (pool, target, space).
pub(crate) struct Problem {
    pub ses: Vec<f64>,
    pub bias: BiasEvaluator,
    family: Family,
    nearest: Vec<usize>,
    k: usize,
}

impl Problem {
    pub fn new(pool: &StudyPool, target: &TargetSpec, space: &ParameterSpace) -> Result<Self> {
        let bias = BiasEvaluator::new(space, pool, target)?;
        let family = Family::new(pool, target, space, &bias);
        let dist: Vec<f64> = match bias.distances() {
            Some(d) => (1..=pool.len()).map(|k| d[(0, k)]).collect(),
            None => pool
                .studies()
                .iter()
                .map(|s| s.covariates.iter().zip(&target.x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .collect(),
        };
        let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let nearest = (0..pool.len()).filter(|&k| dist[k] <= dmin * (1.0 + 1e-12)).collect();
        Ok(Problem { ses: pool.ses(), bias, family, nearest, k: pool.len() })
    }

    pub fn profile(&self, w: &[f64]) -> Result<RegretProfile> {
        Ok(RegretProfile::from_bias_sd(self.bias.eval(w)?, sd_raw(w, &self.ses)))
    }

    fn inverse_variance(&self) -> Vec<f64> {
        let inv: Vec<f64> = self.ses.iter().map(|s| 1.0 / (s * s)).collect();
        let tot: f64 = inv.iter().sum();
        inv.iter().map(|v| v / tot).collect()
    }
}

/// One-parameter family of weights traced by a convex QP whose constraint
/// set is scaled by rho. Its members are the (b, s) efficient weights: rho
/// near 0 gives inverse-variance weights, large rho the least-biased ones.
enum Family {
    /// Potentials v on the classes of zero-distance nodes; w_k is
    /// proportional to v_class(k) / sigma_k^2.
    Lipschitz { class: Vec<usize>, q: DMatrix<f64>, c: DVector<f64>, rows: Vec<(SparseRow, f64)> },
    /// Meta-regression coefficients (beta_0, beta) on the active columns;
    /// w_k is proportional to x_k'beta / sigma_k^2.
    Meta { x: DMatrix<f64>, q: DMatrix<f64>, c: DVector<f64>, rows: Vec<(SparseRow, f64)> },
    /// b(w) is identically zero.
    Flat,
}

impl Family {
    fn new(pool: &StudyPool, target: &TargetSpec, space: &ParameterSpace, bias: &BiasEvaluator) -> Self {
        let var = pool.variances();
        match space {
            ParameterSpace::MetaBox { .. } | ParameterSpace::MetaPolyhedron { .. } => {
                let (active, base_rows): (Vec<usize>, Vec<(SparseRow, f64)>) = match space {
                    ParameterSpace::MetaBox { bounds } => {
                        let active: Vec<usize> = (0..pool.dx()).filter(|&j| bounds[j] > 0.0).collect();
                        let rows = active
                            .iter()
                            .enumerate()
                            .flat_map(|(p, &j)| [(vec![(p + 1, 1.0)], bounds[j]), (vec![(p + 1, -1.0)], bounds[j])])
                            .collect();
                        (active, rows)
                    }
                    ParameterSpace::MetaPolyhedron { a, c } => {
                        let rows = (0..a.nrows())
                            .map(|i| {
                                let r: SparseRow =
                                    (0..a.ncols()).filter(|&j| a[(i, j)] != 0.0).map(|j| (j + 1, a[(i, j)])).collect();
                                (r, c[i])
                            })
                            .collect();
                        ((0..pool.dx()).collect(), rows)
                    }
                    _ => unreachable!(),
                };
                if active.is_empty() {
                    return Family::Flat;
                }
                let k = pool.len();
                let x = DMatrix::from_fn(k, active.len() + 1, |i, j| {
                    if j == 0 {
                        1.0
                    } else {
                        pool.studies()[i].covariates[active[j - 1]]
                    }
                });
                let mut xs = x.clone();
                for i in 0..k {
                    for j in 0..xs.ncols() {
                        xs[(i, j)] /= var[i];
                    }
                }
                let q = x.tr_mul(&xs);
                let c = -DVector::from_fn(active.len() + 1, |j, _| if j == 0 { 1.0 } else { target.x0[active[j - 1]] });
                Family::Meta { x, q, c, rows: base_rows }
            }
            _ => {
                let d = bias.distances().expect("Lipschitz distances");
                let n = d.nrows();
                let scale = d.amax();
                if !(scale > 0.0) {
                    return Family::Flat;
                }
                // merge nodes at zero distance: their potentials must coincide
                let mut class = vec![usize::MAX; n];
                let mut reps = Vec::new();
                for i in 0..n {
                    if class[i] == usize::MAX {
                        class[i] = reps.len();
                        for j in (i + 1)..n {
                            if class[j] == usize::MAX && d[(i, j)] <= 1e-12 * scale {
                                class[j] = reps.len();
                            }
                        }
                        reps.push(i);
                    }
                }
                let g = reps.len();
                if g == 1 {
                    return Family::Flat;
                }
                let mut q = DMatrix::zeros(g, g);
                for k in 1..n {
                    q[(class[k], class[k])] += 1.0 / var[k - 1];
                }
                let mut c = DVector::zeros(g);
                c[class[0]] = -1.0;
                let mut rows = Vec::new();
                for a in 0..g {
                    for b in (a + 1)..g {
                        let dab = d[(reps[a], reps[b])];
                        let implied =
                            (0..g).any(|m| m != a && m != b && d[(reps[a], reps[m])] + d[(reps[m], reps[b])] <= dab * (1.0 + 1e-9));
                        if !implied {
                            rows.push((vec![(a, 1.0), (b, -1.0)], dab));
                            rows.push((vec![(a, -1.0), (b, 1.0)], dab));
                        }
                    }
                }
                Family::Lipschitz { class, q, c, rows }
            }
        }
    }

    fn weights(&self, rho: f64, var: &[f64]) -> Result<Vec<f64>> {
        let raw: Vec<f64> = match self {
            Family::Flat => var.iter().map(|v| 1.0 / v).collect(),
            Family::Lipschitz { class, q, c, rows } => {
                let (a, b) = split_rows(rows, rho);
                let v = solve_qp(q, c, &a, &b, 1e-11)?.x;
                (0..var.len()).map(|k| v[class[k + 1]] / var[k]).collect()
            }
            Family::Meta { x, q, c, rows } => {
                let (a, b) = split_rows(rows, rho);
                let beta = solve_qp(q, c, &a, &b, 1e-11)?.x;
                let fit = x * beta;
                (0..var.len()).map(|k| fit[k] / var[k]).collect()
            }
        };
        Ok(WeightVector::normalized(raw)?.into_vec())
    }
}

fn split_rows(rows: &[(SparseRow, f64)], rho: f64) -> (Vec<SparseRow>, Vec<f64>) {
    (rows.iter().map(|r| r.0.clone()).collect(), rows.iter().map(|r| rho * r.1).collect())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Objective {
    Regret,
    Mse,
}

struct Search<'a> {
    problem: &'a Problem,
    table: EtaTable,
    objective: Objective,
}

impl Search<'_> {
    fn value(&self, w: &[f64]) -> f64 {
        let b = match self.problem.bias.eval(w) {
            Ok(b) => b,
            Err(_) => return f64::INFINITY,
        };
        let s = sd_raw(w, &self.problem.ses);
        match self.objective {
            Objective::Regret => s * self.table.eval(b / s),
            Objective::Mse => b * b + s * s,
        }
    }

    /// Grid over u = log10(rho / rho_ref), then golden-section refinement
    /// around the best grid point.
    fn along_family(&self, var: &[f64]) -> Result<(Vec<f64>, f64)> {
        let p = self.problem;
        let iv = p.inverse_variance();
        let b_iv = p.bias.eval(&iv)?;
        if matches!(p.family, Family::Flat) || b_iv <= 0.0 {
            let v = self.value(&iv);
            return Ok((iv, v));
        }
        let total_precision: f64 = var.iter().map(|v| 1.0 / v).sum();
        let rho_ref = 1.0 / (total_precision * b_iv);
        let eval = |u: f64| -> Result<(Vec<f64>, f64)> {
            let w = p.family.weights(rho_ref * 10f64.powf(u), var)?;
            let v = self.value(&w);
            Ok((w, v))
        };
        let step = 0.125;
        let (mut lo, mut hi) = (-4.0, 6.0);
        let mut grid: Vec<(f64, Vec<f64>, f64)> = Vec::new();
        let mut u = lo;
        while u <= hi + 1e-9 {
            let (w, v) = eval(u)?;
            grid.push((u, w, v));
            u += step;
        }
        // extend the grid while the minimum sits on an edge
        for _ in 0..4 {
            let ib = argmin(grid.iter().map(|g| g.2));
            if ib == grid.len() - 1 {
                for i in 1..=16 {
                    let u = hi + i as f64 * step;
                    let (w, v) = eval(u)?;
                    grid.push((u, w, v));
                }
                hi += 16.0 * step;
            } else if ib == 0 {
                let mut front = Vec::new();
                for i in (1..=16).rev() {
                    let u = lo - i as f64 * step;
                    let (w, v) = eval(u)?;
                    front.push((u, w, v));
                }
                lo -= 16.0 * step;
                front.append(&mut grid);
                grid = front;
            } else {
                break;
            }
        }
        let ib = argmin(grid.iter().map(|g| g.2));
        let (mut best_w, mut best_v) = (grid[ib].1.clone(), grid[ib].2);
        let a = grid[ib.saturating_sub(1)].0;
        let b = grid[(ib + 1).min(grid.len() - 1)].0;
        let golden = 0.618_033_988_749_894_8;
        let (mut lo, mut hi) = (a, b);
        let mut x1 = hi - golden * (hi - lo);
        let mut x2 = lo + golden * (hi - lo);
        let (mut r1, mut r2) = (eval(x1)?, eval(x2)?);
        while hi - lo > 1e-7 {
            if r1.1 < r2.1 {
                hi = x2;
                x2 = x1;
                r2 = r1;
                x1 = hi - golden * (hi - lo);
                r1 = eval(x1)?;
            } else {
                lo = x1;
                x1 = x2;
                r1 = r2;
                x2 = lo + golden * (hi - lo);
                r2 = eval(x2)?;
            }
        }
        for (w, v) in [r1, r2] {
            if v < best_v {
                best_v = v;
                best_w = w;
            }
        }
        Ok((best_w, best_v))
    }

    /// Multistart Nelder-Mead plus quasi-Newton polish in the coordinates
    /// (w_1..w_{K-1}), with w_K = 1 - sum of the rest.
    fn polish(&self, starts: &[Vec<f64>], cfg: &SolverConfig) -> Vec<(Vec<f64>, f64)> {
        let k = self.problem.k;
        let full = |z: &[f64]| -> Vec<f64> {
            let mut w = z.to_vec();
            w.push(1.0 - z.iter().sum::<f64>());
            w
        };
        let f = |z: &[f64]| self.value(&full(z));
        starts
            .iter()
            .map(|s| {
                let z0 = &s[..k - 1];
                let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0 / k as f64);
                let nm = nelder_mead(f, z0, 0.1 * scale, cfg.objective_tol * 1e-3, cfg.max_iters);
                let nm2 = nelder_mead(f, &nm.x, 0.01 * scale, cfg.objective_tol * 1e-3, cfg.max_iters);
                let q = bfgs_polish(f, &nm2.x, 200, cfg.objective_tol * 1e-3);
                let w = full(&q.x);
                let v = self.value(&w);
                (w, v)
            })
            .collect()
    }
}

fn argmin(vals: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in vals.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Lowest objective wins; candidates within `tol` of it are broken by the
/// lexicographically smallest weight vector.
fn pick_best(cands: Vec<(Vec<f64>, f64)>, tol: f64) -> (Vec<f64>, f64) {
    let best = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let slack = tol * best.abs().max(1e-300);
    cands
        .into_iter()
        .filter(|c| c.1 <= best + slack)
        .min_by(|a, b| {
            a.0.iter().zip(&b.0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one candidate")
}

fn finish(problem: &Problem, w: Vec<f64>) -> Result<Solved> {
    let weights = WeightVector::normalized(w)?;
    let profile = problem.profile(weights.as_slice())?;
    Ok(Solved { weights, profile })
}

fn forced_single(problem: &Problem) -> Option<Result<Solved>> {
    (problem.k == 1).then(|| finish(problem, vec![1.0]))
}

fn start_points(problem: &Problem, pool: &StudyPool, target: &TargetSpec, extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut starts: Vec<Vec<f64>> = extra.to_vec();
    if let Ok(w) = ols_weights(pool, target) {
        starts.push(w.into_vec());
    }
    starts.push(problem.inverse_variance());
    starts.push(WeightVector::uniform(pool.len()).into_vec());
    for &k in &problem.nearest {
        starts.push(WeightVector::unit(pool.len(), k).into_vec());
    }
    starts
}

/// Minimizes b(w)^2 + s(w)^2 over weights summing to one. The optimum lies
/// on the efficient family, so a 1-D search is exact; the classical starts
/// are checked against it as a certificate.
pub fn solve_minimax_mse(pool: &StudyPool, target: &TargetSpec, space: &ParameterSpace, cfg: &SolverConfig) -> Result<Solved> {
    cfg.check()?;
    let problem = Problem::new(pool, target, space)?;
    solve_mse_with(&problem, pool, target, cfg)
}

pub(crate) fn solve_mse_with(problem: &Problem, pool: &StudyPool, target: &TargetSpec, cfg: &SolverConfig) -> Result<Solved> {
    if let Some(s) = forced_single(problem) {
        return s;
    }
    let search = Search { problem, table: cfg.eta_table()?, objective: Objective::Mse };
    let (w, v) = search.along_family(&pool.variances())?;
    let mut cands = vec![(w, v)];
    let starts = start_points(problem, pool, target, &[]);
    let better: Vec<Vec<f64>> =
        starts.into_iter().filter(|s| search.value(s) < v * (1.0 - cfg.objective_tol)).take(cfg.multistart_count).collect();
    cands.extend(search.polish(&better, cfg));
    let (w, _) = pick_best(cands, cfg.objective_tol);
    finish(problem, w)
}

/// Minimizes the maximum regret s(w) eta(b(w)/s(w)). The search runs along
/// the efficient family; when the best point has b/s beyond the frontier
/// limit, or a classical start beats it, multistart Nelder-Mead and a
/// quasi-Newton polish take over.
pub fn solve_minimax_regret(pool: &StudyPool, target: &TargetSpec, space: &ParameterSpace, cfg: &SolverConfig) -> Result<Solved> {
    cfg.check()?;
    let problem = Problem::new(pool, target, space)?;
    let mse = solve_mse_with(&problem, pool, target, cfg)?;
    solve_regret_with(&problem, pool, target, cfg, &mse)
}

pub(crate) fn solve_regret_with(
    problem: &Problem,
    pool: &StudyPool,
    target: &TargetSpec,
    cfg: &SolverConfig,
    mse: &Solved,
) -> Result<Solved> {
    if let Some(s) = forced_single(problem) {
        return s;
    }
    let search = Search { problem, table: cfg.eta_table()?, objective: Objective::Regret };
    let (w, v) = search.along_family(&pool.variances())?;
    let ratio = problem.profile(&w)?.bias_over_sd();
    let starts = start_points(problem, pool, target, &[mse.weights.as_slice().to_vec()]);
    let beaten = starts.iter().any(|s| search.value(s) < v * (1.0 - cfg.objective_tol));
    let mut cands = vec![(w.clone(), v)];
    if ratio >= FRONTIER_LIMIT || beaten {
        let mut ordered = vec![w.clone()];
        let mut rest: Vec<(Vec<f64>, f64)> = starts.into_iter().map(|s| {
            let v = search.value(&s);
            (s, v)
        }).collect();
        rest.sort_by(|a, b| a.1.total_cmp(&b.1));
        ordered.extend(rest.into_iter().map(|r| r.0));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        while ordered.len() < cfg.multistart_count {
            let jitter: Vec<f64> = w.iter().map(|x| x + 0.1 / pool.len() as f64 * (rng.random::<f64>() - 0.5)).collect();
            let s: f64 = jitter.iter().sum();
            ordered.push(jitter.iter().map(|x| x / s).collect());
        }
        ordered.truncate(cfg.multistart_count);
        cands.extend(search.polish(&ordered, cfg));
    }
    let (w, _) = pick_best(cands, cfg.objective_tol);
    finish(problem, w)
}

/// OLS plug-in weights w' = x0~'(X'X)^{-1}X' with an intercept column.
pub fn ols_weights(pool: &StudyPool, target: &TargetSpec) -> Result<WeightVector> {
    target.check(pool)?;
    let x = pool.design();
    if pool.len() < x.ncols() {
        return Err(Error::RankDeficient);
    }
    let xtx = x.tr_mul(&x);
    let sv = xtx.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::RankDeficient);
    }
    let x0 = DVector::from_iterator(x.ncols(), std::iter::once(1.0).chain(target.x0.iter().copied()));
    let chol = xtx.cholesky().ok_or(Error::RankDeficient)?;
    let coef = x * chol.solve(&x0);
    WeightVector::normalized(coef.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum HbPrior {
    /// N(0, Sigma) prior on (beta_0, beta')'.
    MetaGaussian { sigma_beta: DMatrix<f64> },
    /// tau ~ N(0, v exp(-||x_k - x_l|| / a)) over target and studies.
    KernelGaussian { variance: f64, lengthscale: f64 },
}

/// Posterior-mean weights of the Gaussian hierarchical model, normalized
/// to sum to one.
pub fn hb_weights(pool: &StudyPool, target: &TargetSpec, prior: &HbPrior) -> Result<WeightVector> {
    target.check(pool)?;
    let var = pool.variances();
    let raw: Vec<f64> = match prior {
        HbPrior::MetaGaussian { sigma_beta } => {
            let x = pool.design();
            if sigma_beta.nrows() != x.ncols() || sigma_beta.ncols() != x.ncols() {
                return input(format!("prior covariance must be {0}x{0}", x.ncols()));
            }
            let prior_prec = sigma_beta.clone().cholesky().ok_or(Error::Singular("prior covariance"))?.inverse();
            let mut xs = x.clone();
            for i in 0..x.nrows() {
                for j in 0..x.ncols() {
                    xs[(i, j)] /= var[i];
                }
            }
            let post = prior_prec + x.tr_mul(&xs);
            let x0 = DVector::from_iterator(x.ncols(), std::iter::once(1.0).chain(target.x0.iter().copied()));
            let m = post.cholesky().ok_or(Error::Singular("posterior precision"))?.solve(&x0);
            (xs * m).iter().copied().collect()
        }
        HbPrior::KernelGaussian { variance, lengthscale } => {
            if !(*variance > 0.0) || !(*lengthscale > 0.0) {
                return input("kernel prior needs positive variance and lengthscale");
            }
            let cov = kernel_covariance(pool, target, *variance, *lengthscale);
            let k = pool.len();
            let s12 = DVector::from_fn(k, |i, _| cov[(0, i + 1)]);
            let s22 = cov.view((1, 1), (k, k)).into_owned();
            posterior_coefficients(&s12, &s22, &var)?.iter().copied().collect()
        }
    };
    WeightVector::normalized(raw)
}

/// (K+1)x(K+1) prior covariance v exp(-||x_i - x_j|| / a), index 0 = target.
pub fn kernel_covariance(pool: &StudyPool, target: &TargetSpec, variance: f64, lengthscale: f64) -> DMatrix<f64> {
    let n = pool.len() + 1;
    DMatrix::from_fn(n, n, |i, j| {
        let d = euclid(pool.point(target, i), pool.point(target, j));
        variance * (-d / lengthscale).exp()
    })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// Coefficients of E[tau_0 | tau_hat] = Sigma_12 (Sigma_22 + Sigma)^{-1} tau_hat.
pub fn posterior_coefficients(s12: &DVector<f64>, s22: &DMatrix<f64>, var: &[f64]) -> Result<DVector<f64>> {
    let mut m = s22.clone();
    for (i, v) in var.iter().enumerate() {
        m[(i, i)] += v;
    }
    let chol = m.cholesky().ok_or(Error::Singular("prior plus sampling covariance"))?;
    Ok(chol.solve(s12))
}

/// The same coefficients in the form
/// Sigma_12 Sigma_22^{-1} (Sigma_22^{-1} + Sigma^{-1})^{-1} Sigma^{-1}.
pub fn posterior_coefficients_literal(s12: &DVector<f64>, s22: &DMatrix<f64>, var: &[f64]) -> Result<DVector<f64>> {
    let s22_inv = s22.clone().cholesky().ok_or(Error::Singular("prior covariance"))?.inverse();
    let mut inner = s22_inv.clone();
    for (i, v) in var.iter().enumerate() {
        inner[(i, i)] += 1.0 / v;
    }
    let inner_inv = inner.cholesky().ok_or(Error::Singular("posterior precision"))?.inverse();
    let row = s12.transpose() * s22_inv * inner_inv;
    Ok(DVector::from_fn(var.len(), |i, _| row[i] / var[i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationThreshold {
    /// P(|tau_k - tau_l| > C ||x_k - x_l||)
    Scaled,
    /// P(|tau_k - tau_l| > C)
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationPairs {
    /// Sum over study pairs k < l divided by K(K+1)/2.
    Literal,
    /// Mean over the K(K-1)/2 study pairs.
    StudyPairs,
    /// Mean over all pairs of target and studies.
    WithTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub variance: f64,
    pub coverage: f64,
    pub threshold: CalibrationThreshold,
    pub pairs: CalibrationPairs,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { variance: 10.0, coverage: 0.95, threshold: CalibrationThreshold::Scaled, pairs: CalibrationPairs::Literal }
    }
}

/// Average prior exceedance probability for lengthscale `a`.
pub fn kernel_exceedance(pool: &StudyPool, target: &TargetSpec, c: f64, a: f64, opts: &Calibration) -> f64 {
    let k = pool.len();
    let first = if opts.pairs == CalibrationPairs::WithTarget { 0 } else { 1 };
    let mut total = 0.0;
    let mut count = 0usize;
    for i in first..=k {
        for j in (i + 1)..=k {
            let d = euclid(pool.point(target, i), pool.point(target, j));
            count += 1;
            if d == 0.0 {
                continue;
            }
            let sd = (2.0 * opts.variance * -(-d / a).exp_m1()).sqrt();
            let thr = match opts.threshold {
                CalibrationThreshold::Scaled => c * d,
                CalibrationThreshold::Constant => c,
            };
            total += 2.0 * normal_cdf(-thr / sd);
        }
    }
    let denom = match opts.pairs {
        CalibrationPairs::Literal => (k * (k + 1) / 2) as f64,
        _ => count as f64,
    };
    total / denom
}

/// Lengthscale a at which the averaged exceedance equals 1 - coverage,
/// by bisection on log a.
pub fn calibrate_kernel_lengthscale(pool: &StudyPool, target: &TargetSpec, c: f64, opts: &Calibration) -> Result<f64> {
    if !(c > 0.0) {
        return input("calibration needs C > 0");
    }
    if !(opts.coverage > 0.0 && opts.coverage < 1.0) || !(opts.variance > 0.0) {
        return input("calibration needs coverage in (0,1) and positive variance");
    }
    if pool.len() < 2 {
        return input("calibration needs at least two studies");
    }
    let goal = 1.0 - opts.coverage;
    let f = |la: f64| kernel_exceedance(pool, target, c, la.exp(), opts) - goal;
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(Error::NoRoot { lo: lo.exp(), hi: hi.exp(), lo_value: flo + goal, hi_value: fhi + goal });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
