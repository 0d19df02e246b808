use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome};
use crate::model::{ParameterSpace, StudyPool, TargetSpec, WeightVector};
use crate::refine::ConfidenceRegion;

/// b(w) = max { sum_k w_k tau_k : tau in the space, tau_0 = 0 }.
///
/// Meta spaces use the closed form (box) or an LP over the slope; Lipschitz
/// spaces solve the LP over (tau_1..tau_K) with every pairwise row.
pub fn max_bias(w: &WeightVector, space: &ParameterSpace, pool: &StudyPool, target: &TargetSpec) -> Result<f64> {
    space.check(pool)?;
    target.check(pool)?;
    check_len(w, pool)?;
    match space {
        ParameterSpace::MetaBox { bounds } => Ok(meta_box_bias(&slope_direction(w.as_slice(), pool, target), bounds)),
        ParameterSpace::MetaPolyhedron { a, c } => {
            let dir = slope_direction(w.as_slice(), pool, target);
            let mut lp = LinearProgram::maximize(dir);
            for i in 0..a.nrows() {
                lp.leq(a.row(i).iter().copied().collect(), c[i]);
            }
            lp_value(lp.solve())
        }
        ParameterSpace::LipschitzPairwise { .. } | ParameterSpace::LipschitzMetric { .. } => {
            let c = space.pairwise(pool, target).expect("Lipschitz space");
            lipschitz_lp_bias(w.as_slice(), &c)
        }
    }
}

fn check_len(w: &WeightVector, pool: &StudyPool) -> Result<()> {
    if w.len() != pool.len() {
        return Err(Error::Input(format!("{} weights for {} studies", w.len(), pool.len())));
    }
    Ok(())
}

fn lp_value(out: LpOutcome) -> Result<f64> {
    match out {
        LpOutcome::Optimal { value, .. } => Ok(value.max(0.0)),
        LpOutcome::Unbounded => Err(Error::BiasUnbounded),
        LpOutcome::Infeasible => Err(Error::EmptyRegion),
    }
}

/// sum_k w_k (x_k - x_0), the slope coefficient vector of the bias.
pub(crate) fn slope_direction(w: &[f64], pool: &StudyPool, target: &TargetSpec) -> Vec<f64> {
    let mut d = vec![0.0; pool.dx()];
    for (wk, s) in w.iter().zip(pool.studies()) {
        for (j, v) in d.iter_mut().enumerate() {
            *v += wk * (s.covariates[j] - target.x0[j]);
        }
    }
    d
}

fn meta_box_bias(dir: &[f64], bounds: &[f64]) -> f64 {
    dir.iter().zip(bounds).map(|(d, c)| c * d.abs()).sum()
}

/// LP over tau_1..tau_K with tau_0 = 0 and |tau_i - tau_j| <= C_ij for all
/// pairs, including pairs with the target.
fn lipschitz_lp_bias(w: &[f64], c: &DMatrix<f64>) -> Result<f64> {
    let k = w.len();
    let mut lp = LinearProgram::maximize(w.to_vec());
    for i in 0..=k {
        for j in (i + 1)..=k {
            let mut row = vec![0.0; k];
            if i > 0 {
                row[i - 1] = 1.0;
            }
            row[j - 1] = -1.0;
            lp.leq(row.clone(), c[(i, j)]);
            lp.leq(row.into_iter().map(|v| -v).collect(), c[(i, j)]);
        }
    }
    lp_value(lp.solve())
}

/// Shortest-path closure of a pairwise constant matrix.
pub fn metric_closure(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    let mut d = c.clone();
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[(i, m)] + d[(m, j)];
                if via < d[(i, j)] {
                    d[(i, j)] = via;
                }
            }
        }
    }
    d
}

/// Upper bound sum_k |w_k| d(0, k) with d the shortest-path distance.
pub fn shortest_path_bound(w: &WeightVector, c: &DMatrix<f64>) -> f64 {
    let d = metric_closure(c);
    w.as_slice().iter().enumerate().map(|(k, wk)| wk.abs() * d[(0, k + 1)]).sum()
}

/// Precomputed bias oracle used inside the optimizers. Agrees with
/// [`max_bias`]; Lipschitz spaces are evaluated through the dual
/// transport problem on the metric closure, or a closed form on a line.
#[derive(Debug, Clone)]
pub enum BiasEvaluator {
    MetaBox { diffs: DMatrix<f64>, bounds: Vec<f64> },
    MetaPolyhedron { diffs: DMatrix<f64>, a: DMatrix<f64>, c: Vec<f64> },
    /// Points on a line: positions sorted, with their node index (0 = target).
    Line { order: Vec<usize>, gaps: Vec<f64> },
    Transport { dist: DMatrix<f64> },
}

impl BiasEvaluator {
    pub fn new(space: &ParameterSpace, pool: &StudyPool, target: &TargetSpec) -> Result<Self> {
        space.check(pool)?;
        target.check(pool)?;
        let diffs = DMatrix::from_fn(pool.len(), pool.dx(), |k, j| pool.studies()[k].covariates[j] - target.x0[j]);
        Ok(match space {
            ParameterSpace::MetaBox { bounds } => BiasEvaluator::MetaBox { diffs, bounds: bounds.clone() },
            ParameterSpace::MetaPolyhedron { a, c } => {
                BiasEvaluator::MetaPolyhedron { diffs, a: a.clone(), c: c.iter().copied().collect() }
            }
            ParameterSpace::LipschitzMetric { c } if pool.dx() == 1 => {
                let n = pool.len() + 1;
                let pos: Vec<f64> = (0..n).map(|i| pool.point(target, i)[0]).collect();
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| pos[a].total_cmp(&pos[b]).then(a.cmp(&b)));
                let gaps = order.windows(2).map(|p| c * (pos[p[1]] - pos[p[0]])).collect();
                BiasEvaluator::Line { order, gaps }
            }
            _ => BiasEvaluator::Transport { dist: metric_closure(&space.pairwise(pool, target).expect("Lipschitz")) },
        })
    }

    pub fn eval(&self, w: &[f64]) -> Result<f64> {
        match self {
            BiasEvaluator::MetaBox { diffs, bounds } => {
                let dir = diffs.tr_mul(&nalgebra::DVector::from_column_slice(w));
                Ok(meta_box_bias(dir.as_slice(), bounds))
            }
            BiasEvaluator::MetaPolyhedron { diffs, a, c } => {
                let dir = diffs.tr_mul(&nalgebra::DVector::from_column_slice(w));
                let mut lp = LinearProgram::maximize(dir.iter().copied().collect());
                for i in 0..a.nrows() {
                    lp.leq(a.row(i).iter().copied().collect(), c[i]);
                }
                lp_value(lp.solve())
            }
            BiasEvaluator::Line { order, gaps } => {
                let mass = |i: usize| if i == 0 { -1.0 } else { w[i - 1] };
                let mut cum = 0.0;
                let mut b = 0.0;
                for (p, g) in order.iter().zip(gaps) {
                    cum += mass(*p);
                    b += g * cum.abs();
                }
                Ok(b)
            }
            BiasEvaluator::Transport { dist } => transport_cost(w, dist),
        }
    }

    /// Pairwise distances with index 0 the target, when the space is Lipschitz.
    pub fn distances(&self) -> Option<DMatrix<f64>> {
        match self {
            BiasEvaluator::Transport { dist } => Some(dist.clone()),
            BiasEvaluator::Line { order, gaps } => {
                let n = order.len();
                let mut at = vec![0.0; n];
                let mut x = 0.0;
                at[order[0]] = 0.0;
                for (p, g) in order.iter().skip(1).zip(gaps) {
                    x += g;
                    at[*p] = x;
                }
                Some(DMatrix::from_fn(n, n, |i, j| (at[i] - at[j]).abs()))
            }
            _ => None,
        }
    }
}

/// Minimum cost of moving the positive masses (w_k > 0) onto the negative
/// ones (the target's -1 and any w_k < 0) under the metric `dist`. By
/// Kantorovich-Rubinstein duality this equals the Lipschitz bias LP.
fn transport_cost(w: &[f64], dist: &DMatrix<f64>) -> Result<f64> {
    let mass: Vec<f64> = std::iter::once(-1.0).chain(w.iter().copied()).collect();
    let src: Vec<usize> = (0..mass.len()).filter(|&i| mass[i] > 0.0).collect();
    let snk: Vec<usize> = (0..mass.len()).filter(|&i| mass[i] < 0.0).collect();
    let nv = src.len() * snk.len();
    if nv == 0 {
        return Ok(0.0);
    }
    // a single source or sink leaves only one feasible plan
    if snk.len() == 1 {
        return Ok(src.iter().map(|&i| mass[i] * dist[(i, snk[0])]).sum());
    }
    if src.len() == 1 {
        return Ok(snk.iter().map(|&j| -mass[j] * dist[(src[0], j)]).sum());
    }
    let cost: Vec<f64> = src.iter().flat_map(|&i| snk.iter().map(move |&j| dist[(i, j)])).collect();
    let mut lp = LinearProgram::minimize(cost);
    for v in 0..nv {
        lp.bound(v, 0.0, f64::INFINITY);
    }
    // one supply row per source; the demand rows are implied except one
    for (a, &i) in src.iter().enumerate() {
        let mut row = vec![0.0; nv];
        for b in 0..snk.len() {
            row[a * snk.len() + b] = 1.0;
        }
        lp.equal(row, mass[i]);
    }
    // scale demands so total supply equals total demand exactly
    let supply: f64 = src.iter().map(|&i| mass[i]).sum();
    let demand: f64 = snk.iter().map(|&j| -mass[j]).sum();
    for (b, &j) in snk.iter().enumerate().skip(1) {
        let mut row = vec![0.0; nv];
        for a in 0..src.len() {
            row[a * snk.len() + b] = 1.0;
        }
        lp.equal(row, -mass[j] * supply / demand);
    }
    match lp.solve() {
        LpOutcome::Optimal { value, .. } => Ok(value.max(0.0)),
        _ => Err(Error::NonConvergence("transport problem".into())),
    }
}

/// Domain over which the signed bias is taken.
#[derive(Debug, Clone, Copy)]
pub enum BiasDomain<'a> {
    Space(&'a ParameterSpace),
    Region(&'a ConfidenceRegion),
}

/// Signed maximum bias at tau_0 = t:
/// -min over tau with tau_0 = t of sgn(t) * sum_k w_k (tau_k - t).
/// Spaces satisfying the symmetry/invariance assumption give b(w) for
/// either sign; confidence regions depend on the sign (and, for the
/// hyper-rectangle, on t).
pub fn signed_max_bias(
    t: f64,
    w: &WeightVector,
    domain: BiasDomain<'_>,
    pool: &StudyPool,
    target: &TargetSpec,
) -> Result<f64> {
    match domain {
        BiasDomain::Space(space) => max_bias(w, space, pool, target),
        BiasDomain::Region(region) => region.signed_bias(t, w.as_slice(), pool, target),
    }
}
