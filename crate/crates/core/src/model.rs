use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{input, Result};
use crate::eta;

const SUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Study {
    pub id: String,
    pub estimate: f64,
    pub se: f64,
    pub covariates: Vec<f64>,
}

/// The K studies. Index 0 is reserved for the target, so study `k` of the
/// pool is `studies[k - 1]` in formulas that include the target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyPool {
    studies: Vec<Study>,
    covariate_names: Vec<String>,
}

/// Affine map applied to covariates when standardizing; kept so that
/// targets can be transformed with the pool's statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

impl StudyPool {
    pub fn new(studies: Vec<Study>, covariate_names: Vec<String>) -> Result<Self> {
        if studies.is_empty() {
            return input("study pool needs at least one study");
        }
        let dx = covariate_names.len();
        let mut seen = HashSet::new();
        for s in &studies {
            if !seen.insert(s.id.as_str()) {
                return input(format!("duplicate study id '{}'", s.id));
            }
            if !(s.se > 0.0) || !s.se.is_finite() {
                return input(format!("study '{}' has non-positive se {}", s.id, s.se));
            }
            if !s.estimate.is_finite() {
                return input(format!("study '{}' has a non-finite estimate", s.id));
            }
            if s.covariates.len() != dx {
                return input(format!(
                    "study '{}' has {} covariates, expected {}",
                    s.id,
                    s.covariates.len(),
                    dx
                ));
            }
            if s.covariates.iter().any(|v| !v.is_finite()) {
                return input(format!("study '{}' has a missing or non-finite covariate", s.id));
            }
        }
        Ok(StudyPool { studies, covariate_names })
    }

    /// Builds a pool from rows of a study CSV (`id,estimate,se,<cov...>`).
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| crate::Error::Input(format!("unreadable CSV header: {e}")))?
            .clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "id" || cols[1] != "estimate" || cols[2] != "se" {
            return input("study CSV header must start with id,estimate,se");
        }
        let names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
        let mut studies = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| crate::Error::Input(format!("CSV row {}: {e}", i + 1)))?;
            if rec.len() != cols.len() {
                return input(format!("CSV row {} has {} fields, expected {}", i + 1, rec.len(), cols.len()));
            }
            let num = |j: usize| -> Result<f64> {
                rec[j].parse::<f64>().map_err(|_| {
                    crate::Error::Input(format!("CSV row {}: column '{}' is not a number: '{}'", i + 1, cols[j], &rec[j]))
                })
            };
            studies.push(Study {
                id: rec[0].to_string(),
                estimate: num(1)?,
                se: num(2)?,
                covariates: (3..cols.len()).map(num).collect::<Result<_>>()?,
            });
        }
        StudyPool::new(studies, names)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,estimate,se");
        for n in &self.covariate_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for s in &self.studies {
            out.push_str(&s.id);
            for v in [s.estimate, s.se].iter().chain(&s.covariates) {
                out.push(',');
                out.push_str(&format!("{v:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    pub fn dx(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn studies(&self) -> &[Study] {
        &self.studies
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn ids(&self) -> Vec<&str> {
        self.studies.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.studies.iter().map(|s| s.estimate).collect()
    }

    pub fn ses(&self) -> Vec<f64> {
        self.studies.iter().map(|s| s.se).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.studies.iter().map(|s| s.se * s.se).collect()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Returns a copy of the pool without study `k` (0-based).
    pub fn without(&self, k: usize) -> Result<Self> {
        let studies = self
            .studies
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, s)| s.clone())
            .collect();
        StudyPool::new(studies, self.covariate_names.clone())
    }

    /// Same covariates and ids with new estimates and standard errors.
    pub fn with_estimates(&self, estimates: &[f64], ses: &[f64]) -> Result<Self> {
        let studies = self
            .studies
            .iter()
            .zip(estimates.iter().zip(ses))
            .map(|(s, (&e, &se))| Study { estimate: e, se, ..s.clone() })
            .collect();
        StudyPool::new(studies, self.covariate_names.clone())
    }

    /// Standardizes the selected covariate columns to zero mean and unit
    /// variance across the pool. `ddof` is 0 for the population variance,
    /// 1 for the sample variance. Constant columns are only centered.
    pub fn standardized(&self, columns: &[usize], ddof: usize) -> Result<(Self, Standardizer)> {
        let k = self.len();
        let dx = self.dx();
        let mut mean = vec![0.0; dx];
        let mut scale = vec![1.0; dx];
        for &j in columns {
            if j >= dx {
                return input(format!("standardize column {j} out of range"));
            }
            if k <= ddof {
                return input("too few studies to standardize");
            }
            let m = self.studies.iter().map(|s| s.covariates[j]).sum::<f64>() / k as f64;
            let var = self.studies.iter().map(|s| (s.covariates[j] - m).powi(2)).sum::<f64>() / (k - ddof) as f64;
            mean[j] = m;
            if var > 0.0 {
                scale[j] = var.sqrt();
            }
        }
        let st = Standardizer { mean, scale };
        let studies = self
            .studies
            .iter()
            .map(|s| Study { covariates: st.apply(&s.covariates), ..s.clone() })
            .collect();
        Ok((StudyPool::new(studies, self.covariate_names.clone())?, st))
    }

    /// K x (d_x + 1) design matrix with a leading intercept column.
    pub fn design(&self) -> DMatrix<f64> {
        let (k, dx) = (self.len(), self.dx());
        DMatrix::from_fn(k, dx + 1, |i, j| if j == 0 { 1.0 } else { self.studies[i].covariates[j - 1] })
    }

    /// Covariate of point `i` where index 0 is the target.
    pub fn point<'a>(&'a self, target: &'a TargetSpec, i: usize) -> &'a [f64] {
        if i == 0 {
            &target.x0
        } else {
            &self.studies[i - 1].covariates
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetSpec {
    pub x0: Vec<f64>,
    pub cost: f64,
}

impl TargetSpec {
    pub fn new(x0: Vec<f64>, cost: f64) -> Self {
        TargetSpec { x0, cost }
    }

    pub fn check(&self, pool: &StudyPool) -> Result<()> {
        if self.x0.len() != pool.dx() {
            return input(format!("target has {} covariates, pool has {}", self.x0.len(), pool.dx()));
        }
        if self.x0.iter().any(|v| !v.is_finite()) || !self.cost.is_finite() {
            return input("target covariates and cost must be finite");
        }
        Ok(())
    }
}

/// Restriction on the effect vector (tau_0, tau_1, ..., tau_K).
#[derive(Debug, Clone, PartialEq)]
pub enum ParameterSpace {
    /// Meta-regression with slope box prod_j [-C_j, C_j].
    MetaBox { bounds: Vec<f64> },
    /// Meta-regression with slope set {beta : A beta <= c}; rows must come in
    /// (a, c), (-a, c) pairs so the set is symmetric.
    MetaPolyhedron { a: DMatrix<f64>, c: DVector<f64> },
    /// |tau_k - tau_l| <= C_kl with index 0 the target.
    LipschitzPairwise { c: DMatrix<f64> },
    /// C_kl = C * ||x_k - x_l||_2.
    LipschitzMetric { c: f64 },
}

impl ParameterSpace {
    pub fn is_meta(&self) -> bool {
        matches!(self, ParameterSpace::MetaBox { .. } | ParameterSpace::MetaPolyhedron { .. })
    }

    pub fn check(&self, pool: &StudyPool) -> Result<()> {
        match self {
            ParameterSpace::MetaBox { bounds } => {
                if bounds.len() != pool.dx() {
                    return input(format!("box has {} half-widths, pool has {} covariates", bounds.len(), pool.dx()));
                }
                if bounds.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
                    return input("box half-widths must be finite and non-negative");
                }
            }
            ParameterSpace::MetaPolyhedron { a, c } => {
                if a.ncols() != pool.dx() || a.nrows() != c.len() {
                    return input("polyhedron dimensions do not match the pool");
                }
                if c.iter().any(|v| !(*v >= 0.0)) {
                    return input("polyhedron right-hand sides must be non-negative");
                }
                for i in 0..a.nrows() {
                    let paired = (0..a.nrows()).any(|j| {
                        (c[i] - c[j]).abs() <= 1e-12 * (1.0 + c[i].abs())
                            && (0..a.ncols()).all(|q| (a[(i, q)] + a[(j, q)]).abs() <= 1e-12 * (1.0 + a[(i, q)].abs()))
                    });
                    if !paired {
                        return input(format!("polyhedron row {i} has no mirrored row; the slope set must be symmetric"));
                    }
                }
            }
            ParameterSpace::LipschitzPairwise { c } => {
                let n = pool.len() + 1;
                if c.nrows() != n || c.ncols() != n {
                    return input(format!("pairwise constant matrix must be {n}x{n}"));
                }
                for i in 0..n {
                    if c[(i, i)] != 0.0 {
                        return input("pairwise constants must have a zero diagonal");
                    }
                    for j in 0..n {
                        if !(c[(i, j)] >= 0.0) || c[(i, j)] != c[(j, i)] {
                            return input("pairwise constants must be symmetric and non-negative");
                        }
                    }
                }
            }
            ParameterSpace::LipschitzMetric { c } => {
                if !(*c >= 0.0) || !c.is_finite() {
                    return input("Lipschitz constant must be finite and non-negative");
                }
            }
        }
        Ok(())
    }

    /// Pairwise constants C_kl over target and studies (index 0 = target)
    /// for the Lipschitz variants.
    pub fn pairwise(&self, pool: &StudyPool, target: &TargetSpec) -> Option<DMatrix<f64>> {
        match self {
            ParameterSpace::LipschitzPairwise { c } => Some(c.clone()),
            ParameterSpace::LipschitzMetric { c } => {
                let n = pool.len() + 1;
                Some(DMatrix::from_fn(n, n, |i, j| {
                    let (a, b) = (pool.point(target, i), pool.point(target, j));
                    c * a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
                }))
            }
            _ => None,
        }
    }
}

/// Aggregation weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !v.is_finite()) {
            return input("weights must be finite and non-empty");
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return input(format!("weights sum to {s}, not 1"));
        }
        Ok(WeightVector(w))
    }

    /// Rescales `w` to sum to one. Fails if the sum is numerically zero.
    pub fn normalized(w: Vec<f64>) -> Result<Self> {
        let s: f64 = w.iter().sum();
        if !(s.abs() >= 1e-12) || !s.is_finite() {
            return Err(crate::Error::Singular("weight normalization"));
        }
        let mut v: Vec<f64> = w.iter().map(|x| x / s).collect();
        // put the rounding residue on the largest entry so the sum is exact
        let resid = 1.0 - v.iter().sum::<f64>();
        let imax = (0..v.len()).fold(0, |m, i| if v[i].abs() > v[m].abs() { i } else { m });
        v[imax] += resid;
        WeightVector::new(v)
    }

    pub fn unit(k: usize, i: usize) -> Self {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        WeightVector(v)
    }

    pub fn uniform(k: usize) -> Self {
        WeightVector::normalized(vec![1.0; k]).expect("uniform weights")
    }

    pub fn inverse_variance(pool: &StudyPool) -> Self {
        WeightVector::normalized(pool.ses().iter().map(|s| 1.0 / (s * s)).collect()).expect("positive variances")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn sd_of(w: &WeightVector, pool: &StudyPool) -> f64 {
    sd_raw(w.as_slice(), &pool.ses())
}

pub(crate) fn sd_raw(w: &[f64], ses: &[f64]) -> f64 {
    w.iter().zip(ses).map(|(w, s)| (w * s).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretProfile {
    pub bias: f64,
    pub sd: f64,
    pub max_regret: f64,
}

impl RegretProfile {
    /// Profile from b and s using the exact eta function.
    pub fn from_bias_sd(bias: f64, sd: f64) -> Self {
        RegretProfile { bias, sd, max_regret: max_regret_exact(bias, sd) }
    }

    pub fn bias_over_sd(&self) -> f64 {
        if self.sd > 0.0 {
            self.bias / self.sd
        } else {
            f64::INFINITY
        }
    }

    pub fn mse(&self) -> f64 {
        self.bias * self.bias + self.sd * self.sd
    }
}

/// s * eta(b / s), with the s = 0 limit equal to b * lim eta(a)/a = b.
pub fn max_regret_exact(bias: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        sd * eta::eta_any(bias / sd).value
    } else {
        bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub rule_name: String,
    pub adopt: bool,
    pub aggregate: f64,
    pub weights: WeightVector,
    pub profile: RegretProfile,
}
