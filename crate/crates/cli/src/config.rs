//! TOML run configuration and its resolution into library inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evagg::evaluate::{log_grid, Rule};
use evagg::model::Standardizer;
use evagg::weights::{calibrate_kernel_lengthscale, Calibration, CalibrationPairs, CalibrationThreshold, HbPrior, SolverConfig};
use evagg::{Error, ParameterSpace, Study, StudyPool, TargetSpec};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pool: PoolSpec,
    #[serde(default, rename = "target")]
    pub targets: Vec<TargetEntry>,
    pub space: Option<SpaceSpec>,
    #[serde(default = "default_rules")]
    pub rules: Vec<Rule>,
    pub hb: Option<HbSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub refine: Option<RefineSpec>,
    #[serde(default)]
    pub cv: CvSpec,
    pub heatmap: Option<HeatmapSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_rules() -> Vec<Rule> {
    vec![Rule::Minimax, Rule::Mse]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    /// Study CSV, relative to the config file.
    pub path: PathBuf,
    /// Covariates standardized to mean 0, sd 1 across the pool.
    #[serde(default)]
    pub standardize: Vec<String>,
    #[serde(default)]
    pub ddof: usize,
    /// Name of the active table in `encodings`.
    pub encoding: Option<String>,
    /// encoding name -> column -> label -> value
    #[serde(default)]
    pub encodings: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    pub name: Option<String>,
    #[serde(default)]
    pub cost: f64,
    pub x: TargetX,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TargetX {
    Values(Vec<Cell>),
    Named(BTreeMap<String, Cell>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Label(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    MetaBox { bounds: Vec<f64> },
    MetaPolyhedron { a: Vec<Vec<f64>>, c: Vec<f64> },
    LipschitzPairwise { c: Vec<Vec<f64>> },
    LipschitzMetric { c: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeReading {
    /// diag entry = factor * C_j
    #[default]
    Variance,
    /// diag entry = (C_j / factor)^2
    Sd,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HbSpec {
    MetaGaussian {
        sigma_beta: Vec<Vec<f64>>,
    },
    /// Diagonal prior on (beta_0, beta) built from the MetaBox half-widths.
    BoxMatched {
        #[serde(default = "ten")]
        intercept_variance: f64,
        #[serde(default = "z975")]
        factor: f64,
        #[serde(default)]
        reading: SlopeReading,
    },
    Kernel {
        #[serde(default = "ten")]
        variance: f64,
        /// Fixed lengthscale; calibrated per target when absent.
        lengthscale: Option<f64>,
        #[serde(default = "coverage95")]
        coverage: f64,
        #[serde(default = "scaled")]
        threshold: CalibrationThreshold,
        #[serde(default = "literal")]
        pairs: CalibrationPairs,
    },
}

fn ten() -> f64 {
    10.0
}
fn z975() -> f64 {
    1.96
}
fn coverage95() -> f64 {
    0.95
}
fn scaled() -> CalibrationThreshold {
    CalibrationThreshold::Scaled
}
fn literal() -> CalibrationPairs {
    CalibrationPairs::Literal
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    #[default]
    HyperRectangle,
    MetaEllipsoid,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSpec {
    pub alpha: f64,
    #[serde(default)]
    pub region: RegionKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSpec {
    pub grid: Option<Vec<f64>>,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for CvSpec {
    fn default() -> Self {
        CvSpec { grid: None, lo: 0.001, hi: 1.0, n: 21 }
    }
}

impl CvSpec {
    pub fn values(&self) -> Result<Vec<f64>, Error> {
        if let Some(g) = &self.grid {
            return Ok(g.clone());
        }
        if !(self.lo > 0.0 && self.hi >= self.lo) || self.n == 0 {
            return Err(Error::Input("cv grid needs 0 < lo <= hi and n >= 1".into()));
        }
        Ok(log_grid(self.lo, self.hi, self.n))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub covariate: String,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.steps <= 1 {
            return vec![self.from];
        }
        (0..self.steps).map(|i| self.from + (self.to - self.from) * i as f64 / (self.steps - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapSpec {
    /// Exactly two axes; other covariates keep the first target's values.
    pub axes: Vec<Axis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub format: Option<Format>,
    pub path: Option<PathBuf>,
}

/// A named target resolved to the (possibly standardized) covariate scale.
#[derive(Debug, Clone)]
pub struct NamedTarget {
    pub name: String,
    pub raw: Vec<f64>,
    pub spec: TargetSpec,
}

/// Config plus everything loaded from disk.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub raw_pool: StudyPool,
    pub pool: StudyPool,
    pub standardizer: Standardizer,
    pub targets: Vec<NamedTarget>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Input(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.pool.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.pool.path = dir.join(&cfg.pool.path);
            }
        }
        Ok(cfg)
    }

    fn encoding(&self) -> Result<Option<&BTreeMap<String, BTreeMap<String, f64>>>, Error> {
        match &self.pool.encoding {
            None => Ok(None),
            Some(name) => self
                .pool
                .encodings
                .get(name)
                .map(Some)
                .ok_or_else(|| Error::Input(format!("unknown encoding '{name}'"))),
        }
    }

    fn cell_value(&self, column: &str, cell: &Cell) -> Result<f64, Error> {
        match cell {
            Cell::Num(v) => Ok(*v),
            Cell::Label(s) => label_value(self.encoding()?, column, s),
        }
    }

    pub fn resolve(self) -> Result<Resolved, Error> {
        let text = std::fs::read_to_string(&self.pool.path)
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", self.pool.path.display())))?;
        let raw_pool = read_pool(&text, self.encoding()?)?;
        let names = raw_pool.covariate_names().to_vec();
        let columns = self
            .pool
            .standardize
            .iter()
            .map(|n| raw_pool.covariate_index(n).ok_or_else(|| Error::Input(format!("unknown covariate '{n}' in standardize"))))
            .collect::<Result<Vec<_>, _>>()?;
        let (pool, standardizer) = raw_pool.standardized(&columns, self.pool.ddof)?;

        let mut targets = Vec::new();
        for (i, t) in self.targets.iter().enumerate() {
            let raw = match &t.x {
                TargetX::Values(v) => {
                    if v.len() != names.len() {
                        return Err(Error::Input(format!("target {} has {} values, pool has {} covariates", i + 1, v.len(), names.len())));
                    }
                    v.iter().zip(&names).map(|(c, n)| self.cell_value(n, c)).collect::<Result<Vec<_>, _>>()?
                }
                TargetX::Named(map) => {
                    if let Some(k) = map.keys().find(|k| !names.contains(k)) {
                        return Err(Error::Input(format!("target {} names unknown covariate '{k}'", i + 1)));
                    }
                    names
                        .iter()
                        .map(|n| match map.get(n) {
                            Some(c) => self.cell_value(n, c),
                            None => Err(Error::Input(format!("target {} is missing covariate '{n}'", i + 1))),
                        })
                        .collect::<Result<Vec<_>, _>>()?
                }
            };
            if raw.iter().any(|v| !v.is_finite()) || !t.cost.is_finite() {
                return Err(Error::Input(format!("target {} has a non-finite value", i + 1)));
            }
            let spec = TargetSpec::new(standardizer.apply(&raw), t.cost);
            let name = t.name.clone().unwrap_or_else(|| format!("target{}", i + 1));
            targets.push(NamedTarget { name, raw, spec });
        }
        if let Some(r) = &self.refine {
            if !(r.alpha > 0.0 && r.alpha < 1.0) {
                return Err(Error::Input("refine.alpha must lie in (0, 1)".into()));
            }
        }
        self.solver.check()?;
        Ok(Resolved { config: self, raw_pool, pool, standardizer, targets })
    }
}

fn label_value(enc: Option<&BTreeMap<String, BTreeMap<String, f64>>>, column: &str, label: &str) -> Result<f64, Error> {
    enc.and_then(|e| e.get(column))
        .and_then(|m| m.get(label))
        .copied()
        .ok_or_else(|| Error::Input(format!("column '{column}': no numeric value or encoding for '{label}'")))
}

/// Study CSV reader that maps categorical labels through `enc`.
pub fn read_pool(text: &str, enc: Option<&BTreeMap<String, BTreeMap<String, f64>>>) -> Result<StudyPool, Error> {
    if enc.is_none() {
        return StudyPool::from_csv(text.as_bytes());
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Input(format!("unreadable CSV header: {e}")))?.clone();
    let cols: Vec<String> = header.iter().map(str::to_string).collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "estimate" || cols[2] != "se" {
        return Err(Error::Input("study CSV header must start with id,estimate,se".into()));
    }
    let mut studies = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("CSV row {}: {e}", i + 1)))?;
        let num = |j: usize| -> Result<f64, Error> {
            let cell = &rec[j];
            match cell.parse::<f64>() {
                Ok(v) => Ok(v),
                Err(_) if j >= 3 => label_value(enc, &cols[j], cell),
                Err(_) => Err(Error::Input(format!("CSV row {}: column '{}' is not a number: '{cell}'", i + 1, cols[j]))),
            }
        };
        studies.push(Study {
            id: rec[0].to_string(),
            estimate: num(1)?,
            se: num(2)?,
            covariates: (3..cols.len()).map(num).collect::<Result<_, _>>()?,
        });
    }
    StudyPool::new(studies, cols[3..].to_vec())
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, Error> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Input(format!("{what} rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl Resolved {
    pub fn space(&self) -> Result<ParameterSpace, Error> {
        let spec = self.config.space.as_ref().ok_or_else(|| Error::Input("config has no [space] section".into()))?;
        let space = match spec {
            SpaceSpec::MetaBox { bounds } => ParameterSpace::MetaBox { bounds: bounds.clone() },
            SpaceSpec::MetaPolyhedron { a, c } => ParameterSpace::MetaPolyhedron { a: matrix(a, "space.a")?, c: DVector::from_vec(c.clone()) },
            SpaceSpec::LipschitzPairwise { c } => ParameterSpace::LipschitzPairwise { c: matrix(c, "space.c")? },
            SpaceSpec::LipschitzMetric { c } => ParameterSpace::LipschitzMetric { c: *c },
        };
        space.check(&self.pool)?;
        Ok(space)
    }

    pub fn first_target(&self) -> Result<&NamedTarget, Error> {
        self.targets.first().ok_or_else(|| Error::Input("config has no [[target]] entry".into()))
    }

    /// Prior for the hierarchical Bayes rule at one target.
    pub fn hb_prior(&self, target: &TargetSpec, space: &ParameterSpace) -> Result<Option<HbPrior>, Error> {
        let Some(spec) = &self.config.hb else { return Ok(None) };
        let prior = match spec {
            HbSpec::MetaGaussian { sigma_beta } => HbPrior::MetaGaussian { sigma_beta: matrix(sigma_beta, "hb.sigma_beta")? },
            HbSpec::BoxMatched { intercept_variance, factor, reading } => {
                let ParameterSpace::MetaBox { bounds } = space else {
                    return Err(Error::Input("hb kind box_matched needs a meta_box space".into()));
                };
                let diag: Vec<f64> = std::iter::once(*intercept_variance)
                    .chain(bounds.iter().map(|c| match reading {
                        SlopeReading::Variance => factor * c,
                        SlopeReading::Sd => (c / factor).powi(2),
                    }))
                    .collect();
                HbPrior::MetaGaussian { sigma_beta: DMatrix::from_diagonal(&DVector::from_vec(diag)) }
            }
            HbSpec::Kernel { variance, lengthscale, coverage, threshold, pairs } => {
                let lengthscale = match lengthscale {
                    Some(a) => *a,
                    None => {
                        let ParameterSpace::LipschitzMetric { c } = space else {
                            return Err(Error::Input("kernel calibration needs a lipschitz_metric space".into()));
                        };
                        let opts = Calibration { variance: *variance, coverage: *coverage, threshold: *threshold, pairs: *pairs };
                        calibrate_kernel_lengthscale(&self.pool, target, *c, &opts)?
                    }
                };
                HbPrior::KernelGaussian { variance: *variance, lengthscale }
            }
        };
        Ok(Some(prior))
    }
}
