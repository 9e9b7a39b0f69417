//! Run configuration: JSON schema, defaults and validation.
//!
//! Every error names the offending location as a dotted path such as
//! `metric.entries[1][0]` so a bad file can be fixed without guesswork.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{BracketTerm, GradedNilpotentAlgebra};
use crate::ball::ResolutionRule;
use crate::expr;
use crate::metric::{left_invariant_metric, pseudo_left_invariant_metric, MetricError, MetricField};
use crate::subriemannian::ComparisonGrid;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("config error at {path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError { path: path.into(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Albanese,
    Spectrum,
    Ccball,
    StableNorm,
    Asvol,
    Verify,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Albanese => "albanese",
            Study::Spectrum => "spectrum",
            Study::Ccball => "ccball",
            Study::StableNorm => "stable-norm",
            Study::Asvol => "asvol",
            Study::Verify => "verify",
        }
    }
}

/// A built-in name (`"torus:2"`, `"heisenberg:3"`) or explicit brackets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlgebraSpec {
    Named(String),
    Custom {
        layer_dims: Vec<usize>,
        /// `(i, j, k, c)` meaning `[X_i, X_j] = c X_k + ...`, indices from 1.
        brackets: Vec<(usize, usize, usize, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Expr {
        entries: Vec<Vec<String>>,
    },
    LeftInvariant {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
    },
    PseudoLeftInvariant {
        #[serde(rename = "torus_Q")]
        torus_q: Vec<Vec<f64>>,
        a1: String,
        a2: String,
    },
}

/// The variant payloads of [`MetricSpec`], read on their own only to
/// locate errors.
mod variant {
    use serde::Deserialize;

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    pub struct Expr {
        entries: Vec<Vec<String>>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    pub struct LeftInvariant {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    pub struct PseudoLeftInvariant {
        #[serde(rename = "torus_Q")]
        torus_q: Vec<Vec<f64>>,
        a1: String,
        a2: String,
    }
}

fn path_error<E: fmt::Display>(prefix: &str, e: serde_path_to_error::Error<E>) -> ConfigError {
    let inner = e.path().to_string();
    let mut path = match (prefix, inner.as_str()) {
        (p, ".") => p.to_string(),
        ("", i) => i.to_string(),
        (p, i) => format!("{p}.{i}"),
    };
    let message = e.inner().to_string();
    // serde reports a missing key at its parent; name the key itself.
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            path = if path.is_empty() || path == "." { field.to_string() } else { format!("{path}.{field}") };
        }
    }
    ConfigError { path, message }
}

fn metric_error_path(text: &str) -> Option<ConfigError> {
    let root: serde_json::Value = serde_json::from_str(text).ok()?;
    let mut fields = root.get("metric")?.as_object()?.clone();
    let kind = fields.remove("kind")?;
    let body = serde_json::Value::Object(fields);
    let found = match kind.as_str()? {
        "expr" => serde_path_to_error::deserialize::<_, variant::Expr>(body).err(),
        "left_invariant" => serde_path_to_error::deserialize::<_, variant::LeftInvariant>(body).err(),
        "pseudo_left_invariant" => serde_path_to_error::deserialize::<_, variant::PseudoLeftInvariant>(body).err(),
        _ => None,
    };
    found.map(|e| path_error("metric", e))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionSpec {
    /// Cell-problem nodes per axis.
    pub cell: Option<Vec<usize>>,
    pub per_rho: Option<f64>,
    pub min_per_unit: Option<usize>,
    pub max_per_unit: Option<usize>,
    pub vertical_cells: Option<usize>,
    pub lattice_step: Option<f64>,
    /// CC lattice step for Albanese and stable balls.
    pub cc_lattice_step: Option<f64>,
    /// Horizontal spacing of the Kohn eigenvalue grid.
    pub cc_horizontal: Option<f64>,
    pub cc_vertical_cells: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableNormSpec {
    /// Classes with sup norm up to this radius are sampled.
    pub radius: Option<i64>,
    pub n_max: Option<usize>,
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative slack on eigenvalue inequalities.
    #[serde(default = "default_inequality")]
    pub inequality: f64,
}

fn default_inequality() -> f64 {
    0.02
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { inequality: default_inequality() }
    }
}

fn default_k() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algebra: AlgebraSpec,
    pub metric: MetricSpec,
    #[serde(default)]
    pub study: Option<Study>,
    #[serde(default)]
    pub rho: Option<Vec<f64>>,
    #[serde(default)]
    pub resolution: ResolutionSpec,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub stable_norm: StableNormSpec,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// Echo of the input with defaults made explicit.
    pub config: RunConfig,
    pub algebra: GradedNilpotentAlgebra,
    pub metric: MetricField,
    pub study: Study,
    pub rhos: Vec<f64>,
    pub cell: Vec<usize>,
    pub rule: ResolutionRule,
    pub comparison: ComparisonGrid,
    pub stable_radius: i64,
    pub stable_n_max: usize,
    pub stable_step: f64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let error = path_error("", e);
            // The tagged metric is buffered before its variant is read, which
            // hides everything below `metric`; read it again to find out where.
            if error.path == "metric" {
                if let Some(inner) = metric_error_path(text) {
                    return inner;
                }
            }
            error
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Validate, build the algebra and metric and fill defaults. `study`
    /// (from the command line) overrides the file's study.
    pub fn resolve(&self, study: Option<Study>) -> Result<Resolved, ConfigError> {
        let algebra = build_algebra(&self.algebra)?;
        let metric = build_metric(&self.metric, &algebra)?;
        let study = study.or(self.study).ok_or_else(|| ConfigError::new("study", "no study given"))?;
        let n = algebra.dim();
        let d1 = algebra.horizontal_dim();
        if algebra.step() > 2 {
            return Err(ConfigError::new("algebra", format!("step {} is above the supported 2", algebra.step())));
        }
        if n > 3 && study != Study::Albanese {
            return Err(ConfigError::new("algebra", format!("ball studies support dimension at most 3, got {n}")));
        }

        let rhos = self.rho.clone().unwrap_or_else(|| if algebra.step() == 1 { vec![4.0, 8.0, 16.0] } else { vec![3.0, 4.0, 6.0] });
        if matches!(study, Study::Spectrum | Study::Asvol) && rhos.len() < 3 {
            return Err(ConfigError::new("rho", format!("need at least 3 values, got {}", rhos.len())));
        }
        for (i, r) in rhos.iter().enumerate() {
            if !(r.is_finite() && *r >= 1.0 && *r <= 64.0) {
                return Err(ConfigError::new(format!("rho[{i}]"), format!("{r} outside [1, 64]")));
            }
            if i > 0 && !(rhos[i - 1] < *r) {
                return Err(ConfigError::new(format!("rho[{i}]"), "values must increase strictly"));
            }
        }
        if !(1..=16).contains(&self.k) {
            return Err(ConfigError::new("k", format!("{} outside [1, 16]", self.k)));
        }
        let tol = self.tolerances.inequality;
        if !(tol.is_finite() && (0.0..1.0).contains(&tol)) {
            return Err(ConfigError::new("tolerances.inequality", format!("{tol} outside [0, 1)")));
        }

        let res = &self.resolution;
        let cell = res.cell.clone().unwrap_or_else(|| {
            if algebra.step() == 1 {
                vec![64; n]
            } else {
                (0..n).map(|a| if a < d1 { 32 } else { 8 }).collect()
            }
        });
        if cell.len() != n {
            return Err(ConfigError::new("resolution.cell", format!("expected {n} entries, got {}", cell.len())));
        }
        for (i, c) in cell.iter().enumerate() {
            if !(8..=256).contains(c) {
                return Err(ConfigError::new(format!("resolution.cell[{i}]"), format!("{c} outside [8, 256]")));
            }
        }
        let base = ResolutionRule::default_for(&algebra);
        let rule = ResolutionRule {
            per_rho: res.per_rho.unwrap_or(base.per_rho),
            min_per_unit: res.min_per_unit.unwrap_or(base.min_per_unit),
            max_per_unit: res.max_per_unit.unwrap_or(base.max_per_unit),
            vertical_cells: res.vertical_cells.unwrap_or(base.vertical_cells),
            lattice_step: res.lattice_step.unwrap_or(base.lattice_step),
        };
        if !(rule.per_rho.is_finite() && (0.0..=64.0).contains(&rule.per_rho)) {
            return Err(ConfigError::new("resolution.per_rho", format!("{} outside [0, 64]", rule.per_rho)));
        }
        if !(4..=512).contains(&rule.min_per_unit) {
            return Err(ConfigError::new("resolution.min_per_unit", format!("{} outside [4, 512]", rule.min_per_unit)));
        }
        if !(rule.min_per_unit..=512).contains(&rule.max_per_unit) {
            return Err(ConfigError::new(
                "resolution.max_per_unit",
                format!("{} outside [min_per_unit, 512]", rule.max_per_unit),
            ));
        }
        if algebra.step() == 2 {
            if !(4..=256).contains(&rule.vertical_cells) {
                return Err(ConfigError::new("resolution.vertical_cells", format!("{} outside [4, 256]", rule.vertical_cells)));
            }
            check_step("resolution.lattice_step", rule.lattice_step)?;
        }
        let base = ComparisonGrid::default_for(&algebra);
        let comparison = ComparisonGrid {
            lattice_step: res.cc_lattice_step.unwrap_or(base.lattice_step),
            horizontal: res.cc_horizontal.unwrap_or(base.horizontal),
            vertical_cells: res.cc_vertical_cells.unwrap_or(base.vertical_cells),
        };
        check_step("resolution.cc_lattice_step", comparison.lattice_step)?;
        check_step("resolution.cc_horizontal", comparison.horizontal)?;
        if algebra.step() == 2 && !(4..=256).contains(&comparison.vertical_cells) {
            return Err(ConfigError::new(
                "resolution.cc_vertical_cells",
                format!("{} outside [4, 256]", comparison.vertical_cells),
            ));
        }

        let (r0, n0, s0) = if algebra.step() == 1 { (3, 8, 1.0 / 16.0) } else { (2, 6, 1.0 / 8.0) };
        let sn = &self.stable_norm;
        let stable_radius = sn.radius.unwrap_or(r0);
        let stable_n_max = sn.n_max.unwrap_or(n0);
        let stable_step = sn.step.unwrap_or(s0);
        if !(1..=4).contains(&stable_radius) {
            return Err(ConfigError::new("stable_norm.radius", format!("{stable_radius} outside [1, 4]")));
        }
        if !(2..=32).contains(&stable_n_max) {
            return Err(ConfigError::new("stable_norm.n_max", format!("{stable_n_max} outside [2, 32]")));
        }
        check_step("stable_norm.step", stable_step)?;

        let mut config = self.clone();
        config.study = Some(study);
        config.rho = Some(rhos.clone());
        config.resolution = ResolutionSpec {
            cell: Some(cell.clone()),
            per_rho: Some(rule.per_rho),
            min_per_unit: Some(rule.min_per_unit),
            max_per_unit: Some(rule.max_per_unit),
            vertical_cells: Some(rule.vertical_cells),
            lattice_step: Some(rule.lattice_step),
            cc_lattice_step: Some(comparison.lattice_step),
            cc_horizontal: Some(comparison.horizontal),
            cc_vertical_cells: Some(comparison.vertical_cells),
        };
        config.stable_norm =
            StableNormSpec { radius: Some(stable_radius), n_max: Some(stable_n_max), step: Some(stable_step) };
        Ok(Resolved {
            config,
            algebra,
            metric,
            study,
            rhos,
            cell,
            rule,
            comparison,
            stable_radius,
            stable_n_max,
            stable_step,
        })
    }
}

fn check_step(path: &str, h: f64) -> Result<(), ConfigError> {
    if h.is_finite() && (1.0 / 256.0..=0.5).contains(&h) {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("{h} outside [1/256, 1/2]")))
    }
}

fn build_algebra(spec: &AlgebraSpec) -> Result<GradedNilpotentAlgebra, ConfigError> {
    match spec {
        AlgebraSpec::Named(name) => GradedNilpotentAlgebra::named(name).map_err(|e| ConfigError::new("algebra", e)),
        AlgebraSpec::Custom { layer_dims, brackets } => {
            let mut terms = Vec::with_capacity(brackets.len());
            for (t, &(i, j, k, value)) in brackets.iter().enumerate() {
                if i == 0 || j == 0 || k == 0 {
                    return Err(ConfigError::new(format!("algebra.brackets[{t}]"), "indices start at 1"));
                }
                terms.push(BracketTerm { i: i - 1, j: j - 1, k: k - 1, value });
            }
            GradedNilpotentAlgebra::from_brackets(&terms, layer_dims).map_err(|e| ConfigError::new("algebra", e))
        }
    }
}

fn matrix(path: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != n {
        return Err(ConfigError::new(path, format!("expected {n} rows, got {}", rows.len())));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(ConfigError::new(format!("{path}[{i}]"), format!("expected {n} entries, got {}", r.len())));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn metric_error(spec_path: &str, e: MetricError) -> ConfigError {
    match e {
        MetricError::Parse { row, col, source } => ConfigError::new(format!("{spec_path}[{row}][{col}]"), source),
        other => ConfigError::new("metric", other),
    }
}

fn build_metric(spec: &MetricSpec, algebra: &GradedNilpotentAlgebra) -> Result<MetricField, ConfigError> {
    match spec {
        MetricSpec::Expr { entries } => {
            MetricField::from_text(algebra.clone(), entries).map_err(|e| metric_error("metric.entries", e))
        }
        MetricSpec::LeftInvariant { q } => {
            let q = matrix("metric.Q", q, algebra.dim())?;
            left_invariant_metric(algebra.clone(), &q).map_err(|e| metric_error("metric.Q", e))
        }
        MetricSpec::PseudoLeftInvariant { torus_q, a1, a2 } => {
            let t = matrix("metric.torus_Q", torus_q, 2)?;
            let n = algebra.dim();
            let a1 = expr::parse(a1, n).map_err(|e| ConfigError::new("metric.a1", e))?;
            let a2 = expr::parse(a2, n).map_err(|e| ConfigError::new("metric.a2", e))?;
            pseudo_left_invariant_metric(algebra.clone(), &t, a1, a2).map_err(|e| metric_error("metric", e))
        }
    }
}
