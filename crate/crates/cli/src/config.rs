//! Experiment configuration: one JSON document with a versioned schema tag.
//! Unknown keys are rejected at every level.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "finsler-lab/config/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    CoreChecks,
    Eigen,
    Needle,
    Rigidity,
    Isoperimetric,
    LogSobolev,
    Corollary,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::CoreChecks,
        Experiment::Eigen,
        Experiment::Needle,
        Experiment::Rigidity,
        Experiment::Isoperimetric,
        Experiment::LogSobolev,
        Experiment::Corollary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::CoreChecks => "core-checks",
            Experiment::Eigen => "eigen",
            Experiment::Needle => "needle",
            Experiment::Rigidity => "rigidity",
            Experiment::Isoperimetric => "isoperimetric",
            Experiment::LogSobolev => "log-sobolev",
            Experiment::Corollary => "corollary",
        }
    }

    /// The statement each experiment checks numerically.
    pub fn verifies(self) -> &'static str {
        match self {
            Experiment::CoreChecks => "Legendre duality and reversibility of Finsler norms",
            Experiment::Eigen => "Spectral gap",
            Experiment::Needle => "Curvature bound and spectral gap on needles",
            Experiment::Rigidity => "Diffeomorphic splitting",
            Experiment::Isoperimetric => "Bakry-Ledoux isoperimetric inequality",
            Experiment::LogSobolev => "Logarithmic Sobolev inequality",
            Experiment::Corollary => "Rigidity of log-Sobolev and isoperimetric equality",
        }
    }

    pub fn models(self) -> &'static [ModelKind] {
        use ModelKind::*;
        match self {
            Experiment::CoreChecks => &[RandersMinkowski],
            Experiment::Eigen => &[GaussianLine, QuarticNeedle, CircleProduct],
            Experiment::Needle | Experiment::Isoperimetric | Experiment::LogSobolev => &[GaussianLine, QuarticNeedle],
            Experiment::Rigidity | Experiment::Corollary => &[CircleProduct, TorusProduct],
        }
    }

    pub fn needs_seed(self) -> bool {
        matches!(self, Experiment::Eigen | Experiment::Rigidity)
    }

    pub fn needs_grid(self) -> bool {
        self != Experiment::CoreChecks
    }

    /// Top-level keys a config for this experiment must provide.
    pub fn required_keys(self) -> Vec<&'static str> {
        let mut keys = vec!["schema", "experiment", "model"];
        if self.needs_grid() {
            keys.push("grid");
        }
        if self.needs_seed() {
            keys.push("seed");
        }
        if self == Experiment::Corollary {
            keys.push("corollary");
        }
        keys
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// The real line with `N(0, 1/K)`.
    GaussianLine,
    /// The line with potential `K t^2 / 2 + s t^4`.
    QuarticNeedle,
    /// Flat circle times the Gaussian line.
    CircleProduct,
    /// Flat quartic Minkowski torus times the Gaussian line.
    TorusProduct,
    /// The plane with `F(v) = |v| + b v_1`.
    RandersMinkowski,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GaussianLine => "gaussian_line",
            ModelKind::QuarticNeedle => "quartic_needle",
            ModelKind::CircleProduct => "circle_product",
            ModelKind::TorusProduct => "torus_product",
            ModelKind::RandersMinkowski => "randers_minkowski",
        }
    }

    fn parameters(self) -> &'static [&'static str] {
        match self {
            ModelKind::GaussianLine => &[],
            ModelKind::QuarticNeedle => &["quartic"],
            ModelKind::CircleProduct => &["length"],
            ModelKind::TorusProduct => &["length", "weight"],
            ModelKind::RandersMinkowski => &["drift"],
        }
    }

    fn axes(self) -> usize {
        match self {
            ModelKind::GaussianLine | ModelKind::QuarticNeedle => 1,
            ModelKind::CircleProduct | ModelKind::RandersMinkowski => 2,
            ModelKind::TorusProduct => 3,
        }
    }

    pub fn is_product(self) -> bool {
        matches!(self, ModelKind::CircleProduct | ModelKind::TorusProduct)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// The curvature bound `K`.
    pub curvature: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, f64>,
    /// Chart box; only the Randers plane accepts one (default unbounded).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
}

impl ModelSpec {
    pub fn parameter(&self, name: &str, default: f64) -> f64 {
        self.parameters.get(name).copied().unwrap_or(default)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per axis, line axis last.
    pub nodes: Vec<usize>,
    /// Half-width of the line in standard deviations `1 / sqrt(K)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorollaryKind {
    LogSobolev,
    Isoperimetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorollarySpec {
    pub kind: CorollaryKind,
    /// Volume fraction of the isoperimetric set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub experiment: Experiment,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corollary: Option<CorollarySpec>,
    /// Overrides of the default tolerance, by check name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA {
            return Err(field(
                "schema",
                format!("expected \"{SCHEMA}\", found \"{}\"", self.schema),
            ));
        }
        let kind = self.model.kind;
        if !self.experiment.models().contains(&kind) {
            let allowed: Vec<&str> = self.experiment.models().iter().map(|m| m.name()).collect();
            return Err(field(
                "model.kind",
                format!(
                    "`{}` does not support {}; use one of {}",
                    self.experiment,
                    kind.name(),
                    allowed.join(", ")
                ),
            ));
        }
        let k = self.model.curvature;
        if !(k.is_finite() && k > 0.0) {
            return Err(field("model.curvature", "must be positive and finite"));
        }
        for (name, value) in &self.model.parameters {
            if !kind.parameters().contains(&name.as_str()) {
                return Err(field(
                    format!("model.parameters.{name}"),
                    format!("unknown parameter for {}", kind.name()),
                ));
            }
            if !value.is_finite() {
                return Err(field(format!("model.parameters.{name}"), "must be finite"));
            }
        }
        self.validate_parameters()?;
        if let Some(dom) = &self.model.domain {
            if kind != ModelKind::RandersMinkowski {
                return Err(field(
                    "model.domain",
                    "only the randers_minkowski chart takes a domain box",
                ));
            }
            if dom.lo.len() != 2 || dom.hi.len() != 2 || dom.lo.iter().zip(&dom.hi).any(|(a, b)| !(a < b)) {
                return Err(field("model.domain", "needs two coordinates with lo < hi"));
            }
        }
        match (&self.grid, self.experiment.needs_grid()) {
            (None, true) => return Err(field("grid", "required for this experiment")),
            (Some(_), false) => return Err(field("grid", "not used by this experiment")),
            (Some(g), true) => self.validate_grid(g)?,
            (None, false) => {}
        }
        if self.experiment.needs_seed() && self.seed.is_none() {
            return Err(field("seed", "required for eigen experiments"));
        }
        match (&self.corollary, self.experiment) {
            (None, Experiment::Corollary) => return Err(field("corollary", "required for this experiment")),
            (Some(_), e) if e != Experiment::Corollary => {
                return Err(field("corollary", "only the corollary experiment takes this section"))
            }
            (Some(c), _) => match (c.kind, c.theta) {
                (CorollaryKind::LogSobolev, Some(_)) => {
                    return Err(field(
                        "corollary.theta",
                        "only the isoperimetric corollary takes a volume fraction",
                    ))
                }
                (CorollaryKind::Isoperimetric, Some(t)) if !(t > 0.0 && t < 1.0) => {
                    return Err(field("corollary.theta", "must lie in (0, 1)"))
                }
                _ => {}
            },
            _ => {}
        }
        let known = crate::experiments::check_names(self.experiment);
        for (name, tol) in &self.tolerances {
            if !known.contains(&name.as_str()) {
                return Err(field(
                    format!("tolerances.{name}"),
                    format!("`{}` has no such check; known: {}", self.experiment, known.join(", ")),
                ));
            }
            if !tol.is_finite() {
                return Err(field(format!("tolerances.{name}"), "must be finite"));
            }
        }
        Ok(())
    }

    fn validate_parameters(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if let Some(l) = m.parameters.get("length") {
            if *l <= 0.0 {
                return Err(field("model.parameters.length", "must be positive"));
            }
        }
        if let Some(s) = m.parameters.get("quartic") {
            if *s < 0.0 {
                return Err(field("model.parameters.quartic", "must be nonnegative"));
            }
        }
        if let Some(w) = m.parameters.get("weight") {
            if !(0.0..1.0 / 3.0).contains(w) {
                return Err(field("model.parameters.weight", "must lie in [0, 1/3)"));
            }
        }
        if let Some(b) = m.parameters.get("drift") {
            if b.abs() >= 1.0 {
                return Err(field("model.parameters.drift", "must satisfy |drift| < 1"));
            }
        }
        Ok(())
    }

    fn validate_grid(&self, g: &GridSpec) -> Result<(), ConfigError> {
        let kind = self.model.kind;
        if g.nodes.len() != kind.axes() {
            return Err(field(
                "grid.nodes",
                format!("{} needs {} entries, found {}", kind.name(), kind.axes(), g.nodes.len()),
            ));
        }
        let line = *g.nodes.last().expect("nonempty");
        if line < 5 {
            return Err(field("grid.nodes", "the line axis needs at least 5 nodes"));
        }
        if kind.is_product() {
            let cross = &g.nodes[..g.nodes.len() - 1];
            if cross.iter().any(|n| *n < 4) || cross.iter().any(|n| *n != cross[0]) {
                return Err(field(
                    "grid.nodes",
                    "cross-section axes need equal counts of at least 4",
                ));
            }
            if g.truncation.is_some() {
                return Err(field(
                    "grid.truncation",
                    "product models truncate the line at 8 standard deviations",
                ));
            }
        }
        if let Some(t) = g.truncation {
            if !(t.is_finite() && t >= 6.0) {
                return Err(field("grid.truncation", "must be at least 6 standard deviations"));
            }
        }
        Ok(())
    }

    /// The echo stored in the report. It parses back to the same config.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
