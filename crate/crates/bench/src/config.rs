//! Experiment configuration files.
//!
//! A config is a TOML document holding one `[[experiment]]` table per
//! experiment. Parsing rejects unknown keys; [`Experiment::resolve`] then
//! checks every field and builds the problem before anything runs.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use precond_sgd::optimizer::{validate, Algorithm, RunConfig};
use precond_sgd::precond::DEFAULT_DELTA;
use precond_sgd::rng::{fill_standard_normal, seeded};
use precond_sgd::space::{Point, Space, SpaceElement, SpaceKind};
use precond_sgd::testbed::{make_holder, make_quadratic, ProblemSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("experiment `{experiment}`: field `{field}`: {message}")]
    Field {
        experiment: String,
        field: &'static str,
        message: String,
    },
}

/// A scalar broadcast to every entry, or an explicit list.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Values {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Quadratic,
    Holder,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SpaceName {
    Scalar,
    Diagonal,
    Left,
    Rows,
}

impl From<SpaceName> for SpaceKind {
    fn from(s: SpaceName) -> Self {
        match s {
            SpaceName::Scalar => SpaceKind::ScalarIdentity,
            SpaceName::Diagonal => SpaceKind::Diagonal,
            SpaceName::Left => SpaceKind::LeftMatrix,
            SpaceName::Rows => SpaceKind::RowDiagonal,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// `+s, −s, +s, …` in row-major order.
    Alternating,
    Ones,
    /// Seeded standard normal entries rescaled so the largest magnitude is `s`.
    Gaussian,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub family: Family,
    pub space: SpaceName,
    pub dim: Option<usize>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub weights: Values,
    pub weights_fill: Option<f64>,
    pub nu: Option<f64>,
    pub x_star: Option<Values>,
    pub x_star_fill: Option<f64>,
    pub x_star_pattern: Option<Pattern>,
    pub x_star_scale: Option<f64>,
    pub x_star_seed: Option<u64>,
    pub x0: Option<Values>,
    pub noise_sigma: Option<Values>,
    pub algorithms: Vec<String>,
    pub checkpoints: Vec<usize>,
    pub radius: f64,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    pub seeds: Vec<u64>,
    pub audit: Option<bool>,
    pub output: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(rename = "experiment", default)]
    pub experiments: Vec<ExperimentConfig>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Validates every experiment, in file order.
    pub fn resolve(&self) -> Result<Vec<Experiment>, ConfigError> {
        if self.experiments.is_empty() {
            return Err(ConfigError::Parse("config defines no [[experiment]] tables".into()));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.experiments.len());
        for cfg in &self.experiments {
            if !seen.insert(cfg.id.as_str()) {
                return Err(field_err(&cfg.id, "id", "duplicate experiment id"));
            }
            out.push(Experiment::resolve(cfg)?);
        }
        Ok(out)
    }
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub id: String,
    pub problem: ProblemSpec,
    /// One template per algorithm; seeds are filled in per run.
    pub runs: Vec<RunConfig>,
    pub checkpoints: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output: Option<String>,
}

fn field_err(experiment: &str, field: &'static str, message: impl fmt::Display) -> ConfigError {
    ConfigError::Field {
        experiment: experiment.to_string(),
        field,
        message: message.to_string(),
    }
}

fn expand(
    id: &str,
    field: &'static str,
    values: &Values,
    fill: Option<f64>,
    len: usize,
) -> Result<Vec<f64>, ConfigError> {
    let out = match values {
        Values::One(v) => vec![*v; len],
        Values::Many(v) if v.len() == len => v.clone(),
        Values::Many(v) if v.len() < len && fill.is_some() => {
            let mut v = v.clone();
            v.resize(len, fill.unwrap());
            v
        }
        Values::Many(v) => {
            return Err(field_err(
                id,
                field,
                format!("expected {len} values, got {}", v.len()),
            ))
        }
    };
    if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
        return Err(field_err(id, field, format!("non-finite value {bad}")));
    }
    Ok(out)
}

/// Stable stream index for an experiment id (64-bit FNV-1a).
pub fn stream_for(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Experiment {
    pub fn resolve(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        let id = cfg.id.as_str();
        if id.is_empty()
            || !id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(field_err(
                id,
                "id",
                "must be non-empty and use only ASCII letters, digits, '-', '_' or '.'",
            ));
        }

        let kind = SpaceKind::from(cfg.space);
        let (rows, cols) = if kind.is_matrix() {
            if cfg.dim.is_some() {
                return Err(field_err(id, "dim", "matrix spaces take `rows` and `cols`"));
            }
            let rows = cfg.rows.ok_or_else(|| field_err(id, "rows", "required for matrix spaces"))?;
            let cols = cfg.cols.ok_or_else(|| field_err(id, "cols", "required for matrix spaces"))?;
            (rows, cols)
        } else {
            if cfg.rows.is_some() || cfg.cols.is_some() {
                return Err(field_err(id, "rows", "vector spaces take `dim`"));
            }
            (cfg.dim.ok_or_else(|| field_err(id, "dim", "required for vector spaces"))?, 1)
        };
        let space = Space::new(kind, rows, cols).map_err(|e| field_err(id, "dim", e))?;
        let dim = space.dim();

        let weights = expand(id, "weights", &cfg.weights, cfg.weights_fill, rows)?;
        let x_star = resolve_x_star(cfg, &space)?;

        let problem = match cfg.family {
            Family::Quadratic => {
                if let Some(nu) = cfg.nu.filter(|nu| *nu != 1.0) {
                    return Err(field_err(id, "nu", format!("quadratic family has nu = 1, got {nu}")));
                }
                make_quadratic(space, &weights, x_star).map_err(|e| field_err(id, "weights", e))?
            }
            Family::Holder => {
                let nu = cfg.nu.ok_or_else(|| field_err(id, "nu", "required for the holder family"))?;
                make_holder(space, &weights, nu, x_star).map_err(|e| field_err(id, "nu", e))?
            }
        };
        let problem = match &cfg.noise_sigma {
            None => problem,
            Some(v) => {
                let sigma = expand(id, "noise_sigma", v, None, space.param_len())?;
                if sigma.iter().all(|s| *s == 0.0) {
                    problem
                } else {
                    let sigma = SpaceElement::from_diagonal(space, &sigma)
                        .map_err(|e| field_err(id, "noise_sigma", e))?;
                    problem.with_noise(sigma).map_err(|e| field_err(id, "noise_sigma", e))?
                }
            }
        };

        let x0 = cfg
            .x0
            .as_ref()
            .map(|v| {
                expand(id, "x0", v, None, dim)
                    .map(|vals| Point::from_row_slice(rows, cols, &vals))
            })
            .transpose()?;

        if cfg.algorithms.is_empty() {
            return Err(field_err(id, "algorithms", "list at least one algorithm"));
        }
        let mut checkpoints = cfg.checkpoints.clone();
        checkpoints.sort_unstable();
        checkpoints.dedup();
        if checkpoints.first().is_none_or(|k| *k == 0) {
            return Err(field_err(id, "checkpoints", "need at least one checkpoint, all >= 1"));
        }
        let iterations = *checkpoints.last().unwrap();
        if cfg.seeds.is_empty() {
            return Err(field_err(id, "seeds", "list at least one seed"));
        }
        let delta = cfg.delta.unwrap_or(DEFAULT_DELTA);
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(field_err(id, "delta", format!("must be positive, got {delta}")));
        }
        if let Some(eta) = cfg.eta.filter(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(field_err(id, "eta", format!("must be positive, got {eta}")));
        }
        if !(cfg.radius > 0.0 && cfg.radius.is_finite()) {
            return Err(field_err(id, "radius", format!("must be positive, got {}", cfg.radius)));
        }
        if let Some(out) = &cfg.output {
            let p = Path::new(out);
            if out.is_empty() || p.is_absolute() || p.components().any(|c| c.as_os_str() == "..") {
                return Err(field_err(id, "output", "must be a relative path inside the output directory"));
            }
        }

        let mut runs = Vec::with_capacity(cfg.algorithms.len());
        let mut seen = HashSet::new();
        for name in &cfg.algorithms {
            let algorithm: Algorithm = name.parse().map_err(|e| field_err(id, "algorithms", e))?;
            if !seen.insert(algorithm) {
                return Err(field_err(id, "algorithms", format!("`{name}` listed twice")));
            }
            let mut run = RunConfig::new(algorithm, iterations, cfg.radius);
            run.delta = delta;
            run.eta = cfg.eta;
            run.audit = cfg.audit.unwrap_or(true);
            run.x0 = x0.clone();
            run.stream = stream_for(id);
            let field = if algorithm.is_clipped() { "radius" } else { "algorithms" };
            validate(&problem, &run).map_err(|e| field_err(id, field, e))?;
            runs.push(run);
        }

        Ok(Experiment {
            id: cfg.id.clone(),
            problem,
            runs,
            checkpoints,
            seeds: cfg.seeds.clone(),
            output: cfg.output.clone(),
        })
    }
}

fn resolve_x_star(cfg: &ExperimentConfig, space: &Space) -> Result<Point, ConfigError> {
    let id = cfg.id.as_str();
    let (rows, cols, dim) = (space.rows(), space.cols(), space.dim());
    let values = match (&cfg.x_star, cfg.x_star_pattern) {
        (Some(_), Some(_)) => {
            return Err(field_err(id, "x_star_pattern", "give either `x_star` or `x_star_pattern`"))
        }
        (None, None) => return Err(field_err(id, "x_star", "required (or `x_star_pattern`)")),
        (Some(v), None) => {
            if cfg.x_star_scale.is_some() || cfg.x_star_seed.is_some() {
                return Err(field_err(id, "x_star_scale", "only meaningful with `x_star_pattern`"));
            }
            expand(id, "x_star", v, cfg.x_star_fill, dim)?
        }
        (None, Some(pattern)) => {
            if cfg.x_star_fill.is_some() {
                return Err(field_err(id, "x_star_fill", "only meaningful with `x_star`"));
            }
            let scale = cfg.x_star_scale.unwrap_or(1.0);
            if !scale.is_finite() {
                return Err(field_err(id, "x_star_scale", "must be finite"));
            }
            match pattern {
                Pattern::Alternating => (0..dim)
                    .map(|i| if i % 2 == 0 { scale } else { -scale })
                    .collect(),
                Pattern::Ones => vec![scale; dim],
                Pattern::Gaussian => {
                    let mut rng = seeded(cfg.x_star_seed.unwrap_or(0), 0);
                    let mut v = vec![0.0; dim];
                    fill_standard_normal(&mut rng, &mut v);
                    let top = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    v.iter().map(|x| x / top * scale).collect()
                }
            }
        }
    };
    Ok(Point::from_row_slice(rows, cols, &values))
}
