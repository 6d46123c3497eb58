//! Problem definitions in TOML.
//!
//! A file may start from a built-in preset (`preset = "velocity"`) and
//! override any key; `key.path=value` overrides are applied on top of that.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Deserialize;
use toml::{Table, Value};

use crate::model::{AffineModel, Ball, CostSpec, Drift, Outer, ProblemSpec, SafeSet};
use crate::{Error, Result};

const VELOCITY: &str = include_str!("velocity.toml");
const CAR: &str = include_str!("car.toml");

pub const PRESETS: &[&str] = &["velocity", "car"];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    preset: Option<String>,
    name: String,
    model: ModelSection,
    cost: CostSection,
    safe_set: SafeSetSection,
    problem: ProblemSection,
    #[serde(default)]
    solver: SolverConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    state_dim: usize,
    control_dim: usize,
    noise_dim: usize,
    drift: DriftSection,
    input_map: Vec<Vec<f64>>,
    noise_map: Vec<Vec<f64>>,
    #[serde(default)]
    clamp: Option<ClampSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DriftSection {
    Zero,
    Linear { gains: Vec<f64> },
    Matrix { matrix: Vec<Vec<f64>> },
    Car { damping: f64, wheelbase: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClampSection {
    index: usize,
    bound: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostSection {
    running_weights: Vec<f64>,
    terminal_weights: Vec<f64>,
    control_weight: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SafeSetSection {
    horizon: [f64; 2],
    outer: OuterSection,
    #[serde(default)]
    obstacles: Vec<BallSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum OuterSection {
    Circle { center: Vec<f64>, radius: f64 },
    Rect { min: Vec<f64>, max: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BallSection {
    center: Vec<f64>,
    radius: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSection {
    risk_tolerance: f64,
    initial_state: Vec<f64>,
}

/// Numerical settings carried alongside a problem.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Monte Carlo trajectories per estimate.
    pub samples: usize,
    pub dt: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub eta_init: f64,
    pub max_iters: usize,
    /// FDM nodes per axis.
    pub grid: usize,
    pub fdm_order: usize,
    pub rtol: f64,
    /// Trajectories per path-integral control evaluation inside closed-loop rollouts.
    pub control_samples: usize,
    /// Probe states for cross-validation reports.
    pub probes: Option<Vec<Vec<f64>>>,
    /// Nodes per axis of the policy probe grid written by `solve`.
    pub policy_grid: usize,
    /// Row cap above which trajectory dumps warn.
    pub dump_row_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            samples: 20_000,
            dt: 0.01,
            epsilon: 0.01,
            learning_rate: 0.01,
            eta_init: 0.05,
            max_iters: 200,
            grid: 48,
            fdm_order: 4,
            rtol: 1e-3,
            control_samples: 1_000,
            probes: None,
            policy_grid: 0,
            dump_row_cap: 2_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(cfg_err(format!("solver.{f}"), m));
        if self.samples == 0 {
            return bad("samples", "must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt", "must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.eta_init > 0.0) {
            return bad("eta_init", "must be positive");
        }
        if self.grid < 8 {
            return bad("grid", "need at least 8 nodes per axis");
        }
        if self.fdm_order != 2 && self.fdm_order != 4 {
            return bad("fdm_order", "must be 2 or 4");
        }
        if !(self.rtol > 0.0) {
            return bad("rtol", "must be positive");
        }
        if self.control_samples == 0 {
            return bad("control_samples", "must be at least 1");
        }
        Ok(())
    }
}

/// Parsed, merged configuration (not yet turned into a problem).
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    table: Table,
}

/// A validated problem plus its solver settings.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub spec: ProblemSpec,
    pub solver: SolverConfig,
}

impl ProblemConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "velocity" => VELOCITY,
            "car" => CAR,
            other => {
                return Err(cfg_err(
                    "preset",
                    format!("unknown preset `{other}` (expected one of {PRESETS:?})"),
                ))
            }
        };
        Self::parse_str(text)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| cfg_err("<file>", e.message()))?;
        let table = match table.get("preset") {
            Some(Value::String(p)) => {
                let mut base = Self::preset(p)?.table;
                merge(&mut base, table);
                base
            }
            Some(_) => return Err(cfg_err("preset", "must be a string")),
            None => table,
        };
        Ok(Self { table })
    }

    /// Applies a `dotted.key=value` override. Values parse as TOML literals
    /// and fall back to plain strings.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| cfg_err(assignment, "expected key=value"))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        let mut parts = key.split('.').peekable();
        let mut cur = &mut self.table;
        while let Some(part) = parts.next() {
            if part.is_empty() {
                return Err(cfg_err(key, "empty key segment"));
            }
            if parts.peek().is_none() {
                cur.insert(part.to_string(), value);
                return Ok(());
            }
            let entry = cur
                .entry(part.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| cfg_err(key, format!("`{part}` is not a table")))?;
        }
        Err(cfg_err(key, "empty key"))
    }

    /// Merged configuration rendered back to TOML (stable key order).
    pub fn canonical_toml(&self) -> String {
        toml::to_string(&self.table).unwrap_or_default()
    }

    pub fn build(&self) -> Result<BuiltProblem> {
        let file: FileConfig = serde_path_to_error::deserialize(Value::Table(self.table.clone()))
            .map_err(|e| {
                let path = e.path().to_string();
                cfg_err(if path == "." { "<root>".to_string() } else { path }, e.inner().to_string())
            })?;
        file.solver.validate()?;
        let spec = build_spec(&file)?;
        if let Some(probes) = &file.solver.probes {
            for (i, p) in probes.iter().enumerate() {
                if p.len() != spec.safe().axes() {
                    return Err(cfg_err(format!("solver.probes[{i}]"), "wrong number of coordinates"));
                }
            }
        }
        let _ = file.preset;
        Ok(BuiltProblem {
            spec,
            solver: file.solver,
        })
    }
}

fn build_spec(file: &FileConfig) -> Result<ProblemSpec> {
    let m = &file.model;
    let n = m.state_dim;
    if n == 0 || m.control_dim == 0 || m.noise_dim == 0 {
        return Err(cfg_err("model", "dimensions must be positive"));
    }
    let g = matrix("model.input_map", &m.input_map, n, m.control_dim)?;
    let sigma = matrix("model.noise_map", &m.noise_map, n, m.noise_dim)?;
    let drift = match &m.drift {
        DriftSection::Zero => Drift::Zero,
        DriftSection::Linear { gains } => {
            if gains.len() != n {
                return Err(cfg_err("model.drift.gains", format!("expected {n} entries")));
            }
            Drift::Linear { gains: gains.clone() }
        }
        DriftSection::Matrix { matrix: a } => Drift::Matrix(matrix("model.drift.matrix", a, n, n)?),
        DriftSection::Car { damping, wheelbase } => Drift::Car {
            damping: *damping,
            wheelbase: *wheelbase,
        },
    };
    let mut model = AffineModel::new(drift, g, sigma).map_err(as_cfg)?;
    if let Some(c) = &m.clamp {
        if c.index >= n || !(c.bound > 0.0) {
            return Err(cfg_err("model.clamp", "index out of range or non-positive bound"));
        }
        model = model.with_clamp(c.index, c.bound);
    }

    let c = &file.cost;
    if c.running_weights.len() != n {
        return Err(cfg_err("cost.running_weights", format!("expected {n} entries")));
    }
    if c.terminal_weights.len() != n {
        return Err(cfg_err("cost.terminal_weights", format!("expected {n} entries")));
    }
    if c.running_weights.iter().chain(&c.terminal_weights).any(|w| *w < 0.0) {
        return Err(cfg_err("cost", "weights must be nonnegative"));
    }
    let r = matrix("cost.control_weight", &c.control_weight, m.control_dim, m.control_dim)?;
    let cost = CostSpec::diagonal_quadratic(c.running_weights.clone(), c.terminal_weights.clone(), r);

    let s = &file.safe_set;
    let outer = match &s.outer {
        OuterSection::Circle { center, radius } => Outer::Ball(Ball {
            center: center.clone(),
            radius: *radius,
        }),
        OuterSection::Rect { min, max } => Outer::Box {
            min: min.clone(),
            max: max.clone(),
        },
    };
    let obstacles = s
        .obstacles
        .iter()
        .map(|b| Ball {
            center: b.center.clone(),
            radius: b.radius,
        })
        .collect();
    let safe = SafeSet::new(outer, obstacles, (s.horizon[0], s.horizon[1])).map_err(as_cfg)?;

    ProblemSpec::new(
        file.name.clone(),
        Arc::new(model),
        cost,
        safe,
        file.problem.risk_tolerance,
        file.problem.initial_state.clone(),
    )
    .map_err(|e| match e {
        Error::InvalidParameter { field, message } => {
            let field = match field.as_str() {
                "risk_tolerance" | "initial_state" => format!("problem.{field}"),
                _ => field,
            };
            Error::Config { field, message }
        }
        other => other,
    })
}

fn matrix(field: &str, rows: &[Vec<f64>], nr: usize, nc: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(cfg_err(field, format!("expected a {nr}x{nc} matrix")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn cfg_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn as_cfg(e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, message } => Error::Config { field, message },
        other => other,
    }
}
