//! Run configuration: TOML ingestion, unit conversion and validation.
//!
//! ```toml
//! mesh = "tissue.mesh"            # or: [mesh] cube = 8, edge = 1.0
//! network = "network.txt"
//! final_time = "21 d"
//! time_step = "6 h"
//! seed = 1
//! preset = "set1"
//!
//! [parameters]
//! kappa = "3.22e-9 mm2"
//! tau_br = 48
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::ConfigError;
use crate::params::{parse_quantity, preset, spec, Dim, Numerics, ParameterSet};

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    File(PathBuf),
    /// Structured cube `[0, edge]³` with `n` cells per side.
    Cube { n: usize, edge: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConditions {
    /// Uniform tumor fraction; `phi_0` when absent.
    pub phi: Option<f64>,
    /// Uniform oxygen; a steady pre-solve on the initial network when absent.
    pub c: Option<f64>,
    pub g: f64,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self { phi: None, c: None, g: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub mesh: MeshSource,
    pub network: PathBuf,
    /// Hours.
    pub final_time: f64,
    /// Hours.
    pub time_step: f64,
    pub seed: u64,
    pub preset: Option<String>,
    pub output_dir: Option<PathBuf>,
    /// VTK snapshot cadence in steps, 0 disables snapshots.
    pub snapshot_every: usize,
    /// Explicit overrides in internal units, applied after the preset.
    pub overrides: BTreeMap<String, f64>,
    pub parameters: ParameterSet,
    pub numerics: Numerics,
    pub initial: InitialConditions,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

const REQUIRED: [&str; 3] = ["mesh", "network", "final_time"];
const KNOWN: [&str; 11] = [
    "mesh",
    "network",
    "final_time",
    "time_step",
    "seed",
    "preset",
    "output_dir",
    "snapshot_every",
    "parameters",
    "numerics",
    "initial",
];

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn quantity(key: &str, v: &Value, dim: Dim) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        Value::String(s) => parse_quantity(s, dim).map_err(|m| invalid(key, m)),
        other => Err(invalid(key, format!("expected a number or a \"value unit\" string, found {}", other.type_str()))),
    }
}

fn string(key: &str, v: &Value) -> Result<String, ConfigError> {
    v.as_str().map(str::to_string).ok_or_else(|| invalid(key, "expected a string"))
}

fn unsigned(key: &str, v: &Value) -> Result<u64, ConfigError> {
    match v.as_integer() {
        Some(i) if i >= 0 => Ok(i as u64),
        _ => Err(invalid(key, "expected a non-negative integer")),
    }
}

impl SimulationConfig {
    /// Defaults around the three required entries.
    pub fn new(mesh: MeshSource, network: impl Into<PathBuf>, final_time: f64) -> Self {
        Self {
            mesh,
            network: network.into(),
            final_time,
            time_step: 6.0,
            seed: 0,
            preset: None,
            output_dir: None,
            snapshot_every: 4,
            overrides: BTreeMap::new(),
            parameters: ParameterSet::default(),
            numerics: Numerics::default(),
            initial: InitialConditions::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let missing: Vec<&str> = REQUIRED.iter().copied().filter(|k| !table.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(ConfigError::Parse(format!("missing required keys: {}", missing.join(", "))));
        }
        if let Some(k) = table.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(invalid(k, format!("unknown key (known keys: {})", KNOWN.join(", "))));
        }

        let mesh = match &table["mesh"] {
            Value::String(s) => MeshSource::File(PathBuf::from(s)),
            Value::Table(t) => {
                if let Some(k) = t.keys().find(|k| *k != "cube" && *k != "edge") {
                    return Err(invalid(&format!("mesh.{k}"), "unknown key (expected `cube`, `edge`)"));
                }
                let n = t.get("cube").ok_or_else(|| invalid("mesh.cube", "missing cell count"))?;
                let n = unsigned("mesh.cube", n)? as usize;
                if n == 0 {
                    return Err(invalid("mesh.cube", "must be at least 1"));
                }
                let edge = t.get("edge").map(|v| quantity("mesh.edge", v, Dim::Length)).transpose()?.unwrap_or(1.0);
                MeshSource::Cube { n, edge }
            }
            _ => return Err(invalid("mesh", "expected a path or a table with `cube` and `edge`")),
        };
        let network = PathBuf::from(string("network", &table["network"])?);
        let mut cfg = Self::new(mesh, network, quantity("final_time", &table["final_time"], Dim::Time)?);
        cfg.base_dir = base_dir.to_path_buf();
        if let Some(v) = table.get("time_step") {
            cfg.time_step = quantity("time_step", v, Dim::Time)?;
        }
        if let Some(v) = table.get("seed") {
            cfg.seed = unsigned("seed", v)?;
        }
        if let Some(v) = table.get("preset") {
            cfg.preset = Some(string("preset", v)?);
        }
        if let Some(v) = table.get("output_dir") {
            cfg.output_dir = Some(PathBuf::from(string("output_dir", v)?));
        }
        if let Some(v) = table.get("snapshot_every") {
            cfg.snapshot_every = unsigned("snapshot_every", v)? as usize;
        }
        if let Some(v) = table.get("parameters") {
            let t = v.as_table().ok_or_else(|| invalid("parameters", "expected a table"))?;
            for (k, v) in t {
                let s = spec(k).ok_or_else(|| invalid(k, "unknown parameter"))?;
                cfg.overrides.insert(k.clone(), quantity(k, v, s.dim)?);
            }
        }
        if let Some(v) = table.get("numerics") {
            cfg.numerics = v.clone().try_into().map_err(|e: toml::de::Error| invalid("numerics", e.message()))?;
        }
        if let Some(v) = table.get("initial") {
            cfg.initial = v.clone().try_into().map_err(|e: toml::de::Error| invalid("initial", e.message()))?;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Recomputes `parameters` from defaults, preset and overrides, then validates.
    pub fn resolve(&mut self) -> Result<(), ConfigError> {
        let mut p = ParameterSet::default();
        if let Some(name) = &self.preset {
            preset(name)?.apply(&mut p);
        }
        for (k, &v) in &self.overrides {
            p.set(k, v)?;
        }
        self.parameters = p;
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return Err(invalid("final_time", "must be positive"));
        }
        if !(self.time_step > 0.0 && self.time_step.is_finite()) {
            return Err(invalid("time_step", "must be positive"));
        }
        if let MeshSource::Cube { edge, .. } = self.mesh {
            if !(edge > 0.0) {
                return Err(invalid("mesh.edge", "must be positive"));
            }
        }
        if let Some(phi) = self.initial.phi {
            if !(phi > 0.0 && phi < self.parameters.phi_max) {
                return Err(invalid("initial.phi", "must lie in (0, phi_max)"));
            }
        }
        if let Some(c) = self.initial.c {
            if !(c >= 0.0) {
                return Err(invalid("initial.c", "must be non-negative"));
            }
        }
        self.parameters.check()?;
        self.numerics.check()
    }

    /// Out-of-range parameters relative to the documented ranges.
    pub fn warnings(&self) -> Vec<String> {
        self.parameters.warnings()
    }

    pub fn n_steps(&self) -> usize {
        (self.final_time / self.time_step - 1e-9).ceil().max(1.0) as usize
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Canonical TOML with every value in internal units.
    pub fn to_toml(&self) -> String {
        let mut t = Table::new();
        match &self.mesh {
            MeshSource::File(p) => {
                t.insert("mesh".into(), Value::String(p.display().to_string()));
            }
            MeshSource::Cube { n, edge } => {
                let mut m = Table::new();
                m.insert("cube".into(), Value::Integer(*n as i64));
                m.insert("edge".into(), Value::Float(*edge));
                t.insert("mesh".into(), Value::Table(m));
            }
        }
        t.insert("network".into(), Value::String(self.network.display().to_string()));
        t.insert("final_time".into(), Value::Float(self.final_time));
        t.insert("time_step".into(), Value::Float(self.time_step));
        t.insert("seed".into(), Value::Integer(self.seed as i64));
        if let Some(p) = &self.preset {
            t.insert("preset".into(), Value::String(p.clone()));
        }
        if let Some(p) = &self.output_dir {
            t.insert("output_dir".into(), Value::String(p.display().to_string()));
        }
        t.insert("snapshot_every".into(), Value::Integer(self.snapshot_every as i64));
        let params: Table = self.overrides.iter().map(|(k, &v)| (k.clone(), Value::Float(v))).collect();
        t.insert("parameters".into(), Value::Table(params));
        t.insert("numerics".into(), Value::try_from(&self.numerics).expect("numerics serialize"));
        t.insert("initial".into(), Value::try_from(&self.initial).expect("initial conditions serialize"));
        toml::to_string(&t).expect("toml serialization")
    }
}
