//! Scenario files: one JSON document per run.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Field, Kernel, KernelSpec, Mesh};
use crate::spectral::RateFields;
use crate::equilibria::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

/// A coefficient field given in closed form or as a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    Constant { value: f64 },
    /// `base + amplitude cos(frequency π x)`
    Cosine { base: f64, amplitude: f64, frequency: f64 },
    /// `base + height exp(-((x - center)/width)²)`
    GaussianBump { base: f64, height: f64, width: f64, center: f64 },
    /// Node values, linearly interpolated onto the mesh. Without `x` the
    /// values sit on the mesh nodes when the counts agree, and otherwise on a
    /// uniform grid including both endpoints of the domain.
    Table {
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x: Option<Vec<f64>>,
    },
}

impl RateSpec {
    pub fn evaluate(&self, mesh: &Mesh, name: &str) -> Result<Field> {
        let field = match self {
            Self::Constant { value } => mesh.constant(*value),
            Self::Cosine { base, amplitude, frequency } => {
                mesh.field_from_fn(|x| base + amplitude * (frequency * PI * x).cos())
            }
            Self::GaussianBump { base, height, width, center } => {
                if !(*width > 0.0) {
                    return Err(Error::ConfigInvalid(format!("{name}.width must be positive, got {width}")));
                }
                mesh.field_from_fn(|x| base + height * (-((x - center) / width).powi(2)).exp())
            }
            Self::Table { values, x } => table(mesh, values, x.as_deref(), name)?,
        };
        if let Some((node, v)) = field.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::ConfigInvalid(format!("{name} must be positive; node {node} evaluates to {v}")));
        }
        Ok(field)
    }
}

fn table(mesh: &Mesh, values: &[f64], x: Option<&[f64]>, name: &str) -> Result<Field> {
    let m = values.len();
    if x.is_none() && m == mesh.len() {
        return Ok(Field::from(values.to_vec()));
    }
    if m < 2 {
        return Err(Error::ConfigInvalid(format!("{name}.values needs at least two entries")));
    }
    let grid: Vec<f64> = match x {
        Some(x) => {
            if x.len() != m {
                return Err(Error::ConfigInvalid(format!("{name}.x has {} entries, values has {m}", x.len())));
            }
            if x.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::ConfigInvalid(format!("{name}.x must be strictly increasing")));
            }
            x.to_vec()
        }
        None => {
            let step = (mesh.b() - mesh.a()) / (m - 1) as f64;
            (0..m).map(|k| mesh.a() + k as f64 * step).collect()
        }
    };
    let (lo, hi) = (grid[0], grid[m - 1]);
    let mut out = Vec::with_capacity(mesh.len());
    for &p in mesh.nodes() {
        if p < lo || p > hi {
            return Err(Error::ConfigInvalid(format!("{name}: node {p} lies outside the table range [{lo}, {hi}]")));
        }
        let k = grid.partition_point(|g| *g <= p).clamp(1, m - 1);
        let w = (p - grid[k - 1]) / (grid[k] - grid[k - 1]);
        out.push(values[k - 1] * (1.0 - w) + values[k] * w);
    }
    Ok(Field::from(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Spectrum,
    Equilibrium,
    Simulate,
    Sweep,
    Limits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Logspace {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

/// Diffusivity grid: an explicit list or `{"logspace": {start, stop, count}}`
/// (decimal exponents).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DGrid {
    List(Vec<f64>),
    Logspace { logspace: Logspace },
}

impl DGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Self::List(v) => v.clone(),
            Self::Logspace { logspace: Logspace { start, stop, count } } => {
                if *count < 2 {
                    return Err(Error::ConfigInvalid("options.d_grid.logspace.count must be at least 2".into()));
                }
                let step = (stop - start) / (*count - 1) as f64;
                (0..*count).map(|k| 10f64.powf(start + k as f64 * step)).collect()
            }
        };
        if v.is_empty() || v.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::ConfigInvalid("options.d_grid must be a nonempty list of positive values".into()));
        }
        if v.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::ConfigInvalid("options.d_grid must be strictly increasing".into()));
        }
        Ok(v)
    }
}

/// Which diffusivity a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    DI,
    DS,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Iid uniform entries rescaled to mass `N`, seeded by the scenario seed.
    Random,
    /// Constant fields, rescaled to mass `N`.
    Constant { s: f64, i: f64 },
    Table { s: RateSpec, i: RateSpec },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskOptions {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_grid: Option<DGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_axis: Option<SweepAxis>,
    /// Also solve the endemic state at every sweep point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_equilibria: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Defaults to the explicit-stability bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<bool>,
    /// Finite diffusivities compared against the limit profiles.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit_d: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mesh: MeshSpec,
    pub kernel: KernelSpec,
    pub beta: RateSpec,
    pub gamma: RateSpec,
    pub d_s: f64,
    pub d_i: f64,
    pub n_total: f64,
    pub task: Task,
    #[serde(default)]
    pub options: TaskOptions,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is plain data")
    }

    /// Field-level checks that do not need the discretization.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d_s", self.d_s), ("d_i", self.d_i), ("n_total", self.n_total)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::ConfigInvalid(format!("{name} must be positive, got {v}")));
            }
        }
        let o = &self.options;
        if let Some(g) = &o.d_grid {
            g.values()?;
        }
        if let Some(t) = o.t_end {
            if !(t > 0.0) {
                return Err(Error::ConfigInvalid(format!("options.t_end must be positive, got {t}")));
            }
        }
        if let Some(dt) = o.dt {
            if !(dt > 0.0) {
                return Err(Error::ConfigInvalid(format!("options.dt must be positive, got {dt}")));
            }
        }
        if let Some(ds) = &o.limit_d {
            if ds.is_empty() || ds.iter().any(|d| !(*d > 0.0)) {
                return Err(Error::ConfigInvalid("options.limit_d must be a nonempty list of positive values".into()));
            }
        }
        match self.task {
            Task::Sweep if o.d_grid.is_none() => Err(Error::ConfigInvalid("task sweep needs options.d_grid".into())),
            Task::Simulate if o.t_end.is_none() => Err(Error::ConfigInvalid("task simulate needs options.t_end".into())),
            _ => Ok(()),
        }
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        let MeshSpec { a, b, n } = self.mesh;
        Mesh::new(a, b, n).map_err(|e| Error::ConfigInvalid(format!("mesh: {e}")))
    }

    pub fn build_kernel(&self, mesh: &Mesh) -> Result<Kernel> {
        Kernel::new(mesh, self.kernel).map_err(|e| Error::ConfigInvalid(format!("kernel: {e}")))
    }

    pub fn build_rates(&self, mesh: &Mesh) -> Result<RateFields> {
        RateFields::new(self.beta.evaluate(mesh, "beta")?, self.gamma.evaluate(mesh, "gamma")?)
    }

    pub fn build_params(&self) -> Result<ModelParams> {
        let mesh = self.build_mesh()?;
        let kernel = self.build_kernel(&mesh)?;
        let rates = self.build_rates(&mesh)?;
        ModelParams::new(kernel, rates, self.d_s, self.d_i, self.n_total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "name": "sweep",
        "mesh": {"a": -1, "b": 1, "n": 100},
        "kernel": {"family": "triangle", "delta": 0.5},
        "beta": {"kind": "gaussian_bump", "base": 1, "height": 1.5, "width": 0.25, "center": 0},
        "gamma": {"kind": "constant", "value": 1.4},
        "d_s": 1, "d_i": 1, "n_total": 2,
        "task": "sweep",
        "options": {"d_grid": {"logspace": {"start": -3, "stop": 3, "count": 25}}},
        "seed": 7
    }"#;

    #[test]
    fn parse_and_round_trip() {
        let cfg = ScenarioConfig::from_json(SAMPLE).unwrap();
        assert_eq!(cfg.task, Task::Sweep);
        let grid = cfg.options.d_grid.as_ref().unwrap().values().unwrap();
        assert_eq!(grid.len(), 25);
        assert!((grid[0] - 1e-3).abs() < 1e-18 && (grid[24] - 1e3).abs() < 1e-9);
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_and_bad_values_rejected() {
        let bad = SAMPLE.replace("\"seed\": 7", "\"seed\": 7, \"sede\": 1");
        assert!(matches!(ScenarioConfig::from_json(&bad), Err(Error::ConfigInvalid(_))));
        let bad = SAMPLE.replace("\"d_s\": 1", "\"d_s\": 0");
        let err = ScenarioConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("d_s"), "{err}");
        let bad = SAMPLE.replace("\"count\": 25", "\"count\": 1");
        assert!(ScenarioConfig::from_json(&bad).is_err());
        let bad = SAMPLE.replace(r#"{"logspace": {"start": -3, "stop": 3, "count": 25}}"#, "[1, 0.5]");
        assert!(ScenarioConfig::from_json(&bad).unwrap_err().to_string().contains("increasing"));
    }

    #[test]
    fn rate_specs_evaluate() {
        let m = Mesh::new(-1.0, 1.0, 4).unwrap();
        let f = RateSpec::Cosine { base: 1.0, amplitude: 0.5, frequency: 1.0 }.evaluate(&m, "beta").unwrap();
        assert!((f[0] - (1.0 + 0.5 * (-0.75 * PI).cos())).abs() < 1e-15);
        let g = RateSpec::GaussianBump { base: 1.0, height: 2.0, width: 0.5, center: 0.25 }
            .evaluate(&m, "beta")
            .unwrap();
        assert!((g[2] - 3.0).abs() < 1e-15);
        assert!(RateSpec::Constant { value: -1.0 }.evaluate(&m, "gamma").is_err());
    }

    #[test]
    fn table_interpolation() {
        let m = Mesh::new(-1.0, 1.0, 4).unwrap();
        let same = RateSpec::Table { values: vec![1.0, 2.0, 3.0, 4.0], x: None }.evaluate(&m, "b").unwrap();
        assert_eq!(same.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        // linear in x on [-1, 1]: 2 + x
        let lin = RateSpec::Table { values: vec![1.0, 2.0, 3.0], x: None }.evaluate(&m, "b").unwrap();
        for (v, x) in lin.iter().zip(m.nodes()) {
            assert!((v - (2.0 + x)).abs() < 1e-15);
        }
        let short = RateSpec::Table { values: vec![1.0, 2.0], x: Some(vec![-0.5, 0.5]) };
        assert!(short.evaluate(&m, "b").unwrap_err().to_string().contains("outside"));
    }
}
