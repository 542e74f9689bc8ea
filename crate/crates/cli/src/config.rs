//! Run configuration: one TOML file with a table per module. Every key has a
//! default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use jetmarch::field::FieldSpec;
use jetmarch::linalg::Vec2;
use jetmarch::march::{Method, SolverConfig};
use jetmarch::tpt::DriftScheme;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub field: FieldSpec,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub sweep: SweepConfig,
    pub maier_stein: MaierSteinConfig,
    pub tpt: TptConfig,
    pub stencil: StencilConfig,
    pub trace: TraceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x: [f64; 2],
    pub y: [f64; 2],
    /// Points along x; the y count follows from the aspect ratio.
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { x: [-1.0, 1.0], y: [-1.0, 1.0], n: 129 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory, relative to the output root.
    pub dir: PathBuf,
    /// Also write PPM heatmaps.
    pub heatmap: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("."), heatmap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub methods: Vec<Method>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: vec![129, 257, 513],
            methods: vec![Method::Ejm, Method::LinearMidpoint, Method::AsrEndpoint],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaierSteinConfig {
    pub beta: f64,
    /// Points per side on `[-2, 0] × [-1, 1]`.
    pub n: usize,
    pub eps: Vec<f64>,
    /// Also run TPT at every `ε` and put its mean transition time in the table.
    pub tpt: bool,
}

impl Default for MaierSteinConfig {
    fn default() -> Self {
        Self { beta: 3.0, n: 513, eps: vec![0.1, 0.07, 0.05, 0.04, 0.03, 0.02], tpt: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TptConfig {
    pub beta: f64,
    /// Points along x on `[-1.5, 1.5] × [-0.75, 0.75]`.
    pub n: usize,
    pub eps: Vec<f64>,
    pub scheme: DriftScheme,
    pub radius: f64,
}

impl Default for TptConfig {
    fn default() -> Self {
        Self { beta: 3.0, n: 257, eps: vec![0.1], scheme: DriftScheme::default(), radius: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StencilFamily {
    #[default]
    Oblong,
    Asr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StencilConfig {
    pub kind: StencilFamily,
    /// Bins to dump; empty means all of them.
    pub bins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub target: Vec2,
    pub step: Option<f64>,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self { target: [0.5, 0.5], step: None }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Parses `key.path=value` into a TOML value, reading the right-hand side
/// as TOML and falling back to a bare string.
fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value), ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{item}` is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(ConfigError(format!("bad key in override `{item}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        let entry = table.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("`{p}` is not a table and cannot hold `{}`", path.join("."))))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file (if any), then `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                // Deserializing the text itself keeps line and column in errors.
                toml::from_str::<RunConfig>(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let (path, value) = parse_override(item)?;
            apply_override(&mut table, &path, value)?;
        }
        // A field table without a name means the default field.
        if let Some(toml::Value::Table(f)) = table.get_mut("field") {
            f.entry("name").or_insert_with(|| toml::Value::String("rotational".into()));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.solver.validate().map_err(|e| ConfigError(format!("[solver] {e}")))?;
        if self.sweep.sizes.len() < 3 {
            return Err(ConfigError("[sweep] sizes needs at least three grid sizes".into()));
        }
        if self.sweep.sizes.iter().any(|&n| n > 1025) {
            return Err(ConfigError("[sweep] sizes above 1025 are not supported".into()));
        }
        for (section, eps) in [("maier_stein", &self.maier_stein.eps), ("tpt", &self.tpt.eps)] {
            if eps.iter().any(|e| !(*e > 0.0)) {
                return Err(ConfigError(format!("[{section}] eps values must be positive")));
            }
        }
        Ok(())
    }
}
