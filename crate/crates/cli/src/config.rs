//! Experiment configuration: TOML (or JSON) files, dotted-path overrides,
//! defaults, and validation that reports every violation at once.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use stochact::grid::{Grid, Propagator, Scheme};
use stochact::rounding::TieBreak;
use stochact::tree::{NoiseCoefficient, TreeTopology};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 32, length: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
    /// "exact-spectral" or "implicit-euler".
    pub scheme: String,
    /// Path topology (branching disabled); the classical control problem.
    pub deterministic: bool,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            horizon: 0.1,
            steps: 10,
            scheme: "exact-spectral".into(),
            deterministic: false,
        }
    }
}

/// Constant or per-step noise coefficient.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum NoiseSpec {
    Constant(f64),
    PerStep(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub a: NoiseSpec,
    pub a_max: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            a: NoiseSpec::Constant(1.0),
            a_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub epsilon: f64,
    pub alpha: f64,
    /// Optional terminal-datum search-ball radius; absent disables the
    /// projection.
    pub ball_radius: Option<f64>,
    /// "alpha-uniform", "indicator" (with `beta_cells`) or "explicit"
    /// (with `beta_values`).
    pub beta_kind: String,
    pub beta_cells: Option<Vec<usize>>,
    pub beta_values: Option<Vec<f64>>,
    /// "lowest-index" or "symmetric-pairing".
    pub tie_break: String,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            epsilon: 0.1,
            alpha: 0.25,
            ball_radius: None,
            beta_kind: "alpha-uniform".into(),
            beta_cells: None,
            beta_values: None,
            tie_break: "lowest-index".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InitialStateConfig {
    /// "sine", "gaussian-bump" or "explicit" (with `values`).
    pub kind: String,
    pub amplitude: f64,
    pub mu: f64,
    pub sigma: f64,
    pub values: Option<Vec<f64>>,
}

impl Default for InitialStateConfig {
    fn default() -> Self {
        InitialStateConfig {
            kind: "sine".into(),
            amplitude: 1.0,
            mu: 0.5,
            sigma: 0.1,
            values: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol_kkt: f64,
    pub max_iters: usize,
    pub outer_iters: usize,
    /// 0 selects the adaptive spectral step; positive values run the
    /// diminishing schedule `step0 / sqrt(t+1)`.
    pub step0: f64,
    pub tol_gap: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_kkt: 1e-6,
            max_iters: 50_000,
            outer_iters: 200,
            step0: 0.0,
            tol_gap: 1e-4,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
    /// Subset of "json", "csv", "bin".
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "out".into(),
            formats: vec!["json".into(), "csv".into()],
        }
    }
}

/// The full experiment configuration; defaults reproduce the desk instance.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub noise: NoiseConfig,
    pub control: ControlConfig,
    pub initial_state: InitialStateConfig,
    pub solver: SolverConfig,
    pub outputs: OutputConfig,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse(String),
    /// Every validation violation, field-labelled.
    Validation(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse(e) => write!(f, "cannot parse config: {e}"),
            ConfigError::Validation(errors) => {
                writeln!(f, "invalid configuration ({} problems):", errors.len())?;
                for e in errors {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    /// Validates every field; returns all errors, and the warnings that
    /// apply when the configuration is accepted.
    pub fn validate(&self) -> Result<Vec<String>, Vec<String>> {
        let mut errors = Vec::new();
        let mut warnings = Vec::new();

        if self.grid.n == 0 {
            errors.push("grid.n: node count must be at least 1".into());
        }
        if !(self.grid.length > 0.0) || !self.grid.length.is_finite() {
            errors.push(format!(
                "grid.length: must be positive and finite, got {}",
                self.grid.length
            ));
        }
        if !(self.time.horizon > 0.0) || !self.time.horizon.is_finite() {
            errors.push(format!(
                "time.horizon: must be positive and finite, got {}",
                self.time.horizon
            ));
        }
        if !self.time.deterministic && self.time.steps > stochact::tree::MAX_BRANCHING_STEPS {
            errors.push(format!(
                "time.steps: branching depth {} exceeds the supported maximum {}",
                self.time.steps,
                stochact::tree::MAX_BRANCHING_STEPS
            ));
        }
        if !matches!(self.time.scheme.as_str(), "exact-spectral" | "implicit-euler") {
            errors.push(format!(
                "time.scheme: unknown scheme '{}' (expected exact-spectral or implicit-euler)",
                self.time.scheme
            ));
        }
        if !(self.noise.a_max >= 0.0) {
            errors.push(format!(
                "noise.a_max: must be nonnegative, got {}",
                self.noise.a_max
            ));
        }
        let noise_active = match &self.noise.a {
            NoiseSpec::Constant(a) => {
                if !a.is_finite() || a.abs() > self.noise.a_max {
                    errors.push(format!(
                        "noise.a: |{a}| exceeds the bound a_max = {}",
                        self.noise.a_max
                    ));
                }
                *a != 0.0
            }
            NoiseSpec::PerStep(values) => {
                if values.len() != self.time.steps {
                    errors.push(format!(
                        "noise.a: per-step list has {} entries but time.steps = {}",
                        values.len(),
                        self.time.steps
                    ));
                }
                for (k, a) in values.iter().enumerate() {
                    if !a.is_finite() || a.abs() > self.noise.a_max {
                        errors.push(format!(
                            "noise.a[{k}]: |{a}| exceeds the bound a_max = {}",
                            self.noise.a_max
                        ));
                    }
                }
                values.iter().any(|&a| a != 0.0)
            }
        };
        if (self.time.steps == 0 || self.time.deterministic) && noise_active {
            warnings.push("deterministic mode ignores the noise coefficient a".into());
        }
        if !(self.control.epsilon > 0.0) || !self.control.epsilon.is_finite() {
            errors.push(format!(
                "control.epsilon: must be positive and finite, got {}",
                self.control.epsilon
            ));
        }
        if !(0.0 < self.control.alpha && self.control.alpha < 1.0) {
            errors.push(format!(
                "control.alpha: must lie in (0, 1), got {}",
                self.control.alpha
            ));
        }
        if let Some(m) = self.control.ball_radius {
            if !(m > 0.0) {
                errors.push(format!("control.ball_radius: must be positive, got {m}"));
            }
        }
        match self.control.beta_kind.as_str() {
            "alpha-uniform" => {}
            "indicator" => match &self.control.beta_cells {
                None => errors.push("control.beta_cells: required for beta_kind = indicator".into()),
                Some(cells) => {
                    for &c in cells {
                        if c >= self.grid.n {
                            errors.push(format!(
                                "control.beta_cells: cell {c} outside the grid (n = {})",
                                self.grid.n
                            ));
                        }
                    }
                }
            },
            "explicit" => match &self.control.beta_values {
                None => errors.push("control.beta_values: required for beta_kind = explicit".into()),
                Some(values) => {
                    if values.len() != self.grid.n {
                        errors.push(format!(
                            "control.beta_values: {} entries but grid.n = {}",
                            values.len(),
                            self.grid.n
                        ));
                    }
                    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        errors.push("control.beta_values: entries must lie in [0, 1]".into());
                    }
                }
            },
            other => errors.push(format!(
                "control.beta_kind: unknown kind '{other}' (expected alpha-uniform, indicator \
                 or explicit)"
            )),
        }
        if !matches!(
            self.control.tie_break.as_str(),
            "lowest-index" | "symmetric-pairing"
        ) {
            errors.push(format!(
                "control.tie_break: unknown rule '{}' (expected lowest-index or \
                 symmetric-pairing)",
                self.control.tie_break
            ));
        }
        match self.initial_state.kind.as_str() {
            "sine" | "gaussian-bump" => {
                if self.initial_state.kind == "gaussian-bump" && !(self.initial_state.sigma > 0.0)
                {
                    errors.push(format!(
                        "initial_state.sigma: must be positive, got {}",
                        self.initial_state.sigma
                    ));
                }
            }
            "explicit" => match &self.initial_state.values {
                None => {
                    errors.push("initial_state.values: required for kind = explicit".into())
                }
                Some(values) => {
                    if values.len() != self.grid.n {
                        errors.push(format!(
                            "initial_state.values: {} entries but grid.n = {}",
                            values.len(),
                            self.grid.n
                        ));
                    }
                }
            },
            other => errors.push(format!(
                "initial_state.kind: unknown kind '{other}' (expected sine, gaussian-bump or \
                 explicit)"
            )),
        }
        if !(self.solver.tol_kkt > 0.0) {
            errors.push(format!(
                "solver.tol_kkt: must be positive, got {}",
                self.solver.tol_kkt
            ));
        }
        if self.solver.max_iters == 0 {
            errors.push("solver.max_iters: must be at least 1".into());
        }
        if self.solver.outer_iters == 0 {
            errors.push("solver.outer_iters: must be at least 1".into());
        }
        if !(self.solver.step0 >= 0.0) {
            errors.push(format!(
                "solver.step0: must be nonnegative, got {}",
                self.solver.step0
            ));
        }
        if !(self.solver.tol_gap > 0.0) {
            errors.push(format!(
                "solver.tol_gap: must be positive, got {}",
                self.solver.tol_gap
            ));
        }
        if self.outputs.directory.is_empty() {
            errors.push("outputs.directory: must not be empty".into());
        }
        for f in &self.outputs.formats {
            if !matches!(f.as_str(), "json" | "csv" | "bin") {
                errors.push(format!(
                    "outputs.formats: unknown format '{f}' (expected json, csv or bin)"
                ));
            }
        }

        if errors.is_empty() {
            Ok(warnings)
        } else {
            Err(errors)
        }
    }

    pub fn build_grid(&self) -> stochact::Result<Grid> {
        Grid::new(self.grid.n, self.grid.length)
    }

    pub fn build_tree(&self) -> stochact::Result<TreeTopology> {
        if self.time.deterministic {
            TreeTopology::path(self.time.steps, self.time.horizon)
        } else {
            TreeTopology::binomial(self.time.steps, self.time.horizon)
        }
    }

    pub fn build_propagator(&self, grid: &Grid, tree: &TreeTopology) -> stochact::Result<Propagator> {
        let scheme = match self.time.scheme.as_str() {
            "implicit-euler" => Scheme::ImplicitEuler,
            _ => Scheme::ExactSpectral,
        };
        // a zero-step tree never applies the propagator; any positive dt works
        let dt = if tree.steps() == 0 { self.time.horizon } else { tree.dt() };
        Propagator::new(grid, dt, scheme)
    }

    pub fn build_noise(&self, tree: &TreeTopology) -> stochact::Result<NoiseCoefficient> {
        match &self.noise.a {
            NoiseSpec::Constant(a) => NoiseCoefficient::constant(*a, tree.steps(), self.noise.a_max),
            NoiseSpec::PerStep(values) => {
                NoiseCoefficient::new(values.clone(), self.noise.a_max)
            }
        }
    }

    pub fn build_initial_state(&self, grid: &Grid) -> Vec<f64> {
        let amp = self.initial_state.amplitude;
        match self.initial_state.kind.as_str() {
            "gaussian-bump" => {
                let mu = self.initial_state.mu * grid.length();
                let sigma = self.initial_state.sigma * grid.length();
                (0..grid.n())
                    .map(|i| {
                        let x = grid.position(i);
                        amp * (-((x - mu) / sigma).powi(2)).exp()
                    })
                    .collect()
            }
            "explicit" => self
                .initial_state
                .values
                .clone()
                .expect("validated"),
            _ => (0..grid.n())
                .map(|i| {
                    amp * (std::f64::consts::PI * grid.position(i) / grid.length()).sin()
                })
                .collect(),
        }
    }

    pub fn build_beta(&self, grid: &Grid) -> Vec<f64> {
        match self.control.beta_kind.as_str() {
            "indicator" => {
                let mut beta = vec![0.0; grid.n()];
                for &c in self.control.beta_cells.as_ref().expect("validated") {
                    beta[c] = 1.0;
                }
                beta
            }
            "explicit" => self.control.beta_values.clone().expect("validated"),
            _ => vec![self.control.alpha.sqrt(); grid.n()],
        }
    }

    pub fn tie_break(&self) -> TieBreak {
        match self.control.tie_break.as_str() {
            "symmetric-pairing" => TieBreak::SymmetricPairing,
            _ => TieBreak::LowestIndex,
        }
    }
}

/// Parses an override value: JSON literal first (numbers, booleans,
/// arrays), bare string otherwise.
fn parse_override_value(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

/// Applies one `path.to.key=value` override to a JSON configuration tree,
/// creating intermediate objects as needed.
pub fn apply_override(tree: &mut serde_json::Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        ConfigError::Parse(format!("override '{spec}' is not of the form key=value"))
    })?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::Parse(format!("override '{spec}' has an empty path segment")));
    }
    let mut node = tree;
    for seg in &segments[..segments.len() - 1] {
        if !node.is_object() {
            return Err(ConfigError::Parse(format!(
                "override '{spec}': '{seg}' is not a table"
            )));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(seg.to_string())
            .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
    }
    let last = segments[segments.len() - 1];
    match node.as_object_mut() {
        Some(map) => {
            map.insert(last.to_string(), parse_override_value(raw));
            Ok(())
        }
        None => Err(ConfigError::Parse(format!(
            "override '{spec}': parent of '{last}' is not a table"
        ))),
    }
}

/// Reads a TOML (default) or JSON (by extension) config file into a JSON
/// value tree without validating.
pub fn read_config_tree(path: &Path) -> Result<serde_json::Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    } else {
        let value: toml::Value =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        serde_json::to_value(value).map_err(|e| ConfigError::Parse(e.to_string()))
    }
}

/// Loads, overrides, deserializes and validates a configuration. Returns
/// the validated config together with its warnings.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<(ExperimentConfig, Vec<String>), ConfigError> {
    let mut tree = match path {
        Some(p) => read_config_tree(p)?,
        None => serde_json::Value::Object(serde_json::Map::new()),
    };
    for spec in overrides {
        apply_override(&mut tree, spec)?;
    }
    let config: ExperimentConfig =
        serde_json::from_value(tree).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let warnings = config.validate().map_err(ConfigError::Validation)?;
    Ok((config, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_fills_defaults() {
        let (config, warnings) = load_config(None, &[]).unwrap();
        assert_eq!(config.time.scheme, "exact-spectral");
        assert_eq!(config.solver.tol_kkt, 1e-6);
        assert_eq!(config.grid.n, 32);
        assert!(warnings.is_empty());
    }

    #[test]
    fn zero_epsilon_is_rejected_with_field_name() {
        let mut config = ExperimentConfig::default();
        config.control.epsilon = 0.0;
        let errors = config.validate().unwrap_err();
        assert!(errors.iter().any(|e| e.starts_with("control.epsilon")));
    }

    #[test]
    fn all_errors_are_collected() {
        let mut config = ExperimentConfig::default();
        config.control.epsilon = 0.0;
        config.control.alpha = 1.5;
        config.grid.n = 0;
        let errors = config.validate().unwrap_err();
        assert!(errors.len() >= 3, "expected every violation listed: {errors:?}");
    }

    #[test]
    fn deterministic_mode_with_noise_warns() {
        let mut config = ExperimentConfig::default();
        config.time.steps = 0;
        let warnings = config.validate().unwrap();
        assert!(warnings.iter().any(|w| w.contains("ignores the noise")));
    }

    #[test]
    fn overrides_create_and_replace_values() {
        let mut tree = serde_json::json!({"control": {"epsilon": 0.1}});
        apply_override(&mut tree, "control.epsilon=0.2").unwrap();
        apply_override(&mut tree, "grid.n=8").unwrap();
        apply_override(&mut tree, "initial_state.kind=gaussian-bump").unwrap();
        apply_override(&mut tree, "control.beta_cells=[0,1]").unwrap();
        let config: ExperimentConfig = serde_json::from_value(tree).unwrap();
        assert_eq!(config.control.epsilon, 0.2);
        assert_eq!(config.grid.n, 8);
        assert_eq!(config.initial_state.kind, "gaussian-bump");
        assert_eq!(config.control.beta_cells, Some(vec![0, 1]));
        assert!(apply_override(&mut serde_json::json!({}), "no-equals").is_err());
    }

    #[test]
    fn beta_construction_variants() {
        let grid = Grid::new(4, 1.0).unwrap();
        let mut config = ExperimentConfig::default();
        config.grid.n = 4;
        assert_eq!(config.build_beta(&grid), vec![0.5; 4]);
        config.control.beta_kind = "indicator".into();
        config.control.beta_cells = Some(vec![0, 2]);
        assert!(config.validate().is_ok());
        assert_eq!(config.build_beta(&grid), vec![1.0, 0.0, 1.0, 0.0]);
        config.control.beta_kind = "explicit".into();
        config.control.beta_values = Some(vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(config.build_beta(&grid), vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn per_step_noise_length_is_checked() {
        let mut config = ExperimentConfig::default();
        config.noise.a = NoiseSpec::PerStep(vec![1.0; 3]);
        let errors = config.validate().unwrap_err();
        assert!(errors.iter().any(|e| e.contains("per-step list")));
    }
}
