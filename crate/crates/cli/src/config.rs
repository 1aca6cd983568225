//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use subelliptic::grid::{BumpProfile, GridSpec};
use subelliptic::operators::Mutation;
use subelliptic::oracle::SuiteConfig;
use subelliptic::target::{TargetGeometry, TargetKind, DEFAULT_CHART_BOUND};
use subelliptic::variational::FlowConfig;

pub const KNOWN_KEYS: [&str; 23] = [
    "n",
    "nu",
    "target",
    "grid.dims",
    "grid.extent",
    "stencil.order",
    "bump.inner",
    "bump.outer",
    "bump.smoothness",
    "flow.eta",
    "flow.max_steps",
    "flow.tol",
    "flow.log_interval",
    "flow.initial",
    "flow.amplitude",
    "seed",
    "out",
    "verify.levels",
    "verify.interior",
    "verify.fiber_points",
    "verify.variation_points",
    "verify.mutation",
    "chart_bound",
];

/// A configuration problem, optionally tied to the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn keyed(key: &str, message: impl Into<String>) -> Self {
        Self { key: Some(key.to_string()), message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        Self { key: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(k) => write!(f, "config key `{k}`: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Initial map for `flow` and `energy`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialMap {
    /// Every component equals the amplitude.
    Constant,
    /// A constant offset plus an amplitude-scaled trigonometric pattern under the bump.
    Bump,
    /// First component equals the first coordinate, the rest vanish.
    Linear,
    File(PathBuf),
}

impl FromStr for InitialMap {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "constant" => InitialMap::Constant,
            "bump" => InitialMap::Bump,
            "linear" => InitialMap::Linear,
            "" => return Err("empty initial map".into()),
            path => InitialMap::File(PathBuf::from(path)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub nu: usize,
    pub target: TargetKind,
    /// Points per axis; a single entry applies to every axis.
    pub grid_dims: Vec<usize>,
    pub grid_extent: Vec<f64>,
    pub stencil_order: usize,
    pub bump: BumpProfile,
    pub flow_eta: f64,
    pub flow_max_steps: usize,
    pub flow_tol: f64,
    pub flow_log_interval: usize,
    pub flow_initial: InitialMap,
    pub flow_amplitude: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub verify_levels: Vec<usize>,
    pub verify_interior: f64,
    pub fiber_points: usize,
    pub variation_points: usize,
    pub mutation: Option<Mutation>,
    pub chart_bound: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let suite = SuiteConfig::default();
        let flow = FlowConfig::default();
        Self {
            n: suite.n,
            nu: suite.nu,
            target: suite.target,
            grid_dims: vec![11],
            grid_extent: vec![suite.extent],
            stencil_order: suite.stencil_order,
            bump: suite.bump,
            flow_eta: flow.step_size,
            flow_max_steps: flow.max_steps,
            flow_tol: flow.stop_tolerance,
            flow_log_interval: flow.log_interval,
            flow_initial: InitialMap::Bump,
            flow_amplitude: 0.5,
            seed: suite.seed,
            out: PathBuf::from("out"),
            verify_levels: suite.levels,
            verify_interior: suite.interior,
            fiber_points: suite.fiber_points,
            variation_points: suite.variation_points,
            mutation: None,
            chart_bound: DEFAULT_CHART_BOUND,
        }
    }
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::keyed(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    let items: Result<Vec<T>, _> = value.split(',').map(|s| parse_scalar(key, s.trim())).collect();
    let items = items?;
    if items.is_empty() {
        return Err(ConfigError::keyed(key, "empty list"));
    }
    Ok(items)
}

fn broadcast<T: Copy>(key: &str, values: &[T], len: usize) -> Result<Vec<T>, ConfigError> {
    match values.len() {
        1 => Ok(vec![values[0]; len]),
        l if l == len => Ok(values.to_vec()),
        l => Err(ConfigError::keyed(key, format!("expected 1 or {len} entries, got {l}"))),
    }
}

/// Maps an engine validation message back to the key it names, when it names one.
fn attribute(message: String) -> ConfigError {
    let key = KNOWN_KEYS.iter().filter(|k| k.contains('.')).find(|k| message.contains(**k)).map(|k| k.to_string());
    ConfigError { key, message }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::general(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(ConfigError::keyed(key, "unknown key"));
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::keyed(key, "given more than once"));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::general(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "n" => self.n = parse_scalar(key, value)?,
            "nu" => self.nu = parse_scalar(key, value)?,
            "target" => self.target = value.parse().map_err(|e: subelliptic::Error| ConfigError::keyed(key, e.to_string()))?,
            "grid.dims" => self.grid_dims = parse_list(key, value)?,
            "grid.extent" => self.grid_extent = parse_list(key, value)?,
            "stencil.order" => self.stencil_order = parse_scalar(key, value)?,
            "bump.inner" => self.bump.inner = parse_scalar(key, value)?,
            "bump.outer" => self.bump.outer = parse_scalar(key, value)?,
            "bump.smoothness" => self.bump.smoothness = parse_scalar(key, value)?,
            "flow.eta" => self.flow_eta = parse_scalar(key, value)?,
            "flow.max_steps" => self.flow_max_steps = parse_scalar(key, value)?,
            "flow.tol" => self.flow_tol = parse_scalar(key, value)?,
            "flow.log_interval" => self.flow_log_interval = parse_scalar(key, value)?,
            "flow.initial" => self.flow_initial = value.parse().map_err(|e: String| ConfigError::keyed(key, e))?,
            "flow.amplitude" => self.flow_amplitude = parse_scalar(key, value)?,
            "seed" => self.seed = parse_scalar(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "verify.levels" => self.verify_levels = parse_list(key, value)?,
            "verify.interior" => self.verify_interior = parse_scalar(key, value)?,
            "verify.fiber_points" => self.fiber_points = parse_scalar(key, value)?,
            "verify.variation_points" => self.variation_points = parse_scalar(key, value)?,
            "verify.mutation" => {
                self.mutation = match value {
                    "none" => None,
                    m => Some(m.parse().map_err(|e: subelliptic::Error| ConfigError::keyed(key, e.to_string()))?),
                }
            }
            "chart_bound" => self.chart_bound = parse_scalar(key, value)?,
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    /// Re-runs every engine-level validation the settings feed into.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::keyed("n", "CR dimension must be at least 1"));
        }
        if self.nu == 0 {
            return Err(ConfigError::keyed("nu", "target dimension must be at least 1"));
        }
        self.grid()?;
        TargetGeometry::new(self.target, self.nu)
            .and_then(|t| t.with_chart_bound(self.chart_bound))
            .map_err(|e| ConfigError::keyed("chart_bound", e.to_string()))?;
        if !self.flow_amplitude.is_finite() {
            return Err(ConfigError::keyed("flow.amplitude", "must be finite"));
        }
        self.bump.validate().map_err(|e| ConfigError::keyed("bump.inner", e.to_string()))?;
        self.flow_config().validate().map_err(|e| attribute(e.to_string()))?;
        self.suite_config().validate().map_err(|e| attribute(e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        let m = 2 * self.n + 1;
        let dims = broadcast("grid.dims", &self.grid_dims, m)?;
        let extent = broadcast("grid.extent", &self.grid_extent, m)?;
        GridSpec::new(self.n, dims, extent).map_err(|e| ConfigError::keyed("grid.dims", e.to_string()))
    }

    pub fn target_geometry(&self) -> TargetGeometry {
        TargetGeometry::new(self.target, self.nu)
            .and_then(|t| t.with_chart_bound(self.chart_bound))
            .expect("validated on load")
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            step_size: self.flow_eta,
            max_steps: self.flow_max_steps,
            stop_tolerance: self.flow_tol,
            variation_weight: self.bump,
            log_interval: self.flow_log_interval,
        }
    }

    /// The oracle suite settings; the suite box is a cube of the largest configured half-width.
    pub fn suite_config(&self) -> SuiteConfig {
        SuiteConfig {
            n: self.n,
            nu: self.nu,
            target: self.target,
            extent: self.grid_extent.iter().copied().fold(f64::NAN, f64::max),
            levels: self.verify_levels.clone(),
            fiber_points: self.fiber_points,
            stencil_order: self.stencil_order,
            bump: self.bump,
            interior: self.verify_interior,
            seed: self.seed,
            mutation: self.mutation,
            chart_bound: self.chart_bound,
            variation_points: self.variation_points,
            ..SuiteConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn dotted_keys_and_comments() {
        let cfg = RunConfig::parse("# demo\nflow.eta = 0.01  # step\ngrid.dims = 9, 9, 13\ntarget = flat\nverify.mutation = fiber_weight\n").unwrap();
        assert_eq!(cfg.flow_eta, 0.01);
        assert_eq!(cfg.grid().unwrap().dims(), &[9, 9, 13]);
        assert_eq!(cfg.target, TargetKind::Flat);
        assert_eq!(cfg.mutation, Some(Mutation::FiberWeight));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("flow.etaa = 1").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("flow.etaa"));
        assert!(err.to_string().contains("flow.etaa"));
    }

    #[test]
    fn bad_values_name_their_key() {
        assert_eq!(RunConfig::parse("seed = minus one").unwrap_err().key.as_deref(), Some("seed"));
        assert_eq!(RunConfig::parse("flow.eta = -1").unwrap_err().key.as_deref(), Some("flow.eta"));
        assert_eq!(RunConfig::parse("grid.dims = 10").unwrap_err().key.as_deref(), Some("grid.dims"));
        assert_eq!(RunConfig::parse("n = 1\nn = 2").unwrap_err().key.as_deref(), Some("n"));
        assert!(RunConfig::parse("just words").unwrap_err().key.is_none());
    }

    #[test]
    fn initial_map_presets() {
        assert_eq!("linear".parse::<InitialMap>().unwrap(), InitialMap::Linear);
        assert_eq!("maps/a.hfield".parse::<InitialMap>().unwrap(), InitialMap::File("maps/a.hfield".into()));
    }
}
