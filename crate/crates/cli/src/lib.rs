//! Command implementations behind the `subelliptic` binary.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use subelliptic::grid::{make_bump, read_hfield, write_hfield, GridSpec, MapField};
use subelliptic::operators::Subelliptic;
use subelliptic::oracle::{Suite, VerificationReport, CHECK_IDS};
use subelliptic::variational::{energy_e1b, energy_e2b, flow_run, l2_norm, FlowStatus, FlowTrace};

pub use config::{ConfigError, InitialMap, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad config, flags or input files.
    Usage(String),
    /// A computation could not complete.
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Compute(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Compute(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Compute(format!("{}: {e}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Formats a double with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".into()
    }
}

pub struct VerifyOutcome {
    pub report: VerificationReport,
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
}

/// Runs the selected checks (all when `checks` is empty) and writes
/// `report.json`, `report.txt` and the `report.timing.json` sidecar.
pub fn cmd_verify(cfg: &RunConfig, checks: &[String], out: &Path) -> Result<VerifyOutcome, CliError> {
    if let Some(bad) = checks.iter().find(|c| !CHECK_IDS.contains(&c.as_str())) {
        return Err(CliError::Usage(format!("unknown check id `{bad}`; known ids: {}", CHECK_IDS.join(", "))));
    }
    let names: Vec<&str> = if checks.is_empty() { CHECK_IDS.to_vec() } else { checks.iter().map(String::as_str).collect() };
    let suite = Suite::new(cfg.suite_config()).map_err(|e| CliError::Usage(e.to_string()))?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut report = VerificationReport::default();
    let mut timing = Vec::new();
    let clock = Instant::now();
    for name in names {
        let t = Instant::now();
        report.checks.extend(suite.run_selected(&[name]).checks);
        timing.push(format!("    {{\"name\": \"{name}\", \"wall_time_s\": {}}}", fmt_f64(t.elapsed().as_secs_f64())));
    }
    ensure_dir(out)?;
    let report_json = out.join("report.json");
    let report_txt = out.join("report.txt");
    let json = report.to_json().map_err(|e| CliError::Compute(e.to_string()))?;
    std::fs::write(&report_json, json + "\n").map_err(|e| io_err(&report_json, e))?;
    std::fs::write(&report_txt, report.to_text()).map_err(|e| io_err(&report_txt, e))?;
    let sidecar = format!(
        "{{\n  \"started_unix\": {started},\n  \"total_s\": {},\n  \"checks\": [\n{}\n  ]\n}}\n",
        fmt_f64(clock.elapsed().as_secs_f64()),
        timing.join(",\n")
    );
    let timing_path = out.join("report.timing.json");
    std::fs::write(&timing_path, sidecar).map_err(|e| io_err(&timing_path, e))?;
    Ok(VerifyOutcome { report, report_json, report_txt })
}

/// Builds the initial map named by `flow.initial`, or reads it from `map`.
pub fn initial_map(cfg: &RunConfig, map: Option<&Path>) -> Result<MapField, CliError> {
    let source = match map {
        Some(p) => InitialMap::File(p.to_path_buf()),
        None => cfg.flow_initial.clone(),
    };
    let grid = cfg.grid()?;
    let nu = cfg.nu;
    let amp = cfg.flow_amplitude;
    Ok(match source {
        InitialMap::Constant => MapField::constant(&grid, &vec![amp; nu]),
        InitialMap::Linear => MapField::from_fn(&grid, nu, |p, i| if i == 0 { p[0] } else { 0.0 }),
        InitialMap::Bump => {
            let w = make_bump(&grid, &cfg.bump);
            let t = grid.ndim() - 1;
            let pattern = MapField::from_fn(&grid, nu, |p, i| (p[0] + 0.5 * p[t] + i as f64).sin());
            let components = pattern
                .components
                .iter()
                .map(|c| c.iter().zip(&w.values).map(|(s, b)| 0.1 + amp * b * s).collect())
                .collect();
            MapField { grid, components }
        }
        InitialMap::File(path) => {
            let (grid, components) = read_hfield(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            if grid.cr_dim() != cfg.n || components.len() != nu {
                return Err(CliError::Usage(format!(
                    "{}: field has n={} nu={}, config has n={} nu={}",
                    path.display(),
                    grid.cr_dim(),
                    components.len(),
                    cfg.n,
                    nu
                )));
            }
            MapField::new(grid, components).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
    })
}

fn engine_for(cfg: &RunConfig, grid: &GridSpec) -> Result<Subelliptic, CliError> {
    Subelliptic::with_mutation(grid.clone(), cfg.target_geometry(), cfg.stencil_order, cfg.mutation).map_err(|e| CliError::Usage(e.to_string()))
}

pub struct FlowSummary {
    pub status: FlowStatus,
    pub steps: usize,
    pub trace: FlowTrace,
    pub trace_path: PathBuf,
    pub map_path: PathBuf,
}

impl FlowSummary {
    pub fn exit_code(&self) -> u8 {
        match self.status {
            FlowStatus::Converged | FlowStatus::MaxSteps => EXIT_OK,
            FlowStatus::Stalled | FlowStatus::Aborted { .. } => EXIT_FAILURE,
        }
    }
}

/// Runs the descent flow and writes `trace.csv` and `final.hfield`.
pub fn cmd_flow(cfg: &RunConfig, out: &Path) -> Result<FlowSummary, CliError> {
    let phi0 = initial_map(cfg, None)?;
    let engine = engine_for(cfg, &phi0.grid)?;
    let outcome = flow_run(&engine, &phi0, &cfg.flow_config()).map_err(|e| CliError::Compute(e.to_string()))?;
    ensure_dir(out)?;
    let trace_path = out.join("trace.csv");
    let map_path = out.join("final.hfield");
    outcome.trace.write_csv(&trace_path).map_err(|e| io_err(&trace_path, e))?;
    write_hfield(&map_path, &outcome.map.grid, &outcome.map.components).map_err(|e| io_err(&map_path, e))?;
    Ok(FlowSummary { status: outcome.status, steps: outcome.steps, trace: outcome.trace, trace_path, map_path })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub e1b: f64,
    pub e2b: f64,
    pub tau_l2: f64,
    pub bh_l2: f64,
}

impl Energies {
    pub fn to_json(&self) -> String {
        let mut s = String::from("{");
        let _ = write!(
            s,
            "\"e1b\": {}, \"e2b\": {}, \"tau_l2\": {}, \"bh_l2\": {}",
            fmt_f64(self.e1b),
            fmt_f64(self.e2b),
            fmt_f64(self.tau_l2),
            fmt_f64(self.bh_l2)
        );
        s.push('}');
        s
    }
}

/// Evaluates both energies and the two residual norms of a map.
pub fn cmd_energy(cfg: &RunConfig, map: Option<&Path>) -> Result<Energies, CliError> {
    let phi = initial_map(cfg, map)?;
    let engine = engine_for(cfg, &phi.grid)?;
    let compute = || -> subelliptic::Result<Energies> {
        let tau = engine.tension_field(&phi)?;
        let bh = engine.bh_operator(&phi)?;
        Ok(Energies {
            e1b: energy_e1b(&engine, &phi)?,
            e2b: energy_e2b(&engine, &phi)?,
            tau_l2: l2_norm(&engine, &phi, &tau)?,
            bh_l2: l2_norm(&engine, &phi, &bh)?,
        })
    };
    compute().map_err(|e| CliError::Compute(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> RunConfig {
        RunConfig::parse("target = flat\ngrid.dims = 9").unwrap()
    }

    #[test]
    fn constant_map_has_vanishing_energies() {
        let cfg = RunConfig::parse("target = flat\ngrid.dims = 9\nflow.initial = constant").unwrap();
        let e = cmd_energy(&cfg, None).unwrap();
        for v in [e.e1b, e.e2b, e.tau_l2, e.bh_l2] {
            assert!(v.abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn linear_map_is_harmonic_but_not_constant() {
        let mut cfg = flat();
        cfg.flow_initial = InitialMap::Linear;
        let e = cmd_energy(&cfg, None).unwrap();
        assert!(e.e2b < 1e-20);
        assert!(e.e1b > 0.1);
    }

    #[test]
    fn energy_json_has_four_keys() {
        let e = Energies { e1b: 1.0, e2b: 0.5, tau_l2: 1.0 / 3.0, bh_l2: 0.0 };
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        let obj = v.as_object().unwrap();
        assert_eq!(obj.len(), 4);
        assert_eq!(obj["tau_l2"].as_f64().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn unknown_check_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_verify(&flat(), &["no_such_check".into()], dir.path()).err().unwrap();
        assert_eq!(err.exit_code(), EXIT_USAGE);
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::NAN), "null");
    }
}
