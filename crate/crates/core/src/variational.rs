//! Energies, the first variation of the bienergy and a descent flow.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{integrate_values, make_bump, BumpProfile, MapField, SectionField};
use crate::operators::{pointwise_inner, Scheme, Subelliptic};

/// `∫ h^φ(V, W) Ψ`.
pub fn l2_inner(engine: &Subelliptic, phi: &MapField, v: &SectionField, w: &SectionField) -> Result<f64> {
    let dens = engine.bundle_inner(phi, v, w)?;
    Ok(integrate_values(engine.grid(), &dens.values))
}

pub fn l2_norm(engine: &Subelliptic, phi: &MapField, v: &SectionField) -> Result<f64> {
    Ok(l2_inner(engine, phi, v, v)?.max(0.0).sqrt())
}

/// `E_{1,b}(φ) = ½ ∫ Σ_a h(φ_*X̃_a, φ_*X̃_a) Ψ`.
pub fn energy_e1b(engine: &Subelliptic, phi: &MapField) -> Result<f64> {
    let pb = engine.pullback(phi)?;
    let mut dens = vec![0.0; engine.grid().len()];
    for a in 0..engine.calculus().frame().len() {
        let push = pb.frame_pushforward(a);
        let d = pointwise_inner(engine.target(), &phi.components, push, push);
        dens.iter_mut().zip(&d).for_each(|(o, v)| *o += v);
    }
    Ok(0.5 * integrate_values(engine.grid(), &dens))
}

/// `E_{2,b}(φ) = ½ ∫ ‖τ_b(φ)‖² Ψ`.
pub fn energy_e2b(engine: &Subelliptic, phi: &MapField) -> Result<f64> {
    let tau = engine.tension_field_with(phi, Scheme::Nested)?;
    Ok(0.5 * l2_inner(engine, phi, &tau, &tau)?)
}

/// `∫ h^φ(V, BH_b(φ)) Ψ`.
pub fn first_variation_analytic(engine: &Subelliptic, phi: &MapField, v: &SectionField) -> Result<f64> {
    let bh = engine.bh_operator(phi)?;
    l2_inner(engine, phi, v, &bh)
}

fn shifted(phi: &MapField, v: &SectionField, t: f64) -> MapField {
    let components = phi
        .components
        .iter()
        .zip(&v.components)
        .map(|(p, d)| p.iter().zip(d).map(|(a, b)| a + t * b).collect())
        .collect();
    MapField { grid: phi.grid.clone(), components }
}

/// Central difference of `t ↦ E_{2,b}(φ + tV)` at `0`, with one Richardson step.
pub fn first_variation_fd(engine: &Subelliptic, phi: &MapField, v: &SectionField, step: f64) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("variation step must be positive, got {step}")));
    }
    if v.grid != phi.grid || v.nu() != phi.nu() {
        return Err(Error::Mismatch("variation field does not match the map".into()));
    }
    let central = |h: f64| -> Result<f64> {
        Ok((energy_e2b(engine, &shifted(phi, v, h))? - energy_e2b(engine, &shifted(phi, v, -h))?) / (2.0 * h))
    };
    let coarse = central(step)?;
    let fine = central(0.5 * step)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub step_size: f64,
    pub max_steps: usize,
    pub stop_tolerance: f64,
    pub variation_weight: BumpProfile,
    pub log_interval: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            step_size: 2e-3,
            max_steps: 2000,
            stop_tolerance: 1e-8,
            variation_weight: BumpProfile::default(),
            log_interval: 1,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!("flow.eta must be positive, got {}", self.step_size)));
        }
        if !(self.stop_tolerance > 0.0 && self.stop_tolerance.is_finite()) {
            return Err(Error::InvalidParameter(format!("flow.tol must be positive, got {}", self.stop_tolerance)));
        }
        if self.log_interval == 0 {
            return Err(Error::InvalidParameter("flow.log_interval must be at least 1".into()));
        }
        self.variation_weight.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowRecord {
    pub step: usize,
    pub e2b: f64,
    pub e1b: f64,
    pub tau_l2: f64,
    pub bh_l2: f64,
    pub max_chart_norm: f64,
    /// Step-size halvings since the previous record.
    pub backtracks: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowTrace {
    pub records: Vec<FlowRecord>,
}

impl FlowTrace {
    pub const CSV_HEADER: &'static str = "step,e2b,e1b,tau_l2,bh_l2,max_chart_norm,backtracks";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.step, r.e2b, r.e1b, r.tau_l2, r.bh_l2, r.max_chart_norm, r.backtracks
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// True when `e2b` never increases between consecutive records.
    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].e2b <= w[0].e2b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowStatus {
    Converged,
    MaxSteps,
    /// No step size in the backtracking range decreased the energy.
    Stalled,
    Aborted { step: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub map: MapField,
    pub trace: FlowTrace,
    pub status: FlowStatus,
    pub steps: usize,
}

const MAX_HALVINGS: usize = 30;

struct Snapshot {
    e2b: f64,
    tau_l2: f64,
    bh: SectionField,
    bh_l2: f64,
}

fn snapshot(engine: &Subelliptic, phi: &MapField) -> Result<Snapshot> {
    let tau = engine.tension_field(phi)?;
    let tau2 = l2_inner(engine, phi, &tau, &tau)?;
    let bh = engine.bh_operator(phi)?;
    let bh_l2 = l2_norm(engine, phi, &bh)?;
    Ok(Snapshot { e2b: 0.5 * tau2, tau_l2: tau2.max(0.0).sqrt(), bh, bh_l2 })
}

fn record(engine: &Subelliptic, phi: &MapField, snap: &Snapshot, step: usize, backtracks: usize) -> Result<FlowRecord> {
    Ok(FlowRecord {
        step,
        e2b: snap.e2b,
        e1b: energy_e1b(engine, phi)?,
        tau_l2: snap.tau_l2,
        bh_l2: snap.bh_l2,
        max_chart_norm: phi.max_chart_norm(),
        backtracks,
    })
}

fn finite(phi: &MapField) -> bool {
    phi.components.iter().flatten().all(|v| v.is_finite())
}

/// Gradient descent `φ ← φ − η·bump·BH_b(φ)` with step halving.
pub fn flow_run(engine: &Subelliptic, phi0: &MapField, config: &FlowConfig) -> Result<FlowOutcome> {
    config.validate()?;
    let bump = make_bump(engine.grid(), &config.variation_weight);
    let mut phi = phi0.clone();
    let mut snap = snapshot(engine, &phi)?;
    let mut trace = FlowTrace { records: vec![record(engine, &phi, &snap, 0, 0)?] };
    let mut eta = config.step_size;
    let mut step = 0;
    let mut pending = 0;
    let status = loop {
        if snap.bh_l2 < config.stop_tolerance {
            break FlowStatus::Converged;
        }
        if step >= config.max_steps {
            break FlowStatus::MaxSteps;
        }
        step += 1;
        let mut accepted = None;
        for halvings in 0..=MAX_HALVINGS {
            let components = phi
                .components
                .iter()
                .zip(&snap.bh.components)
                .map(|(p, g)| p.iter().zip(g).zip(&bump.values).map(|((a, b), w)| a - eta * w * b).collect())
                .collect();
            let candidate = MapField { grid: phi.grid.clone(), components };
            if !finite(&candidate) {
                eta *= 0.5;
                continue;
            }
            match snapshot(engine, &candidate) {
                Ok(next) if next.e2b <= snap.e2b => {
                    accepted = Some((candidate, next, halvings));
                    break;
                }
                Ok(_) | Err(Error::ChartOverflow { .. }) => eta *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((candidate, next, halvings)) = accepted else {
            break FlowStatus::Stalled;
        };
        phi = candidate;
        snap = next;
        pending += halvings;
        if halvings == 0 {
            eta = (eta * 1.25).min(config.step_size);
        }
        if !snap.e2b.is_finite() {
            break FlowStatus::Aborted { step, reason: "non-finite energy".into() };
        }
        if step % config.log_interval == 0 || snap.bh_l2 < config.stop_tolerance || step == config.max_steps {
            trace.records.push(record(engine, &phi, &snap, step, pending)?);
            pending = 0;
        }
    };
    Ok(FlowOutcome { map: phi, trace, status, steps: step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::target::TargetGeometry;

    fn flat(points: usize) -> Subelliptic {
        Subelliptic::new(GridSpec::uniform(1, points, 1.0).unwrap(), TargetGeometry::flat(1).unwrap(), 4).unwrap()
    }

    #[test]
    fn constant_map_has_zero_energies() {
        let e = flat(9);
        let phi = MapField::constant(e.grid(), &[0.7]);
        assert!(energy_e1b(&e, &phi).unwrap().abs() < 1e-25);
        assert!(energy_e2b(&e, &phi).unwrap().abs() < 1e-25);
    }

    #[test]
    fn e1b_is_quadratic_on_flat_target() {
        let e = flat(11);
        let bump = make_bump(e.grid(), &BumpProfile::default());
        let phi = MapField::new(e.grid().clone(), vec![bump.values.clone()]).unwrap();
        let twice = MapField::new(e.grid().clone(), vec![bump.values.iter().map(|v| 2.0 * v).collect()]).unwrap();
        let (a, b) = (energy_e1b(&e, &phi).unwrap(), energy_e1b(&e, &twice).unwrap());
        assert!(a > 0.0);
        assert!((b - 4.0 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn linear_coordinate_map_has_no_bienergy() {
        let e = flat(11);
        let phi = MapField::from_fn(e.grid(), 1, |p, _| p[0]);
        assert!(energy_e2b(&e, &phi).unwrap() < 1e-20);
    }

    #[test]
    fn fd_variation_matches_quadratic_functional() {
        let e = flat(13);
        let bump = make_bump(e.grid(), &BumpProfile::default());
        let phi = MapField::from_fn(e.grid(), 1, |p, _| (p[0] + 0.5 * p[2]).sin());
        let phi = MapField::new(e.grid().clone(), vec![phi.components[0].iter().zip(&bump.values).map(|(a, b)| a * b).collect()]).unwrap();
        let v = SectionField::from_fn(e.grid(), 1, |p, _| (p[1] - p[2]).cos());
        let v = SectionField::new(e.grid().clone(), vec![v.components[0].iter().zip(&bump.values).map(|(a, b)| a * b).collect()]).unwrap();
        // Independent route: ∫ Δ_bφ Δ_bV Ψ.
        let lap = |u: &[f64]| e.calculus().frame_laplacian(u, Scheme::Nested);
        let (lp, lv) = (lap(&phi.components[0]), lap(&v.components[0]));
        let dens: Vec<f64> = lp.iter().zip(&lv).map(|(a, b)| a * b).collect();
        let exact = integrate_values(e.grid(), &dens);
        let fd = first_variation_fd(&e, &phi, &v, 1e-2).unwrap();
        assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
    }

    #[test]
    fn constant_flow_converges_immediately() {
        let e = flat(9);
        let phi = MapField::constant(e.grid(), &[0.3]);
        let out = flow_run(&e, &phi, &FlowConfig::default()).unwrap();
        assert_eq!(out.status, FlowStatus::Converged);
        assert_eq!(out.trace.records.len(), 1);
    }

    #[test]
    fn csv_header_is_stable() {
        assert!(FlowTrace::default().to_csv().starts_with("step,e2b,e1b,tau_l2,bh_l2,max_chart_norm,backtracks\n"));
    }
}
