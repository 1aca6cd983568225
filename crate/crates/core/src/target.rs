//! Riemannian targets in a single chart: flat `R^ν` and the unit sphere
//! `S^ν` in stereographic coordinates, `h = e^{2w} δ` with
//! `e^w = 2 / (1 + |y|²)`.
//!
//! Index layouts: Christoffels `Γ^i_{jk}` at `[i][j][k]`, their derivatives
//! `∂_l Γ^i_{jk}` at `[l][i][j][k]`, curvature `R^m_{lkj}` at `[m][l][k][j]`,
//! all flattened row-major.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_CHART_BOUND: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Flat,
    RoundSphere,
}

impl std::str::FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(TargetKind::Flat),
            "sphere" | "round_sphere" => Ok(TargetKind::RoundSphere),
            other => Err(Error::InvalidParameter(format!("unknown target `{other}` (expected flat or sphere)"))),
        }
    }
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetKind::Flat => write!(f, "flat"),
            TargetKind::RoundSphere => write!(f, "sphere"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetGeometry {
    nu: usize,
    kind: TargetKind,
    chart_bound: f64,
}

impl TargetGeometry {
    pub fn new(kind: TargetKind, nu: usize) -> Result<Self> {
        if nu == 0 {
            return Err(Error::InvalidDimension("target dimension must be at least 1".into()));
        }
        Ok(Self { nu, kind, chart_bound: DEFAULT_CHART_BOUND })
    }

    pub fn flat(nu: usize) -> Result<Self> {
        Self::new(TargetKind::Flat, nu)
    }

    pub fn round_sphere(nu: usize) -> Result<Self> {
        Self::new(TargetKind::RoundSphere, nu)
    }

    pub fn with_chart_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidParameter(format!("chart bound {bound}")));
        }
        self.chart_bound = bound;
        Ok(self)
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn chart_bound(&self) -> f64 {
        self.chart_bound
    }

    pub fn is_flat(&self) -> bool {
        self.kind == TargetKind::Flat
    }

    /// Rejects points outside the admissible chart.
    pub fn check_point(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.nu {
            return Err(Error::InvalidDimension(format!("chart point has {} coordinates, expected {}", y.len(), self.nu)));
        }
        if y.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("chart point".into()));
        }
        if self.kind == TargetKind::RoundSphere {
            let norm = y.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm >= self.chart_bound {
                return Err(Error::ChartOverflow { norm, bound: self.chart_bound });
            }
        }
        Ok(())
    }

    /// Conformal factor `e^{2w}` and gradient `∂_k w`.
    fn conformal(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let r2: f64 = y.iter().map(|c| c * c).sum();
        let q = 1.0 + r2;
        (4.0 / (q * q), y.iter().map(|c| -2.0 * c / q).collect())
    }

    pub fn metric_into(&self, y: &[f64], out: &mut [f64]) {
        let nu = self.nu;
        out.iter_mut().for_each(|v| *v = 0.0);
        let f = match self.kind {
            TargetKind::Flat => 1.0,
            TargetKind::RoundSphere => self.conformal(y).0,
        };
        for i in 0..nu {
            out[i * nu + i] = f;
        }
    }

    pub fn metric(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(y)?;
        let mut buf = vec![0.0; self.nu * self.nu];
        self.metric_into(y, &mut buf);
        Ok(DMatrix::from_row_slice(self.nu, self.nu, &buf))
    }

    pub fn christoffel_into(&self, y: &[f64], out: &mut [f64]) {
        let nu = self.nu;
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.kind == TargetKind::Flat {
            return;
        }
        let (_, dw) = self.conformal(y);
        for i in 0..nu {
            for j in 0..nu {
                for k in 0..nu {
                    let mut g = 0.0;
                    if i == j {
                        g += dw[k];
                    }
                    if i == k {
                        g += dw[j];
                    }
                    if j == k {
                        g -= dw[i];
                    }
                    out[(i * nu + j) * nu + k] = g;
                }
            }
        }
    }

    pub fn christoffel(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        let mut buf = vec![0.0; self.nu.pow(3)];
        self.christoffel_into(y, &mut buf);
        Ok(buf)
    }

    pub fn christoffel_derivative_into(&self, y: &[f64], out: &mut [f64]) {
        let nu = self.nu;
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.kind == TargetKind::Flat {
            return;
        }
        let r2: f64 = y.iter().map(|c| c * c).sum();
        let q = 1.0 + r2;
        let hess = |a: usize, b: usize| -> f64 {
            let d = if a == b { -2.0 / q } else { 0.0 };
            d + 4.0 * y[a] * y[b] / (q * q)
        };
        for l in 0..nu {
            for i in 0..nu {
                for j in 0..nu {
                    for k in 0..nu {
                        let mut g = 0.0;
                        if i == j {
                            g += hess(k, l);
                        }
                        if i == k {
                            g += hess(j, l);
                        }
                        if j == k {
                            g -= hess(i, l);
                        }
                        out[((l * nu + i) * nu + j) * nu + k] = g;
                    }
                }
            }
        }
    }

    pub fn christoffel_derivative(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        let mut buf = vec![0.0; self.nu.pow(4)];
        self.christoffel_derivative_into(y, &mut buf);
        Ok(buf)
    }

    /// `R^m_{lkj} = ∂_lΓ^m_{kj} − ∂_kΓ^m_{lj} + Γ^i_{kj}Γ^m_{li} − Γ^i_{lj}Γ^m_{ki}`.
    pub fn riemann_into(&self, y: &[f64], out: &mut [f64]) {
        let nu = self.nu;
        let mut gam = vec![0.0; nu.pow(3)];
        let mut dgam = vec![0.0; nu.pow(4)];
        self.christoffel_into(y, &mut gam);
        self.christoffel_derivative_into(y, &mut dgam);
        riemann_from_parts(nu, &gam, &dgam, out);
    }

    pub fn riemann(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        let mut buf = vec![0.0; self.nu.pow(4)];
        self.riemann_into(y, &mut buf);
        Ok(buf)
    }

    /// `R^h(u, v) w = u^l v^k w^j R^m_{lkj} ∂_m`.
    pub fn curvature(&self, y: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let r = self.riemann(y)?;
        Ok(apply_riemann(self.nu, &r, u, v, w))
    }
}

/// Assembles `R^m_{lkj}` from `Γ` and `∂Γ` in the layouts of this module.
pub fn riemann_from_parts(nu: usize, gam: &[f64], dgam: &[f64], out: &mut [f64]) {
    let g = |i: usize, j: usize, k: usize| gam[(i * nu + j) * nu + k];
    let dg = |l: usize, i: usize, j: usize, k: usize| dgam[((l * nu + i) * nu + j) * nu + k];
    for m in 0..nu {
        for l in 0..nu {
            for k in 0..nu {
                for j in 0..nu {
                    let mut r = dg(l, m, k, j) - dg(k, m, l, j);
                    for i in 0..nu {
                        r += g(i, k, j) * g(m, l, i) - g(i, l, j) * g(m, k, i);
                    }
                    out[((m * nu + l) * nu + k) * nu + j] = r;
                }
            }
        }
    }
}

pub fn apply_riemann(nu: usize, r: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; nu];
    for (m, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for l in 0..nu {
            for k in 0..nu {
                for j in 0..nu {
                    acc += u[l] * v[k] * w[j] * r[((m * nu + l) * nu + k) * nu + j];
                }
            }
        }
        *o = acc;
    }
    out
}

/// Finite-difference oracles for the analytic formulas above.
pub mod fd {
    use super::*;

    /// `Γ^i_{jk} = ½ h^{il}(∂_j h_{lk} + ∂_k h_{lj} − ∂_l h_{jk})` with centred
    /// differences of the metric at step `step`.
    pub fn christoffel_fd(target: &TargetGeometry, y: &[f64], step: f64) -> Vec<f64> {
        let nu = target.nu();
        let mut dh = vec![0.0; nu * nu * nu];
        let mut hp = vec![0.0; nu * nu];
        let mut hm = vec![0.0; nu * nu];
        for a in 0..nu {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[a] += step;
            ym[a] -= step;
            target.metric_into(&yp, &mut hp);
            target.metric_into(&ym, &mut hm);
            for e in 0..nu * nu {
                dh[a * nu * nu + e] = (hp[e] - hm[e]) / (2.0 * step);
            }
        }
        let mut h = vec![0.0; nu * nu];
        target.metric_into(y, &mut h);
        let hinv = DMatrix::from_row_slice(nu, nu, &h).try_inverse().expect("metric is invertible");
        let d = |a: usize, b: usize, c: usize| dh[a * nu * nu + b * nu + c];
        let mut out = vec![0.0; nu.pow(3)];
        for i in 0..nu {
            for j in 0..nu {
                for k in 0..nu {
                    out[(i * nu + j) * nu + k] =
                        0.5 * (0..nu).map(|l| hinv[(i, l)] * (d(j, l, k) + d(k, l, j) - d(l, j, k))).sum::<f64>();
                }
            }
        }
        out
    }

    /// Curvature from centred differences of the analytic Christoffels.
    pub fn curvature_fd(target: &TargetGeometry, y: &[f64], u: &[f64], v: &[f64], w: &[f64], step: f64) -> Vec<f64> {
        let nu = target.nu();
        let mut dgam = vec![0.0; nu.pow(4)];
        let mut gp = vec![0.0; nu.pow(3)];
        let mut gm = vec![0.0; nu.pow(3)];
        for l in 0..nu {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[l] += step;
            ym[l] -= step;
            target.christoffel_into(&yp, &mut gp);
            target.christoffel_into(&ym, &mut gm);
            for e in 0..nu.pow(3) {
                dgam[l * nu.pow(3) + e] = (gp[e] - gm[e]) / (2.0 * step);
            }
        }
        let mut gam = vec![0.0; nu.pow(3)];
        target.christoffel_into(y, &mut gam);
        let mut r = vec![0.0; nu.pow(4)];
        riemann_from_parts(nu, &gam, &dgam, &mut r);
        apply_riemann(nu, &r, u, v, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let s = TargetGeometry::round_sphere(2).unwrap();
        let h = s.metric(&[0.0, 0.0]).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 4.0]));
        let f = TargetGeometry::flat(3).unwrap();
        assert_eq!(f.metric(&[5.0, 1.0, 2.0]).unwrap(), DMatrix::identity(3, 3));
        assert!(matches!(s.metric(&[2e3, 0.0]), Err(Error::ChartOverflow { .. })));
    }

    #[test]
    fn christoffel_vanishes_at_chart_origin() {
        let s = TargetGeometry::round_sphere(3).unwrap();
        assert!(s.christoffel(&[0.0; 3]).unwrap().iter().all(|g| *g == 0.0));
        let oracle = fd::christoffel_fd(&s, &[0.0; 3], 1e-4);
        assert!(oracle.iter().all(|g| g.abs() < 1e-8));
    }

    #[test]
    fn sphere_curvature_matches_constant_curvature_form() {
        let s = TargetGeometry::round_sphere(3).unwrap();
        let y = [0.3, -0.4, 0.2];
        let (u, v, w) = ([1.0, 0.2, -0.5], [0.1, -0.7, 0.4], [0.6, 0.3, 0.9]);
        let r = s.curvature(&y, &u, &v, &w).unwrap();
        let h = s.metric(&y).unwrap();
        let ip = |a: &[f64], b: &[f64]| -> f64 { (0..3).map(|i| h[(i, i)] * a[i] * b[i]).sum() };
        for m in 0..3 {
            let expect = ip(&v, &w) * u[m] - ip(&u, &w) * v[m];
            assert!((r[m] - expect).abs() < 1e-12, "component {m}: {} vs {expect}", r[m]);
        }
    }

    #[test]
    fn flat_is_flat() {
        let f = TargetGeometry::flat(2).unwrap();
        let r = f.curvature(&[1.0, 2.0], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
        assert!(fd::curvature_fd(&f, &[1.0, 2.0], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], 1e-4)
            .iter()
            .all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn parse_kind() {
        assert_eq!("flat".parse::<TargetKind>().unwrap(), TargetKind::Flat);
        assert_eq!("sphere".parse::<TargetKind>().unwrap(), TargetKind::RoundSphere);
        assert!("torus".parse::<TargetKind>().is_err());
    }
}
