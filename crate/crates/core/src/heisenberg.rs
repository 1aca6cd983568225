//! The Heisenberg group `H_n` as a strictly pseudoconvex CR manifold.
//!
//! Coordinates are ordered `(x¹..xⁿ, y¹..yⁿ, t)`. The contact form is
//! `θ = dt + 2 Σ (x^α dy^α − y^α dx^α)`, so `dθ = 4 Σ dx^α ∧ dy^α` and the
//! Reeb field is `∂_t`. The left-invariant fields
//! `X_α = ∂_{x^α} + 2y^α ∂_t`, `X_{n+α} = ∂_{y^α} − 2x^α ∂_t` span the Levi
//! distribution and satisfy `G_θ(X_a, X_a) = 4`; the working frame is
//! `X̃_a = s·X_a` with `s = 1/2`, which is `G_θ`-orthonormal.
//!
//! The Tanaka-Webster connection of this model is flat (`∇X̃_a = 0`,
//! `∇T = 0`) with vanishing pseudohermitian torsion.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

/// Frame scale making `{s·X_a}` orthonormal for the Levi form.
pub const ORTHONORMAL_FRAME_SCALE: f64 = 0.5;

const HORIZONTAL_TOL: f64 = 1e-10;

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeisenbergModel {
    n: usize,
    frame_scale: f64,
}

/// `∂_A = λ_A^B T_B` with frame order `(T, T_1..T_n, T_1̄..T_n̄)`, and `μ = λ⁻¹`.
#[derive(Debug, Clone)]
pub struct FrameDecomposition {
    pub lambda: DMatrix<C64>,
    pub mu: DMatrix<C64>,
}

impl HeisenbergModel {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_frame_scale(n, ORTHONORMAL_FRAME_SCALE)
    }

    /// Model whose working frame is `s·X_a`. Only `s = 1/2` gives an
    /// orthonormal frame; other values exist for mutation testing.
    pub fn with_frame_scale(n: usize, frame_scale: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("CR dimension must be at least 1".into()));
        }
        if !(frame_scale > 0.0 && frame_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("frame scale {frame_scale}")));
        }
        Ok(Self { n, frame_scale })
    }

    pub fn cr_dim(&self) -> usize {
        self.n
    }

    /// Real dimension `2n + 1`.
    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn frame_scale(&self) -> f64 {
        self.frame_scale
    }

    pub fn t_axis(&self) -> usize {
        2 * self.n
    }

    fn check_frame_index(&self, a: usize) -> Result<()> {
        if a >= 2 * self.n {
            return Err(Error::IndexOutOfRange { index: a, bound: 2 * self.n });
        }
        Ok(())
    }

    /// Non-zero coordinate components of `X̃_a` at `p` as `(axis, value)` pairs.
    pub fn frame_terms(&self, a: usize, p: &[f64]) -> [(usize, f64); 2] {
        let n = self.n;
        let s = self.frame_scale;
        if a < n {
            [(a, s), (2 * n, 2.0 * s * p[n + a])]
        } else {
            let alpha = a - n;
            [(a, s), (2 * n, -2.0 * s * p[alpha])]
        }
    }

    /// Coordinate components of `X̃_a` at `p` (0-based `a < 2n`).
    pub fn frame_vector(&self, a: usize, p: &[f64]) -> Result<Vec<f64>> {
        self.check_frame_index(a)?;
        self.check_point(p)?;
        let mut v = vec![0.0; self.dim()];
        for (axis, c) in self.frame_terms(a, p) {
            v[axis] += c;
        }
        Ok(v)
    }

    fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::InvalidDimension(format!("point has {} coordinates, expected {}", p.len(), self.dim())));
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinate".into()));
        }
        Ok(())
    }

    pub fn reeb(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        v[self.t_axis()] = 1.0;
        v
    }

    /// Components of `θ` in the coordinate coframe at `p`.
    pub fn contact_form(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut th = vec![0.0; self.dim()];
        for a in 0..n {
            th[a] = -2.0 * p[n + a];
            th[n + a] = 2.0 * p[a];
        }
        th[2 * n] = 1.0;
        th
    }

    pub fn theta(&self, p: &[f64], v: &[f64]) -> f64 {
        self.contact_form(p).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// `dθ(u, v)` with `dθ = 4 Σ dx^α ∧ dy^α`.
    pub fn dtheta(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.n;
        4.0 * (0..n).map(|a| u[a] * v[n + a] - u[n + a] * v[a]).sum::<f64>()
    }

    fn check_horizontal(&self, p: &[f64], v: &[f64]) -> Result<()> {
        let th = self.theta(p, v);
        let scale = 1.0 + v.iter().map(|c| c.abs()).fold(0.0, f64::max) * (1.0 + p.iter().map(|c| c.abs()).fold(0.0, f64::max));
        if th.abs() > HORIZONTAL_TOL * scale {
            return Err(Error::NonHorizontal { value: th });
        }
        Ok(())
    }

    /// `J` on horizontal vectors: `J X̃_α = X̃_{n+α}`, `J X̃_{n+α} = −X̃_α`.
    pub fn complex_structure(&self, p: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_point(p)?;
        self.check_horizontal(p, u)?;
        Ok(self.apply_j(p, u))
    }

    fn apply_j(&self, p: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let s = self.frame_scale;
        // A horizontal vector is determined by its x/y components.
        let mut out = vec![0.0; self.dim()];
        for a in 0..n {
            let cx = u[a] / s;
            let cy = u[n + a] / s;
            // cx X̃_α + cy X̃_{n+α}  ↦  cx X̃_{n+α} − cy X̃_α
            for (axis, c) in self.frame_terms(n + a, p) {
                out[axis] += cx * c;
            }
            for (axis, c) in self.frame_terms(a, p) {
                out[axis] -= cy * c;
            }
        }
        out
    }

    /// Levi form `G_θ(u, v) = dθ(u, Jv)` on horizontal vectors.
    pub fn levi_form(&self, p: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_point(p)?;
        self.check_horizontal(p, u)?;
        self.check_horizontal(p, v)?;
        Ok(self.dtheta(u, &self.apply_j(p, v)))
    }

    /// Horizontal projection `Π_H v = v − θ(v) T`.
    pub fn horizontal_projection(&self, p: &[f64], v: &[f64]) -> Vec<f64> {
        let th = self.theta(p, v);
        let mut out = v.to_vec();
        out[self.t_axis()] -= th;
        out
    }

    /// `G̃_θ(∂_A, ∂_B)`: the Levi form extended by `G̃_θ(·, T) = 0`.
    pub fn degenerate_levi_matrix(&self, p: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        let proj: Vec<Vec<f64>> = (0..m)
            .map(|a| {
                let mut e = vec![0.0; m];
                e[a] = 1.0;
                self.horizontal_projection(p, &e)
            })
            .collect();
        DMatrix::from_fn(m, m, |a, b| self.dtheta(&proj[a], &self.apply_j(p, &proj[b])))
    }

    /// Webster metric `g_θ = G̃_θ + θ ⊗ θ` in coordinates.
    pub fn webster_metric(&self, p: &[f64]) -> DMatrix<f64> {
        let th = self.contact_form(p);
        let mut g = self.degenerate_levi_matrix(p);
        let m = self.dim();
        for a in 0..m {
            for b in 0..m {
                g[(a, b)] += th[a] * th[b];
            }
        }
        g
    }

    /// Coordinate components of the complex frame `(T, T_1..T_n, T_1̄..T_n̄)`,
    /// `T_α = (X̃_α − i X̃_{n+α}) / 2`, one column per frame vector.
    pub fn complex_frame(&self, p: &[f64]) -> DMatrix<C64> {
        let n = self.n;
        let m = self.dim();
        let mut frame = DMatrix::from_element(m, m, C64::new(0.0, 0.0));
        frame[(2 * n, 0)] = C64::new(1.0, 0.0);
        for a in 0..n {
            for (axis, c) in self.frame_terms(a, p) {
                frame[(axis, 1 + a)] += C64::new(0.5 * c, 0.0);
                frame[(axis, 1 + n + a)] += C64::new(0.5 * c, 0.0);
            }
            for (axis, c) in self.frame_terms(n + a, p) {
                frame[(axis, 1 + a)] += C64::new(0.0, -0.5 * c);
                frame[(axis, 1 + n + a)] += C64::new(0.0, 0.5 * c);
            }
        }
        frame
    }

    pub fn frame_decomposition(&self, p: &[f64]) -> FrameDecomposition {
        let frame = self.complex_frame(p);
        let inv = frame.try_inverse().expect("complex frame is invertible on H_n");
        let lambda = inv.transpose();
        let mu = lambda.clone().try_inverse().expect("λ is invertible on H_n");
        FrameDecomposition { lambda, mu }
    }

    /// `g_{αβ̄} = G_θ(T_α, T_β̄)` (complex-bilinear extension), `n × n`.
    pub fn levi_hermitian(&self, p: &[f64]) -> DMatrix<C64> {
        let n = self.n;
        let frame = self.complex_frame(p);
        let column = |c: usize| -> (Vec<f64>, Vec<f64>) {
            let re = (0..self.dim()).map(|k| frame[(k, c)].re).collect();
            let im = (0..self.dim()).map(|k| frame[(k, c)].im).collect();
            (re, im)
        };
        DMatrix::from_fn(n, n, |a, b| {
            let (ur, ui) = column(1 + a);
            let (vr, vi) = column(1 + n + b);
            let jvr = self.apply_j(p, &vr);
            let jvi = self.apply_j(p, &vi);
            let re = self.dtheta(&ur, &jvr) - self.dtheta(&ui, &jvi);
            let im = self.dtheta(&ur, &jvi) + self.dtheta(&ui, &jvr);
            C64::new(re, im)
        })
    }

    /// `g^{αβ̄}` with `g^{αβ̄} g_{γβ̄} = δ^α_γ`.
    pub fn levi_hermitian_inverse(&self, p: &[f64]) -> DMatrix<C64> {
        self.levi_hermitian(p)
            .transpose()
            .try_inverse()
            .expect("Levi form is non-degenerate")
    }
}

/// `c_n` with `θ ∧ (dθ)^n = ± c_n dx¹∧..∧dxⁿ∧dy¹∧..∧dyⁿ∧dt`; `c_n = 4^n n!`.
///
/// The sign of the form in this coordinate order is [`volume_form_sign`];
/// quadrature uses the density `c_n`.
pub fn volume_density(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidDimension("CR dimension must be at least 1".into()));
    }
    Ok((1..=n).fold(1.0, |acc, k| acc * 4.0 * k as f64))
}

/// Orientation sign of `θ ∧ (dθ)^n` relative to `dx¹..dxⁿ dy¹..dyⁿ dt`.
pub fn volume_form_sign(n: usize) -> f64 {
    if (n * n.saturating_sub(1) / 2) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn frame_vector_examples() {
        let m = HeisenbergModel::new(1).unwrap();
        assert_eq!(m.frame_vector(0, &[0.0, 0.0, 0.0]).unwrap(), vec![0.5, 0.0, 0.0]);
        assert_eq!(m.frame_vector(1, &[1.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.5, -1.0]);
        let v = m.frame_vector(0, &[0.0, 0.7, -3.0]).unwrap();
        assert_eq!(v, vec![0.5, 0.0, 0.7]);
        assert!(matches!(m.frame_vector(2, &[0.0; 3]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn levi_form_examples() {
        let m = HeisenbergModel::new(1).unwrap();
        let p = [0.3, -0.2, 0.9];
        let x1 = m.frame_vector(0, &p).unwrap();
        let x2 = m.frame_vector(1, &p).unwrap();
        assert!(close(m.levi_form(&p, &x1, &x1).unwrap(), 1.0));
        assert!(close(m.levi_form(&p, &x1, &x2).unwrap(), 0.0));
        assert!(close(m.levi_form(&p, &[0.0; 3], &x2).unwrap(), 0.0));
        assert!(matches!(m.levi_form(&p, &m.reeb(), &x1), Err(Error::NonHorizontal { .. })));
    }

    #[test]
    fn volume_density_values() {
        assert_eq!(volume_density(1).unwrap(), 4.0);
        assert_eq!(volume_density(2).unwrap(), 32.0);
        assert_eq!(volume_density(3).unwrap(), 384.0);
        assert!(volume_density(0).is_err());
    }

    #[test]
    fn levi_hermitian_is_half_identity() {
        let m = HeisenbergModel::new(2).unwrap();
        let p = [0.1, 0.2, -0.3, 0.4, 0.5];
        let g = m.levi_hermitian(&p);
        for a in 0..2 {
            for b in 0..2 {
                let expect = if a == b { 0.5 } else { 0.0 };
                assert!((g[(a, b)] - C64::new(expect, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn frame_decomposition_examples() {
        let m = HeisenbergModel::new(1).unwrap();
        let fd = m.frame_decomposition(&[0.0, 1.0, 0.0]);
        // ∂_x = X_1 − 2y T = 2 X̃_1 − 2y T and X̃_1 = T_1 + T_1̄.
        let row = |a: usize| (0..3).map(|b| fd.lambda[(a, b)]).collect::<Vec<_>>();
        let dx = row(0);
        assert!((dx[0] - C64::new(-2.0, 0.0)).norm() < 1e-14);
        assert!((dx[1] - C64::new(2.0, 0.0)).norm() < 1e-14);
        assert!((dx[2] - C64::new(2.0, 0.0)).norm() < 1e-14);
        let fd0 = m.frame_decomposition(&[0.0; 3]);
        assert!((fd0.lambda[(2, 0)] - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(fd0.lambda[(2, 1)].norm() < 1e-14 && fd0.lambda[(2, 2)].norm() < 1e-14);
    }
}
