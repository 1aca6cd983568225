//! Horizontal calculus on `H_n` and pullback-bundle operators.
//!
//! The building blocks are generic over the lattice: a [`Calculus`] is a
//! finite-difference operator plus a signed orthonormal frame of vector
//! fields, so the same code evaluates the rough sublaplacian on the base
//! (`ε_a = +1`) and the rough Laplacian of the Fefferman metric on the
//! circle bundle (one timelike direction).
//!
//! Second derivatives along a vector field come in two schemes:
//! [`Scheme::Nested`] applies the first-derivative stencil twice, while
//! [`Scheme::Expanded`] writes `X(Xf) = X^p X^q ∂_p∂_q f + (X·∂X^q) ∂_q f`
//! and uses direct second-difference stencils. Both are consistent of the
//! stencil order and differ by truncation error only.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MapField, ScalarField, SectionField};
use crate::heisenberg::{HeisenbergModel, ORTHONORMAL_FRAME_SCALE};
use crate::stencil::FiniteDifference;
use crate::target::{apply_riemann, riemann_from_parts, TargetGeometry};

/// Deliberate formula corruptions used to show that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Negates the base curvature-trace term of `BH_b`.
    CurvatureSign,
    /// Drops `2∇_{∇^H g}V` from the Leibniz expansion of `Δ_b^φ(gV)`.
    DropLeibnizTerm,
    /// Uses the unnormalized frame `X_a` instead of `X_a / 2`.
    FrameNormalization,
    /// Omits `Γ^s_{kℓ}Γ^i_{js}` from the expanded rough sublaplacian.
    DropChristoffelProduct,
    /// Drops the fibre normalization in the circle-bundle volume.
    FiberWeight,
}

impl Mutation {
    pub const ALL: [Mutation; 5] = [
        Mutation::CurvatureSign,
        Mutation::DropLeibnizTerm,
        Mutation::FrameNormalization,
        Mutation::DropChristoffelProduct,
        Mutation::FiberWeight,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mutation::CurvatureSign => "curvature_sign",
            Mutation::DropLeibnizTerm => "drop_leibniz_term",
            Mutation::FrameNormalization => "frame_normalization",
            Mutation::DropChristoffelProduct => "drop_christoffel_product",
            Mutation::FiberWeight => "fiber_weight",
        }
    }
}

impl std::str::FromStr for Mutation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mutation::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown mutation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Nested,
    Expanded,
}

/// Coefficient of a vector field along one coordinate axis.
#[derive(Debug, Clone)]
pub enum Coef {
    Const(f64),
    Field(Arc<Vec<f64>>),
}

impl Coef {
    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        match self {
            Coef::Const(c) => *c,
            Coef::Field(v) => v[idx],
        }
    }
}

/// A vector field `Σ c_p ∂_p` on a lattice, stored sparsely by axis.
#[derive(Debug, Clone)]
pub struct Directional {
    terms: Vec<(usize, Coef)>,
}

fn axpy_coef(out: &mut [f64], c: &Coef, d: &[f64]) {
    match c {
        Coef::Const(k) => out.iter_mut().zip(d).for_each(|(o, x)| *o += k * x),
        Coef::Field(v) => out.iter_mut().zip(d).zip(v.iter()).for_each(|((o, x), k)| *o += k * x),
    }
}

impl Directional {
    pub fn new(terms: Vec<(usize, Coef)>) -> Self {
        let mut seen = std::collections::BTreeSet::new();
        for (axis, _) in &terms {
            assert!(seen.insert(*axis), "duplicate axis {axis} in directional field");
        }
        Self { terms }
    }

    pub fn coordinate(axis: usize) -> Self {
        Self { terms: vec![(axis, Coef::Const(1.0))] }
    }

    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn terms(&self) -> &[(usize, Coef)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coordinate components at lattice point `idx`.
    pub fn components_at(&self, idx: usize, ndim: usize) -> Vec<f64> {
        let mut v = vec![0.0; ndim];
        for (axis, c) in &self.terms {
            v[*axis] += c.at(idx);
        }
        v
    }

    /// `X f`.
    pub fn apply(&self, fd: &FiniteDifference, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for (axis, c) in &self.terms {
            let d = fd.d1(f, *axis);
            axpy_coef(&mut out, c, &d);
        }
        out
    }

    /// `X(X f)` under the requested scheme.
    pub fn second(&self, fd: &FiniteDifference, f: &[f64], scheme: Scheme) -> Vec<f64> {
        match scheme {
            Scheme::Nested => self.apply(fd, &self.apply(fd, f)),
            Scheme::Expanded => self.second_expanded(fd, f),
        }
    }

    fn second_expanded(&self, fd: &FiniteDifference, f: &[f64]) -> Vec<f64> {
        let len = f.len();
        let mut out = vec![0.0; len];
        let first: Vec<Vec<f64>> = self.terms.iter().map(|(axis, _)| fd.d1(f, *axis)).collect();
        for (i, (p, cp)) in self.terms.iter().enumerate() {
            for (j, (q, cq)) in self.terms.iter().enumerate().skip(i) {
                let d = if i == j { fd.d2(f, *p) } else { fd.d1(&first[i], *q) };
                let mult = if i == j { 1.0 } else { 2.0 };
                out.par_iter_mut().enumerate().for_each(|(k, o)| *o += mult * cp.at(k) * cq.at(k) * d[k]);
            }
        }
        // Drift (X·∂X^q) ∂_q f from non-constant coefficients.
        for (j, (_, cq)) in self.terms.iter().enumerate() {
            if let Coef::Field(c) = cq {
                let mut drift = vec![0.0; len];
                for (p, cp) in &self.terms {
                    let dc = fd.d1(c, *p);
                    axpy_coef(&mut drift, cp, &dc);
                }
                out.iter_mut().zip(&drift).zip(&first[j]).for_each(|((o, a), b)| *o += a * b);
            }
        }
        out
    }
}

/// One member of a signed orthonormal frame, with its self-covariant
/// derivative `∇_E E` (`None` where it is identically zero on the model).
#[derive(Debug, Clone)]
pub struct FrameVector {
    pub field: Directional,
    pub sign: f64,
    pub self_derivative: Option<Directional>,
}

#[derive(Debug, Clone)]
pub struct Calculus {
    fd: FiniteDifference,
    frame: Vec<FrameVector>,
}

impl Calculus {
    pub fn new(fd: FiniteDifference, frame: Vec<FrameVector>) -> Self {
        Self { fd, frame }
    }

    pub fn fd(&self) -> &FiniteDifference {
        &self.fd
    }

    pub fn frame(&self) -> &[FrameVector] {
        &self.frame
    }

    pub fn len(&self) -> usize {
        self.fd.lattice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Σ_a ε_a {E_a(E_a u) − (∇_{E_a}E_a) u}`.
    pub fn frame_laplacian(&self, u: &[f64], scheme: Scheme) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for e in &self.frame {
            let d2 = e.field.second(&self.fd, u, scheme);
            out.iter_mut().zip(&d2).for_each(|(o, v)| *o += e.sign * v);
            if let Some(acc) = &e.self_derivative {
                let d = acc.apply(&self.fd, u);
                out.iter_mut().zip(&d).for_each(|(o, v)| *o -= e.sign * v);
            }
        }
        out
    }
}

/// Corruptions understood by [`Pullback`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PullbackOptions {
    pub negate_curvature: bool,
    pub drop_christoffel_product: bool,
}

/// The pullback bundle `φ⁻¹TN` over a lattice, with target data sampled
/// along `φ` and first frame derivatives of `φ` cached.
pub struct Pullback<'a> {
    calc: &'a Calculus,
    target: &'a TargetGeometry,
    phi: &'a [Vec<f64>],
    gamma: Vec<f64>,
    dphi: Vec<Vec<Vec<f64>>>,
    options: PullbackOptions,
}

pub type Components = Vec<Vec<f64>>;

fn zeros(nu: usize, len: usize) -> Components {
    vec![vec![0.0; len]; nu]
}

fn sample_target(phi: &[Vec<f64>], per_point: usize, f: impl Fn(&[f64], &mut [f64]) + Sync) -> Vec<f64> {
    let len = phi[0].len();
    let nu = phi.len();
    let mut out = vec![0.0; len * per_point];
    out.par_chunks_mut(per_point).enumerate().for_each(|(p, chunk)| {
        let y: Vec<f64> = (0..nu).map(|i| phi[i][p]).collect();
        f(&y, chunk);
    });
    out
}

impl<'a> Pullback<'a> {
    pub fn new(calc: &'a Calculus, target: &'a TargetGeometry, phi: &'a [Vec<f64>], options: PullbackOptions) -> Result<Self> {
        let nu = target.nu();
        if phi.len() != nu {
            return Err(Error::Mismatch(format!("map has {} components, target dimension is {nu}", phi.len())));
        }
        if phi.iter().any(|c| c.len() != calc.len()) {
            return Err(Error::Mismatch("map does not live on this lattice".into()));
        }
        let mut y = vec![0.0; nu];
        for p in 0..calc.len() {
            for i in 0..nu {
                y[i] = phi[i][p];
            }
            target.check_point(&y)?;
        }
        let gamma = sample_target(phi, nu.pow(3), |y, out| target.christoffel_into(y, out));
        let dphi = calc
            .frame
            .iter()
            .map(|e| phi.iter().map(|c| e.field.apply(&calc.fd, c)).collect())
            .collect();
        Ok(Self { calc, target, phi, gamma, dphi, options })
    }

    pub fn nu(&self) -> usize {
        self.target.nu()
    }

    pub fn len(&self) -> usize {
        self.calc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn calculus(&self) -> &Calculus {
        self.calc
    }

    /// Cached `E_a(φ^j)`.
    pub fn frame_pushforward(&self, a: usize) -> &Components {
        &self.dphi[a]
    }

    #[inline]
    fn gam(&self, p: usize, i: usize, j: usize, k: usize) -> f64 {
        let nu = self.nu();
        self.gamma[p * nu * nu * nu + (i * nu + j) * nu + k]
    }

    fn check_section(&self, v: &[Vec<f64>]) -> Result<()> {
        if v.len() != self.nu() || v.iter().any(|c| c.len() != self.len()) {
            return Err(Error::Mismatch("section does not match the map it lies over".into()));
        }
        Ok(())
    }

    /// `Σ_{j,k} a^j b^k Γ^i_{jk}` pointwise.
    fn contract(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Components {
        let nu = self.nu();
        let mut out = zeros(nu, self.len());
        for (i, o) in out.iter_mut().enumerate() {
            o.par_iter_mut().enumerate().for_each(|(p, v)| {
                let mut acc = 0.0;
                for j in 0..nu {
                    for k in 0..nu {
                        acc += a[j][p] * b[k][p] * self.gam(p, i, j, k);
                    }
                }
                *v = acc;
            });
        }
        out
    }

    /// `(φ⁻¹∇^h)_X V = {X(V^i) + X(φ^j) V^k Γ^i_{jk}} X_i^φ` with `X(φ^j)` supplied.
    pub fn connection_with(&self, dir: &Directional, dir_phi: &[Vec<f64>], v: &[Vec<f64>]) -> Components {
        let mut out = self.contract(dir_phi, v);
        for (o, vi) in out.iter_mut().zip(v) {
            let d = dir.apply(&self.calc.fd, vi);
            o.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
        out
    }

    pub fn connection(&self, dir: &Directional, v: &[Vec<f64>]) -> Components {
        let dir_phi: Components = self.phi.iter().map(|c| dir.apply(&self.calc.fd, c)).collect();
        self.connection_with(dir, &dir_phi, v)
    }

    /// `(φ⁻¹∇^h)_{E_a} V`.
    pub fn connection_frame(&self, a: usize, v: &[Vec<f64>]) -> Components {
        self.connection_with(&self.calc.frame[a].field, &self.dphi[a], v)
    }

    /// Route (i): `Σ_a ε_a {∇_{E_a}∇_{E_a} V − ∇_{∇_{E_a}E_a} V}` by nesting.
    pub fn rough_laplacian_nested(&self, v: &[Vec<f64>]) -> Result<Components> {
        self.check_section(v)?;
        let mut out = zeros(self.nu(), self.len());
        for (a, e) in self.calc.frame.iter().enumerate() {
            let inner = self.connection_frame(a, v);
            let outer = self.connection_frame(a, &inner);
            add_scaled(&mut out, &outer, e.sign);
            if let Some(acc) = &e.self_derivative {
                let hook = self.connection(acc, v);
                add_scaled(&mut out, &hook, -e.sign);
            }
        }
        Ok(out)
    }

    /// Route (ii): the expanded local formula
    /// `E²V^i + 2E(φ^j)Γ^i_{jk}E(V^k) + [E²(φ^j)Γ^i_{jk} + E(φ^j)E(φ^ℓ)(∂_ℓΓ^i_{jk} + Γ^s_{kℓ}Γ^i_{js})]V^k`
    /// summed with signs, using direct second-difference stencils.
    pub fn rough_laplacian_expanded(&self, v: &[Vec<f64>]) -> Result<Components> {
        self.check_section(v)?;
        let nu = self.nu();
        let len = self.len();
        let fd = &self.calc.fd;
        let dgamma = sample_target(self.phi, nu.pow(4), |y, out| self.target.christoffel_derivative_into(y, out));
        let drop_product = self.options.drop_christoffel_product;
        let mut out = zeros(nu, len);
        for (a, e) in self.calc.frame.iter().enumerate() {
            let dphi = &self.dphi[a];
            let d2v: Components = v.iter().map(|c| e.field.second(fd, c, Scheme::Expanded)).collect();
            let dv: Components = v.iter().map(|c| e.field.apply(fd, c)).collect();
            let d2phi: Components = self.phi.iter().map(|c| e.field.second(fd, c, Scheme::Expanded)).collect();
            let cross = self.contract(dphi, &dv);
            let drift = self.contract(&d2phi, v);
            for i in 0..nu {
                let oi = &mut out[i];
                oi.par_iter_mut().enumerate().for_each(|(p, o)| {
                    let mut zeroth = 0.0;
                    for j in 0..nu {
                        for k in 0..nu {
                            for l in 0..nu {
                                let mut coef = dgamma[p * nu.pow(4) + ((l * nu + i) * nu + j) * nu + k];
                                if !drop_product {
                                    for s in 0..nu {
                                        coef += self.gam(p, s, k, l) * self.gam(p, i, j, s);
                                    }
                                }
                                zeroth += dphi[j][p] * dphi[l][p] * coef * v[k][p];
                            }
                        }
                    }
                    *o += e.sign * (d2v[i][p] + 2.0 * cross[i][p] + drift[i][p] + zeroth);
                });
            }
            if let Some(acc) = &e.self_derivative {
                let hook = self.connection(acc, v);
                add_scaled(&mut out, &hook, -e.sign);
            }
        }
        Ok(out)
    }

    pub fn rough_laplacian(&self, v: &[Vec<f64>], scheme: Scheme) -> Result<Components> {
        match scheme {
            Scheme::Nested => self.rough_laplacian_nested(v),
            Scheme::Expanded => self.rough_laplacian_expanded(v),
        }
    }

    /// Frame-sum tension `Σ_a ε_a {E_a²φ^i − (∇_{E_a}E_a)φ^i + E_a(φ^j)E_a(φ^k)Γ^i_{jk}}`.
    pub fn tension(&self, scheme: Scheme) -> Components {
        let fd = &self.calc.fd;
        let mut out = zeros(self.nu(), self.len());
        for (a, e) in self.calc.frame.iter().enumerate() {
            let lap: Components = match scheme {
                Scheme::Nested => self.dphi[a].iter().map(|c| e.field.apply(fd, c)).collect(),
                Scheme::Expanded => self.phi.iter().map(|c| e.field.second(fd, c, Scheme::Expanded)).collect(),
            };
            add_scaled(&mut out, &lap, e.sign);
            if let Some(acc) = &e.self_derivative {
                let hook: Components = self.phi.iter().map(|c| acc.apply(fd, c)).collect();
                add_scaled(&mut out, &hook, -e.sign);
            }
            let quad = self.contract(&self.dphi[a], &self.dphi[a]);
            add_scaled(&mut out, &quad, e.sign);
        }
        out
    }

    /// `β(E_a, E_b) = (φ⁻¹∇^h)_{E_a} φ_*E_b − φ_*∇_{E_a}E_b`; the frame is
    /// parallel on the models used here, so the second term is absent.
    pub fn second_fundamental_form(&self, a: usize, b: usize) -> Components {
        self.connection_frame(a, &self.dphi[b])
    }

    /// `Σ_a ε_a β(E_a, E_a)`.
    pub fn tension_trace(&self) -> Components {
        let mut out = zeros(self.nu(), self.len());
        for (a, e) in self.calc.frame.iter().enumerate() {
            let mut beta = self.second_fundamental_form(a, a);
            if let Some(acc) = &e.self_derivative {
                let hook: Components = self.phi.iter().map(|c| acc.apply(&self.calc.fd, c)).collect();
                add_scaled(&mut beta, &hook, -1.0);
            }
            add_scaled(&mut out, &beta, e.sign);
        }
        out
    }

    /// `Σ_a ε_a R^h(W, φ_*E_a) φ_*E_a`.
    pub fn curvature_trace(&self, w: &[Vec<f64>]) -> Result<Components> {
        self.check_section(w)?;
        let nu = self.nu();
        let len = self.len();
        let mut out = zeros(nu, len);
        if self.target.is_flat() {
            return Ok(out);
        }
        let sign = if self.options.negate_curvature { -1.0 } else { 1.0 };
        let target = self.target;
        let rows: Vec<Vec<f64>> = (0..len)
            .into_par_iter()
            .map(|p| {
                let y: Vec<f64> = (0..nu).map(|i| self.phi[i][p]).collect();
                let mut gam = vec![0.0; nu.pow(3)];
                let mut dgam = vec![0.0; nu.pow(4)];
                let mut r = vec![0.0; nu.pow(4)];
                gam.copy_from_slice(&self.gamma[p * nu.pow(3)..(p + 1) * nu.pow(3)]);
                target.christoffel_derivative_into(&y, &mut dgam);
                riemann_from_parts(nu, &gam, &dgam, &mut r);
                let wv: Vec<f64> = (0..nu).map(|i| w[i][p]).collect();
                let mut acc = vec![0.0; nu];
                for (a, e) in self.calc.frame.iter().enumerate() {
                    let x: Vec<f64> = (0..nu).map(|i| self.dphi[a][i][p]).collect();
                    let term = apply_riemann(nu, &r, &wv, &x, &x);
                    for i in 0..nu {
                        acc[i] += e.sign * term[i];
                    }
                }
                acc
            })
            .collect();
        for (p, row) in rows.iter().enumerate() {
            for i in 0..nu {
                out[i][p] = sign * row[i];
            }
        }
        Ok(out)
    }

    /// `BH = Δ^φ τ + Σ_a ε_a R(τ, φ_*E_a)φ_*E_a`.
    pub fn biharmonic(&self, scheme: Scheme) -> Result<Components> {
        let tau = self.tension(scheme);
        let mut out = self.rough_laplacian(&tau, scheme)?;
        let curv = self.curvature_trace(&tau)?;
        add_scaled(&mut out, &curv, 1.0);
        Ok(out)
    }

    /// `h_{ij}(φ) V^i W^j` pointwise.
    pub fn inner(&self, v: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<f64> {
        pointwise_inner(self.target, self.phi, v, w)
    }
}

pub fn pointwise_inner(target: &TargetGeometry, phi: &[Vec<f64>], v: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<f64> {
    let nu = target.nu();
    let len = phi[0].len();
    (0..len)
        .into_par_iter()
        .map(|p| {
            let y: Vec<f64> = (0..nu).map(|i| phi[i][p]).collect();
            let mut h = vec![0.0; nu * nu];
            target.metric_into(&y, &mut h);
            let mut acc = 0.0;
            for i in 0..nu {
                for j in 0..nu {
                    acc += h[i * nu + j] * v[i][p] * w[j][p];
                }
            }
            acc
        })
        .collect()
}

pub fn add_scaled(out: &mut [Vec<f64>], x: &[Vec<f64>], s: f64) {
    for (o, xi) in out.iter_mut().zip(x) {
        o.iter_mut().zip(xi).for_each(|(a, b)| *a += s * b);
    }
}

/// A direction on the base: frame vector, coordinate axis, or Reeb field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Frame(usize),
    Coordinate(usize),
    Reeb,
}

/// Coefficients of a horizontal vector field in the frame `X̃_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalField {
    pub grid: GridSpec,
    pub coefficients: Vec<Vec<f64>>,
}

/// The operator engine on a grid over `H_n` with a chosen target.
#[derive(Debug, Clone)]
pub struct Subelliptic {
    model: HeisenbergModel,
    grid: GridSpec,
    target: TargetGeometry,
    calc: Calculus,
    mutation: Option<Mutation>,
}

/// The frame `X̃_a` as lattice vector fields.
pub fn heisenberg_frame(model: &HeisenbergModel, grid: &GridSpec) -> Vec<Directional> {
    let n = model.cr_dim();
    let s = model.frame_scale();
    let lat = grid.lattice();
    let t = model.t_axis();
    (0..2 * n)
        .map(|a| {
            let (other, sign) = if a < n { (n + a, 1.0) } else { (a - n, -1.0) };
            let coef: Vec<f64> = (0..lat.len()).map(|p| sign * 2.0 * s * lat.coordinate(p, other)).collect();
            Directional::new(vec![(a, Coef::Const(s)), (t, Coef::Field(Arc::new(coef)))])
        })
        .collect()
}

impl Subelliptic {
    pub fn new(grid: GridSpec, target: TargetGeometry, stencil_order: usize) -> Result<Self> {
        Self::with_mutation(grid, target, stencil_order, None)
    }

    pub fn with_mutation(grid: GridSpec, target: TargetGeometry, stencil_order: usize, mutation: Option<Mutation>) -> Result<Self> {
        let scale = if mutation == Some(Mutation::FrameNormalization) { 1.0 } else { ORTHONORMAL_FRAME_SCALE };
        let model = HeisenbergModel::with_frame_scale(grid.cr_dim(), scale)?;
        let fd = FiniteDifference::new(grid.lattice(), stencil_order)?;
        let frame = heisenberg_frame(&model, &grid)
            .into_iter()
            // ∇_{X̃_a} X̃_a = 0 for the Tanaka-Webster connection of H_n.
            .map(|field| FrameVector { field, sign: 1.0, self_derivative: None })
            .collect();
        Ok(Self { model, grid, target, calc: Calculus::new(fd, frame), mutation })
    }

    pub fn model(&self) -> &HeisenbergModel {
        &self.model
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn target(&self) -> &TargetGeometry {
        &self.target
    }

    pub fn calculus(&self) -> &Calculus {
        &self.calc
    }

    pub fn mutation(&self) -> Option<Mutation> {
        self.mutation
    }

    fn fd(&self) -> &FiniteDifference {
        self.calc.fd()
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if grid != &self.grid {
            return Err(Error::Mismatch("field lives on a different grid".into()));
        }
        Ok(())
    }

    fn scalar(&self, values: Vec<f64>) -> ScalarField {
        ScalarField { grid: self.grid.clone(), values }
    }

    fn section(&self, components: Components) -> SectionField {
        SectionField { grid: self.grid.clone(), components }
    }

    pub fn direction(&self, dir: Direction) -> Result<Directional> {
        let m = self.model.dim();
        match dir {
            Direction::Frame(a) => {
                if a >= 2 * self.model.cr_dim() {
                    return Err(Error::IndexOutOfRange { index: a, bound: 2 * self.model.cr_dim() });
                }
                Ok(self.calc.frame()[a].field.clone())
            }
            Direction::Coordinate(axis) => {
                if axis >= m {
                    return Err(Error::IndexOutOfRange { index: axis, bound: m });
                }
                Ok(Directional::coordinate(axis))
            }
            Direction::Reeb => Ok(Directional::coordinate(self.model.t_axis())),
        }
    }

    pub fn coordinate_derivative(&self, f: &ScalarField, axis: usize) -> Result<ScalarField> {
        self.check_grid(&f.grid)?;
        if axis >= self.model.dim() {
            return Err(Error::IndexOutOfRange { index: axis, bound: self.model.dim() });
        }
        Ok(self.scalar(self.fd().d1(&f.values, axis)))
    }

    pub fn frame_derivative(&self, f: &ScalarField, a: usize) -> Result<ScalarField> {
        self.check_grid(&f.grid)?;
        let dir = self.direction(Direction::Frame(a))?;
        Ok(self.scalar(dir.apply(self.fd(), &f.values)))
    }

    /// `∇^H u = Σ_a X̃_a(u) X̃_a`.
    pub fn horizontal_gradient(&self, u: &ScalarField) -> Result<HorizontalField> {
        self.check_grid(&u.grid)?;
        let coefficients = self.calc.frame().iter().map(|e| e.field.apply(self.fd(), &u.values)).collect();
        Ok(HorizontalField { grid: self.grid.clone(), coefficients })
    }

    /// `Δ_b u = Σ_a {X̃_a² u − (∇_{X̃_a}X̃_a) u}`.
    pub fn sublaplacian(&self, u: &ScalarField) -> Result<ScalarField> {
        self.sublaplacian_with(u, Scheme::Nested)
    }

    pub fn sublaplacian_with(&self, u: &ScalarField, scheme: Scheme) -> Result<ScalarField> {
        self.check_grid(&u.grid)?;
        Ok(self.scalar(self.calc.frame_laplacian(&u.values, scheme)))
    }

    pub fn bi_sublaplacian(&self, u: &ScalarField) -> Result<ScalarField> {
        self.sublaplacian(&self.sublaplacian(u)?)
    }

    /// `Σ_a X̃_a(Y^a)`; exact divergence because `div X̃_a = 0` on `H_n`.
    pub fn divergence(&self, y: &HorizontalField) -> Result<ScalarField> {
        self.check_grid(&y.grid)?;
        if y.coefficients.len() != self.calc.frame().len() {
            return Err(Error::Mismatch("horizontal field has the wrong number of coefficients".into()));
        }
        let mut out = vec![0.0; self.grid.len()];
        for (e, c) in self.calc.frame().iter().zip(&y.coefficients) {
            let d = e.field.apply(self.fd(), c);
            out.iter_mut().zip(&d).for_each(|(o, v)| *o += v);
        }
        Ok(self.scalar(out))
    }

    fn options(&self) -> PullbackOptions {
        PullbackOptions {
            negate_curvature: self.mutation == Some(Mutation::CurvatureSign),
            drop_christoffel_product: self.mutation == Some(Mutation::DropChristoffelProduct),
        }
    }

    /// Pullback-bundle view of `φ`, shared by the section operators.
    pub fn pullback<'a>(&'a self, phi: &'a MapField) -> Result<Pullback<'a>> {
        self.check_grid(&phi.grid)?;
        Pullback::new(&self.calc, &self.target, &phi.components, self.options())
    }

    fn check_section(&self, phi: &MapField, v: &SectionField) -> Result<()> {
        self.check_grid(&v.grid)?;
        if v.nu() != phi.nu() {
            return Err(Error::Mismatch("section and map have different target dimensions".into()));
        }
        Ok(())
    }

    pub fn pullback_connection(&self, phi: &MapField, dir: Direction, v: &SectionField) -> Result<SectionField> {
        self.check_section(phi, v)?;
        let pb = self.pullback(phi)?;
        let d = self.direction(dir)?;
        Ok(self.section(pb.connection(&d, &v.components)))
    }

    /// `φ_*X` with components `X(φ^i)`.
    pub fn pushforward(&self, phi: &MapField, dir: Direction) -> Result<SectionField> {
        self.check_grid(&phi.grid)?;
        let d = self.direction(dir)?;
        Ok(self.section(phi.components.iter().map(|c| d.apply(self.fd(), c)).collect()))
    }

    pub fn second_fundamental_form(&self, phi: &MapField, a: usize, b: usize) -> Result<SectionField> {
        let bound = 2 * self.model.cr_dim();
        for idx in [a, b] {
            if idx >= bound {
                return Err(Error::IndexOutOfRange { index: idx, bound });
            }
        }
        let pb = self.pullback(phi)?;
        Ok(self.section(pb.second_fundamental_form(a, b)))
    }

    /// `τ_b(φ)^i = Δ_b φ^i + Σ_a X̃_a(φ^j) X̃_a(φ^k) Γ^i_{jk}(φ)`.
    pub fn tension_field(&self, phi: &MapField) -> Result<SectionField> {
        self.tension_field_with(phi, Scheme::Nested)
    }

    pub fn tension_field_with(&self, phi: &MapField, scheme: Scheme) -> Result<SectionField> {
        let pb = self.pullback(phi)?;
        Ok(self.section(pb.tension(scheme)))
    }

    /// `trace_{G_θ} Π_H β_b(φ)`.
    pub fn tension_field_trace(&self, phi: &MapField) -> Result<SectionField> {
        let pb = self.pullback(phi)?;
        Ok(self.section(pb.tension_trace()))
    }

    /// Frame definition: nested pullback connections.
    pub fn rough_sublaplacian(&self, phi: &MapField, v: &SectionField) -> Result<SectionField> {
        self.check_section(phi, v)?;
        let pb = self.pullback(phi)?;
        Ok(self.section(pb.rough_laplacian_nested(&v.components)?))
    }

    /// Expanded local formula in Christoffel symbols and their derivatives.
    pub fn rough_sublaplacian_expanded(&self, phi: &MapField, v: &SectionField) -> Result<SectionField> {
        self.check_section(phi, v)?;
        let pb = self.pullback(phi)?;
        Ok(self.section(pb.rough_laplacian_expanded(&v.components)?))
    }

    /// `D V = ((φ⁻¹∇^h)_{X̃_a} V)_a`.
    pub fn horizontal_derivative_d(&self, phi: &MapField, v: &SectionField) -> Result<Vec<SectionField>> {
        self.check_section(phi, v)?;
        let pb = self.pullback(phi)?;
        Ok((0..self.calc.frame().len()).map(|a| self.section(pb.connection_frame(a, &v.components))).collect())
    }

    /// `D*Θ = −Σ_a {(φ⁻¹∇^h)_{X̃_a} Θ_a − Θ(∇_{X̃_a}X̃_a)}`.
    pub fn d_star(&self, phi: &MapField, theta: &[SectionField]) -> Result<SectionField> {
        if theta.len() != self.calc.frame().len() {
            return Err(Error::Mismatch(format!("D* expects {} sections", self.calc.frame().len())));
        }
        for t in theta {
            self.check_section(phi, t)?;
        }
        let pb = self.pullback(phi)?;
        let mut out = zeros(phi.nu(), self.grid.len());
        for (a, t) in theta.iter().enumerate() {
            let d = pb.connection_frame(a, &t.components);
            add_scaled(&mut out, &d, -1.0);
        }
        Ok(self.section(out))
    }

    /// Closed form `σ₂(Δ_b^φ)_ω v = [ω(T)² − ‖ω‖²] v` with the dual Webster norm.
    pub fn principal_symbol(&self, point: &[f64], omega: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let m = self.model.dim();
        if omega.len() != m || point.len() != m {
            return Err(Error::InvalidDimension(format!("covector and point need {m} components")));
        }
        if omega.iter().all(|c| *c == 0.0) {
            return Err(Error::ZeroCovector);
        }
        let g = self.model.webster_metric(point);
        let ginv = g.try_inverse().ok_or_else(|| Error::NonFinite("Webster metric is singular".into()))?;
        let mut norm2 = 0.0;
        for a in 0..m {
            for b in 0..m {
                norm2 += ginv[(a, b)] * omega[a] * omega[b];
            }
        }
        let wt = omega[self.model.t_axis()];
        let factor = wt * wt - norm2;
        Ok(v.iter().map(|c| factor * c).collect())
    }

    /// Defining computation `−½ Δ_b^φ[(f − f(x))² V](x)` with `df = ω` and
    /// `V` the chart-constant section equal to `v`, at grid point `idx`.
    pub fn principal_symbol_defining(&self, phi: &MapField, idx: usize, omega: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let m = self.model.dim();
        if omega.len() != m {
            return Err(Error::InvalidDimension(format!("covector needs {m} components")));
        }
        if omega.iter().all(|c| *c == 0.0) {
            return Err(Error::ZeroCovector);
        }
        if v.len() != phi.nu() {
            return Err(Error::Mismatch("fibre vector has the wrong dimension".into()));
        }
        if idx >= self.grid.len() {
            return Err(Error::IndexOutOfRange { index: idx, bound: self.grid.len() });
        }
        let lat = self.grid.lattice();
        let x0 = lat.point(idx);
        let section: Components = v
            .iter()
            .map(|&c| {
                (0..self.grid.len())
                    .map(|p| {
                        let f: f64 = (0..m).map(|k| omega[k] * (lat.coordinate(p, k) - x0[k])).sum();
                        f * f * c
                    })
                    .collect()
            })
            .collect();
        let pb = self.pullback(phi)?;
        let lap = pb.rough_laplacian_nested(&section)?;
        Ok(lap.iter().map(|c| -0.5 * c[idx]).collect())
    }

    /// `trace_{G_θ} Π_H R^h(W, φ_*·)φ_*·`.
    pub fn curvature_trace_term(&self, phi: &MapField, w: &SectionField) -> Result<SectionField> {
        self.check_section(phi, w)?;
        let pb = self.pullback(phi)?;
        Ok(self.section(pb.curvature_trace(&w.components)?))
    }

    /// `BH_b(φ) = Δ_b^φ τ_b(φ) + trace_{G_θ} Π_H R^h(τ_b(φ), φ_*·)φ_*·`.
    pub fn bh_operator(&self, phi: &MapField) -> Result<SectionField> {
        self.bh_operator_with(phi, Scheme::Nested)
    }

    pub fn bh_operator_with(&self, phi: &MapField, scheme: Scheme) -> Result<SectionField> {
        let pb = self.pullback(phi)?;
        Ok(self.section(pb.biharmonic(scheme)?))
    }

    /// `g Δ_b^φ V + (Δ_b g) V + 2 (φ⁻¹∇^h)_{∇^H g} V`.
    pub fn leibniz_expansion(&self, phi: &MapField, g: &ScalarField, v: &SectionField) -> Result<SectionField> {
        self.check_section(phi, v)?;
        self.check_grid(&g.grid)?;
        let pb = self.pullback(phi)?;
        let lap_v = pb.rough_laplacian_nested(&v.components)?;
        let lap_g = self.calc.frame_laplacian(&g.values, Scheme::Nested);
        let mut out: Components = lap_v
            .iter()
            .zip(&v.components)
            .map(|(l, vi)| (0..l.len()).map(|p| g.values[p] * l[p] + lap_g[p] * vi[p]).collect())
            .collect();
        if self.mutation != Some(Mutation::DropLeibnizTerm) {
            for (a, e) in self.calc.frame().iter().enumerate() {
                let ga = e.field.apply(self.fd(), &g.values);
                let nabla = pb.connection_frame(a, &v.components);
                for (o, d) in out.iter_mut().zip(&nabla) {
                    o.iter_mut().zip(d).zip(&ga).for_each(|((x, y), w)| *x += 2.0 * w * y);
                }
            }
        }
        Ok(self.section(out))
    }

    /// `h^φ(V, W)` pointwise.
    pub fn bundle_inner(&self, phi: &MapField, v: &SectionField, w: &SectionField) -> Result<ScalarField> {
        self.check_section(phi, v)?;
        self.check_section(phi, w)?;
        Ok(self.scalar(pointwise_inner(&self.target, &phi.components, &v.components, &w.components)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn engine(points: usize) -> Subelliptic {
        let grid = GridSpec::uniform(1, points, 1.0).unwrap();
        Subelliptic::new(grid, TargetGeometry::flat(1).unwrap(), 4).unwrap()
    }

    fn max_diff(a: &[f64], b: impl Fn(usize) -> f64) -> f64 {
        a.iter().enumerate().map(|(i, v)| (v - b(i)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn frame_derivative_examples() {
        let e = engine(9);
        let g = e.grid().clone();
        let lat = g.lattice();
        let t = ScalarField::from_fn(&g, |p| p[2]);
        let x = ScalarField::from_fn(&g, |p| p[0]);
        let xt = e.frame_derivative(&t, 0).unwrap();
        assert!(max_diff(&xt.values, |i| lat.coordinate(i, 1)) < 1e-12);
        assert!(max_diff(&e.frame_derivative(&x, 0).unwrap().values, |_| 0.5) < 1e-12);
        assert!(max_diff(&e.frame_derivative(&x, 1).unwrap().values, |_| 0.0) < 1e-12);
    }

    #[test]
    fn horizontal_gradient_of_t() {
        let e = engine(9);
        let g = e.grid().clone();
        let lat = g.lattice();
        let grad = e.horizontal_gradient(&ScalarField::from_fn(&g, |p| p[2])).unwrap();
        assert!(max_diff(&grad.coefficients[0], |i| lat.coordinate(i, 1)) < 1e-12);
        assert!(max_diff(&grad.coefficients[1], |i| -lat.coordinate(i, 0)) < 1e-12);
    }

    #[test]
    fn sublaplacian_examples() {
        let e = engine(11);
        let g = e.grid().clone();
        let lat = g.lattice();
        let t = e.sublaplacian(&ScalarField::from_fn(&g, |p| p[2])).unwrap();
        assert!(max_diff(&t.values, |_| 0.0) < 1e-11);
        let r2 = e.sublaplacian(&ScalarField::from_fn(&g, |p| p[0] * p[0] + p[1] * p[1])).unwrap();
        assert!(max_diff(&r2.values, |_| 1.0) < 1e-11);
        let xt = e.sublaplacian(&ScalarField::from_fn(&g, |p| p[0] * p[2])).unwrap();
        assert!(max_diff(&xt.values, |i| lat.coordinate(i, 1)) < 1e-11);
        let bi = e.bi_sublaplacian(&ScalarField::from_fn(&g, |p| p[0] * p[0] + p[1] * p[1])).unwrap();
        assert!(max_diff(&bi.values, |_| 0.0) < 1e-9);
        let ex = e.sublaplacian_with(&ScalarField::from_fn(&g, |p| p[0] * p[2]), Scheme::Expanded).unwrap();
        assert!(max_diff(&ex.values, |i| lat.coordinate(i, 1)) < 1e-11);
    }

    #[test]
    fn symbol_closed_form_examples() {
        let e = engine(9);
        let s = e.principal_symbol(&[0.0; 3], &[1.0, 0.0, 0.0], &[1.0]).unwrap();
        assert!((s[0] + 0.25).abs() < 1e-14);
        let p = [0.3, -0.2, 0.5];
        let theta = e.model().contact_form(&p);
        assert!(e.principal_symbol(&p, &theta, &[1.0]).unwrap()[0].abs() < 1e-12);
        assert!(matches!(e.principal_symbol(&p, &[0.0; 3], &[1.0]), Err(Error::ZeroCovector)));
    }

    #[test]
    fn pseudoharmonic_maps_are_biharmonic() {
        let grid = GridSpec::uniform(1, 9, 1.0).unwrap();
        let e = Subelliptic::new(grid.clone(), TargetGeometry::round_sphere(2).unwrap(), 4).unwrap();
        let phi = MapField::constant(&grid, &[0.3, -0.1]);
        let bh = e.bh_operator(&phi).unwrap();
        let worst = bh.components.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn mutation_names_round_trip() {
        for m in Mutation::ALL {
            assert_eq!(m.as_str().parse::<Mutation>().unwrap(), m);
        }
    }
}
