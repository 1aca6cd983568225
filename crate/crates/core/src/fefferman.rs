//! The Fefferman metric on the circle bundle `C(H_n) = H_n × S¹` and the
//! lifted operators living there.
//!
//! On the flat model the connection form is `σ = dγ / (n+2)`, so in
//! coordinates `(x, y, t, γ)` the metric is
//! `F_{AB} = G̃_θ(∂_A, ∂_B)`, `F_{A,γ} = λ⁰_A / (n+2)`, `F_{γγ} = 0`,
//! assembled here from the frame decomposition `∂_A = λ_A^B T_B`.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MapField, SectionField};
use crate::heisenberg::{volume_density, HeisenbergModel, C64};
use crate::operators::{
    add_scaled, heisenberg_frame, pointwise_inner, Calculus, Coef, Components, Directional, FrameVector, Mutation, Pullback,
    PullbackOptions, Scheme, Subelliptic,
};
use crate::stencil::{FiniteDifference, Lattice};
use crate::target::TargetGeometry;

/// Step for differentiating the analytic metric; the entries are at most
/// quadratic in the coordinates, so centred differences are exact up to
/// rounding.
const METRIC_FD_STEP: f64 = 1e-3;

/// Uniform fibre grid `γ_k = 2πk / N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircleGrid {
    points: usize,
}

impl CircleGrid {
    pub fn new(points: usize) -> Result<Self> {
        if points < 3 {
            return Err(Error::GridTooSmall(format!("fibre grid needs at least 3 points, got {points}")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.points as f64
    }

    pub fn gamma(&self, k: usize) -> f64 {
        k as f64 * self.spacing()
    }
}

/// Metric, inverse and determinant at one point of `C(M)`.
#[derive(Debug, Clone)]
pub struct FeffermanMetric {
    pub metric: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub determinant: f64,
}

impl FeffermanMetric {
    /// Number of negative eigenvalues.
    pub fn negative_eigenvalues(&self) -> usize {
        SymmetricEigen::new(self.metric.clone()).eigenvalues.iter().filter(|e| **e < 0.0).count()
    }
}

/// Volume used for integrals over `C(M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiberMeasure {
    /// `√|det F| · (n+2)·n!`, the measure whose fibre integral is `2π Ψ`.
    #[default]
    Normalized,
    /// The bare Riemannian density `√|det F|`.
    Riemannian,
}

/// Fields on the product lattice, fibre axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedField {
    pub base: GridSpec,
    pub circle: CircleGrid,
    pub components: Vec<Vec<f64>>,
}

impl LiftedField {
    /// Largest spread of any component along any fibre.
    pub fn fiber_variation(&self) -> f64 {
        let nf = self.circle.points();
        let mut worst: f64 = 0.0;
        for c in &self.components {
            for fibre in c.chunks(nf) {
                let lo = fibre.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = fibre.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max(hi - lo);
            }
        }
        worst
    }
}

/// Residuals of the four inverse-metric identities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InverseResiduals {
    pub horizontal_block: f64,
    pub annihilates_contact: f64,
    pub fibre_block: f64,
    pub fibre_contact: f64,
    pub full_inverse: f64,
}

impl InverseResiduals {
    pub fn max(&self) -> f64 {
        [self.horizontal_block, self.annihilates_contact, self.fibre_block, self.fibre_contact, self.full_inverse]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReciprocalLeviResiduals {
    pub mixed: f64,
    pub unmixed: f64,
}

/// Vector fields on `C(M)` used by the connection-lift identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftedDirection {
    /// Horizontal lift `X̃_a↑`.
    Horizontal(usize),
    /// `T↑`.
    Reeb,
    /// `S = (n+2)/2 ∂_γ`.
    Fiber,
}

pub struct FeffermanSpace {
    model: HeisenbergModel,
    base: GridSpec,
    circle: CircleGrid,
    target: TargetGeometry,
    calc: Calculus,
    /// `F^{pq}` at each base point, row-major `(2n+2)²`.
    inverse: Vec<Vec<f64>>,
    /// `(1/√|det F|) ∂_p(√|det F| F^{pq})` at each base point.
    drift: Vec<Vec<f64>>,
    sqrt_det: Vec<f64>,
    timelike_norm: f64,
    mutation: Option<Mutation>,
}

impl FeffermanSpace {
    pub fn new(base: GridSpec, circle: CircleGrid, target: TargetGeometry, stencil_order: usize) -> Result<Self> {
        Self::with_mutation(base, circle, target, stencil_order, None)
    }

    pub fn with_mutation(
        base: GridSpec,
        circle: CircleGrid,
        target: TargetGeometry,
        stencil_order: usize,
        mutation: Option<Mutation>,
    ) -> Result<Self> {
        let model = HeisenbergModel::new(base.cr_dim())?;
        let m = model.dim();
        let base_lat = base.lattice();
        let mut dims = base.dims().to_vec();
        dims.push(circle.points());
        let mut lower: Vec<f64> = base.extent().iter().map(|l| -l).collect();
        lower.push(0.0);
        let mut spacing: Vec<f64> = (0..m).map(|k| base.spacing(k)).collect();
        spacing.push(circle.spacing());
        let mut periodic = vec![false; m];
        periodic.push(true);
        let lattice = Lattice::new(dims, lower, spacing, periodic);
        let fd = FiniteDifference::new(lattice, stencil_order)?;

        let mut space = Self {
            model,
            base: base.clone(),
            circle,
            target,
            calc: Calculus::new(fd.clone(), Vec::new()),
            inverse: Vec::new(),
            drift: Vec::new(),
            sqrt_det: Vec::new(),
            timelike_norm: 1.0,
            mutation,
        };

        let points: Vec<Vec<f64>> = (0..base.len()).map(|p| base_lat.point(p)).collect();
        let per_point: Vec<(Vec<f64>, Vec<f64>, f64)> = points
            .par_iter()
            .map(|x| {
                let f = space.metric_at_base(x);
                let drift = space.inverse_drift(x);
                (f.inverse.as_slice().to_vec(), drift, f.determinant.abs().sqrt())
            })
            .collect();
        // nalgebra stores column-major; the inverse is symmetric so the
        // flattened order is irrelevant.
        space.inverse = per_point.iter().map(|r| r.0.clone()).collect();
        space.drift = per_point.iter().map(|r| r.1.clone()).collect();
        space.sqrt_det = per_point.iter().map(|r| r.2).collect();

        let origin = vec![0.0; m + 1];
        let e_plus = space.lifted_vector(LiftedDirection::Reeb, &origin);
        let s = space.lifted_vector(LiftedDirection::Fiber, &origin);
        let tp: Vec<f64> = e_plus.iter().zip(&s).map(|(a, b)| a + b).collect();
        let f0 = space.metric(&origin);
        space.timelike_norm = quad(&f0.metric, &tp, &tp).abs().sqrt();

        space.calc = Calculus::new(fd, space.build_frame(&points));
        Ok(space)
    }

    pub fn model(&self) -> &HeisenbergModel {
        &self.model
    }

    pub fn base(&self) -> &GridSpec {
        &self.base
    }

    pub fn circle(&self) -> CircleGrid {
        self.circle
    }

    pub fn target(&self) -> &TargetGeometry {
        &self.target
    }

    pub fn calculus(&self) -> &Calculus {
        &self.calc
    }

    pub fn dim(&self) -> usize {
        self.model.dim() + 1
    }

    /// `|F(T↑ + S, T↑ + S)|^{1/2}` at the origin; the frame directions
    /// `T↑ ± S` are divided by it.
    pub fn timelike_norm(&self) -> f64 {
        self.timelike_norm
    }

    pub fn len(&self) -> usize {
        self.base.len() * self.circle.points()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `σ(∂_A)` on the flat model: the connection-form, Levi-form-derivative
    /// and scalar-curvature contributions all vanish.
    fn sigma_base(&self, _x: &[f64]) -> Vec<f64> {
        let connection_trace = 0.0;
        let levi_derivative = 0.0;
        let scalar_curvature = 0.0;
        let n = self.model.cr_dim() as f64;
        let th = self.model.contact_form(_x);
        th.iter()
            .map(|l0| (connection_trace - 0.5 * levi_derivative - scalar_curvature / (4.0 * (n + 1.0)) * l0) / (n + 2.0))
            .collect()
    }

    fn metric_at_base(&self, x: &[f64]) -> FeffermanMetric {
        let n = self.model.cr_dim();
        let m = self.model.dim();
        let lam = self.model.frame_decomposition(x).lambda;
        let g = self.model.levi_hermitian(x);
        let sigma = self.sigma_base(x);
        let mut f = DMatrix::zeros(m + 1, m + 1);
        for a in 0..m {
            for b in 0..m {
                let mut levi = C64::new(0.0, 0.0);
                for al in 0..n {
                    for be in 0..n {
                        let (ua, ub) = (1 + al, 1 + n + be);
                        levi += g[(al, be)] * (lam[(a, ua)] * lam[(b, ub)] + lam[(b, ua)] * lam[(a, ub)]);
                    }
                }
                let l0a = lam[(a, 0)].re;
                let l0b = lam[(b, 0)].re;
                f[(a, b)] = levi.re + l0a * sigma[b] + l0b * sigma[a];
            }
            let entry = lam[(a, 0)].re / (n as f64 + 2.0);
            f[(a, m)] = entry;
            f[(m, a)] = entry;
        }
        f[(m, m)] = 0.0;
        let inverse = f.clone().try_inverse().expect("Fefferman metric is non-degenerate");
        let determinant = f.determinant();
        FeffermanMetric { metric: f, inverse, determinant }
    }

    /// `F` at a point `(x, y, t, γ)`; independent of `γ`.
    pub fn metric(&self, p: &[f64]) -> FeffermanMetric {
        self.metric_at_base(&p[..self.model.dim()])
    }

    fn inverse_drift(&self, x: &[f64]) -> Vec<f64> {
        let m = self.model.dim();
        let d = m + 1;
        let mut drift = vec![0.0; d];
        for p in 0..m {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[p] += METRIC_FD_STEP;
            xm[p] -= METRIC_FD_STEP;
            let fp = self.metric_at_base(&xp);
            let fm = self.metric_at_base(&xm);
            let (sp, sm) = (fp.determinant.abs().sqrt(), fm.determinant.abs().sqrt());
            for q in 0..d {
                drift[q] += (sp * fp.inverse[(p, q)] - sm * fm.inverse[(p, q)]) / (2.0 * METRIC_FD_STEP);
            }
        }
        let s0 = self.metric_at_base(x).determinant.abs().sqrt();
        drift.iter().map(|v| v / s0).collect()
    }

    /// Coordinate components of `X̃_a↑`, `T↑` or `S` at `p`.
    pub fn lifted_vector(&self, dir: LiftedDirection, p: &[f64]) -> Vec<f64> {
        let m = self.model.dim();
        let mut v = vec![0.0; m + 1];
        match dir {
            LiftedDirection::Horizontal(a) => {
                let base = self.model.frame_vector(a, &p[..m]).expect("frame index in range");
                let sigma = self.sigma_base(&p[..m]);
                v[..m].copy_from_slice(&base);
                // X↑ = X − (n+2)σ(X) ∂_γ lies in Ker σ.
                let n2 = self.model.cr_dim() as f64 + 2.0;
                v[m] = -n2 * base.iter().zip(&sigma).map(|(a, b)| a * b).sum::<f64>();
            }
            LiftedDirection::Reeb => {
                v[self.model.t_axis()] = 1.0;
                let sigma = self.sigma_base(&p[..m]);
                v[m] = -(self.model.cr_dim() as f64 + 2.0) * sigma[self.model.t_axis()];
            }
            LiftedDirection::Fiber => {
                v[m] = (self.model.cr_dim() as f64 + 2.0) / 2.0;
            }
        }
        v
    }

    /// Levi-Civita Christoffels `Γ^r_{pq}` of `F` at `p`, `[r][p][q]`, from
    /// centred differences of the assembled metric.
    pub fn christoffel(&self, p: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut df = vec![DMatrix::zeros(d, d); d];
        for (axis, slot) in df.iter_mut().enumerate().take(d - 1) {
            let mut pp = p.to_vec();
            let mut pm = p.to_vec();
            pp[axis] += METRIC_FD_STEP;
            pm[axis] -= METRIC_FD_STEP;
            *slot = (self.metric(&pp).metric - self.metric(&pm).metric) / (2.0 * METRIC_FD_STEP);
        }
        let inv = self.metric(p).inverse;
        let mut out = vec![0.0; d * d * d];
        for r in 0..d {
            for a in 0..d {
                for b in 0..d {
                    let mut acc = 0.0;
                    for s in 0..d {
                        acc += inv[(r, s)] * (df[a][(s, b)] + df[b][(s, a)] - df[s][(a, b)]);
                    }
                    out[(r * d + a) * d + b] = 0.5 * acc;
                }
            }
        }
        out
    }

    /// `∇_X Y` at `p` with `X`, `Y` given as component functions.
    pub fn covariant_derivative(&self, x: &dyn Fn(&[f64]) -> Vec<f64>, y: &dyn Fn(&[f64]) -> Vec<f64>, p: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let xv = x(p);
        let gam = self.christoffel(p);
        let mut out = vec![0.0; d];
        for axis in 0..d {
            if xv[axis] == 0.0 {
                continue;
            }
            let mut pp = p.to_vec();
            let mut pm = p.to_vec();
            pp[axis] += METRIC_FD_STEP;
            pm[axis] -= METRIC_FD_STEP;
            let (yp, ym) = (y(&pp), y(&pm));
            for r in 0..d {
                out[r] += xv[axis] * (yp[r] - ym[r]) / (2.0 * METRIC_FD_STEP);
            }
        }
        let yv = y(p);
        for r in 0..d {
            for a in 0..d {
                for b in 0..d {
                    out[r] += gam[(r * d + a) * d + b] * xv[a] * yv[b];
                }
            }
        }
        out
    }

    pub fn lifted_covariant_derivative(&self, x: LiftedDirection, y: LiftedDirection, p: &[f64]) -> Vec<f64> {
        self.covariant_derivative(&|q| self.lifted_vector(x, q), &|q| self.lifted_vector(y, q), p)
    }

    pub fn inner(&self, p: &[f64], u: &[f64], v: &[f64]) -> f64 {
        quad(&self.metric(p).metric, u, v)
    }

    fn build_frame(&self, points: &[Vec<f64>]) -> Vec<FrameVector> {
        let m = self.model.dim();
        let nf = self.circle.points();
        let lift = |v: &[f64]| -> Arc<Vec<f64>> { Arc::new(v.iter().flat_map(|x| std::iter::repeat_n(*x, nf)).collect()) };
        type Components3<'s> = Box<dyn Fn(&[f64]) -> Vec<f64> + Sync + 's>;
        let mut frame: Vec<(Directional, f64, Components3<'_>)> = Vec::new();
        for (a, base_dir) in heisenberg_frame(&self.model, &self.base).into_iter().enumerate() {
            let terms = base_dir
                .terms()
                .iter()
                .map(|(axis, c)| {
                    let coef = match c {
                        Coef::Const(k) => Coef::Const(*k),
                        Coef::Field(v) => Coef::Field(lift(v)),
                    };
                    (*axis, coef)
                })
                .collect();
            frame.push((Directional::new(terms), 1.0, Box::new(move |q: &[f64]| self.lifted_vector(LiftedDirection::Horizontal(a), q))));
        }
        let norm = self.timelike_norm;
        let s_coef = (self.model.cr_dim() as f64 + 2.0) / 2.0;
        for sign in [1.0, -1.0] {
            let dir = Directional::new(vec![(self.model.t_axis(), Coef::Const(1.0 / norm)), (m, Coef::Const(sign * s_coef / norm))]);
            let comp = move |q: &[f64]| -> Vec<f64> {
                let t = self.lifted_vector(LiftedDirection::Reeb, q);
                let s = self.lifted_vector(LiftedDirection::Fiber, q);
                t.iter().zip(&s).map(|(a, b)| (a + sign * b) / norm).collect()
            };
            frame.push((dir, sign, Box::new(comp)));
        }
        frame
            .into_iter()
            .map(|(field, sign, comp)| {
                // ∇_E E from the metric's own Christoffels, kept only where
                // it is not at rounding level.
                let accel: Vec<Vec<f64>> = points
                    .par_iter()
                    .map(|x| {
                        let mut p = x.clone();
                        p.push(0.0);
                        self.covariant_derivative(&*comp, &*comp, &p)
                    })
                    .collect();
                let size = accel.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
                let self_derivative = if size > 1e-10 {
                    let terms = (0..=m)
                        .map(|axis| {
                            let vals: Vec<f64> = accel.iter().map(|v| v[axis]).collect();
                            (axis, Coef::Field(lift(&vals)))
                        })
                        .collect();
                    Some(Directional::new(terms))
                } else {
                    None
                };
                FrameVector { field, sign, self_derivative }
            })
            .collect()
    }

    /// Max residuals of the four inverse-metric identities at `points`.
    pub fn inverse_identities_check(&self, points: &[Vec<f64>]) -> InverseResiduals {
        let m = self.model.dim();
        let n2 = self.model.cr_dim() as f64 + 2.0;
        let mut r = InverseResiduals::default();
        for p in points {
            let f = self.metric(p);
            let lam0: Vec<f64> = self.model.frame_decomposition(&p[..m]).lambda.column(0).iter().map(|c| c.re).collect();
            let inv = &f.inverse;
            for a in 0..m {
                for c in 0..m {
                    let mut s = inv[(a, m)] * lam0[c] / n2;
                    for b in 0..m {
                        s += inv[(a, b)] * f.metric[(b, c)];
                    }
                    let delta = if a == c { 1.0 } else { 0.0 };
                    r.horizontal_block = r.horizontal_block.max((s - delta).abs());
                }
                let s: f64 = (0..m).map(|b| inv[(a, b)] * lam0[b]).sum();
                r.annihilates_contact = r.annihilates_contact.max(s.abs());
            }
            for c in 0..m {
                let mut s = lam0[c] / n2 * inv[(m, m)];
                for b in 0..m {
                    s += inv[(m, b)] * f.metric[(b, c)];
                }
                r.fibre_block = r.fibre_block.max(s.abs());
            }
            let s: f64 = (0..m).map(|b| inv[(m, b)] * lam0[b]).sum();
            r.fibre_contact = r.fibre_contact.max((s - n2).abs());
            let id = &f.metric * inv - DMatrix::<f64>::identity(m + 1, m + 1);
            r.full_inverse = r.full_inverse.max(id.amax());
        }
        r
    }

    /// Max residuals of `F^{AB}λ_A^α λ_B^β̄ = g^{αβ̄}` and `F^{AB}λ_A^α λ_B^β = 0`.
    pub fn reciprocal_levi_check(&self, points: &[Vec<f64>]) -> ReciprocalLeviResiduals {
        let n = self.model.cr_dim();
        let m = self.model.dim();
        let mut r = ReciprocalLeviResiduals::default();
        for p in points {
            let inv = self.metric(p).inverse;
            let lam = self.model.frame_decomposition(&p[..m]).lambda;
            let ginv = self.model.levi_hermitian_inverse(&p[..m]);
            for al in 0..n {
                for be in 0..n {
                    let mut mixed = C64::new(0.0, 0.0);
                    let mut unmixed = C64::new(0.0, 0.0);
                    for a in 0..m {
                        for b in 0..m {
                            let fab = C64::new(inv[(a, b)], 0.0);
                            mixed += fab * lam[(a, 1 + al)] * lam[(b, 1 + n + be)];
                            unmixed += fab * lam[(a, 1 + al)] * lam[(b, 1 + be)];
                        }
                    }
                    r.mixed = r.mixed.max((mixed - ginv[(al, be)]).norm());
                    r.unmixed = r.unmixed.max(unmixed.norm());
                }
            }
        }
        r
    }

    pub fn lift_values(&self, base_values: &[f64]) -> Vec<f64> {
        let nf = self.circle.points();
        base_values.iter().flat_map(|v| std::iter::repeat_n(*v, nf)).collect()
    }

    pub fn lift_components(&self, comps: &[Vec<f64>]) -> Components {
        comps.iter().map(|c| self.lift_values(c)).collect()
    }

    pub fn lift_map(&self, phi: &MapField) -> Result<LiftedField> {
        if phi.grid != self.base {
            return Err(Error::Mismatch("map lives on a different base grid".into()));
        }
        Ok(self.lifted(self.lift_components(&phi.components)))
    }

    pub fn lift_section(&self, v: &SectionField) -> Result<LiftedField> {
        if v.grid != self.base {
            return Err(Error::Mismatch("section lives on a different base grid".into()));
        }
        Ok(self.lifted(self.lift_components(&v.components)))
    }

    pub fn lifted(&self, components: Components) -> LiftedField {
        LiftedField { base: self.base.clone(), circle: self.circle, components }
    }

    fn check_lifted(&self, f: &LiftedField) -> Result<()> {
        if f.base != self.base || f.circle != self.circle || f.components.iter().any(|c| c.len() != self.len()) {
            return Err(Error::Mismatch("field does not live on this circle bundle grid".into()));
        }
        Ok(())
    }

    /// `□U = (1/√|F|) ∂_p(√|F| F^{pq} ∂_q U)`.
    pub fn wave_operator(&self, u: &[f64], scheme: Scheme) -> Vec<f64> {
        let d = self.dim();
        let nf = self.circle.points();
        let fd = self.calc.fd();
        let grads: Vec<Vec<f64>> = (0..d).map(|q| fd.d1(u, q)).collect();
        let active = |p: usize, q: usize| self.inverse.iter().any(|inv| inv[p * d + q] != 0.0);
        match scheme {
            Scheme::Nested => {
                let mut out = vec![0.0; u.len()];
                for p in 0..d {
                    let flux: Vec<f64> = (0..u.len())
                        .map(|i| {
                            let b = i / nf;
                            let inv = &self.inverse[b];
                            self.sqrt_det[b] * (0..d).map(|q| inv[p * d + q] * grads[q][i]).sum::<f64>()
                        })
                        .collect();
                    let div = fd.d1(&flux, p);
                    out.iter_mut().zip(&div).for_each(|(o, v)| *o += v);
                }
                out.iter_mut().enumerate().for_each(|(i, o)| *o /= self.sqrt_det[i / nf]);
                out
            }
            Scheme::Expanded => {
                let mut out = vec![0.0; u.len()];
                for p in 0..d {
                    for q in p..d {
                        if !active(p, q) {
                            continue;
                        }
                        let second = if p == q { fd.d2(u, p) } else { fd.d1(&grads[p], q) };
                        let mult = if p == q { 1.0 } else { 2.0 };
                        out.iter_mut().enumerate().for_each(|(i, o)| *o += mult * self.inverse[i / nf][p * d + q] * second[i]);
                    }
                }
                for q in 0..d {
                    out.iter_mut().enumerate().for_each(|(i, o)| *o += self.drift[i / nf][q] * grads[q][i]);
                }
                out
            }
        }
    }

    /// `τ(Φ)^i = □Φ^i + Γ^i_{jk}(Φ) ∂_pΦ^j ∂_qΦ^k F^{pq}`.
    pub fn tension(&self, phi: &[Vec<f64>], scheme: Scheme) -> Result<Components> {
        let d = self.dim();
        let nf = self.circle.points();
        let nu = self.target.nu();
        let fd = self.calc.fd();
        Pullback::new(&self.calc, &self.target, phi, PullbackOptions::default())?;
        let grads: Vec<Vec<Vec<f64>>> = phi.iter().map(|c| (0..d).map(|q| fd.d1(c, q)).collect()).collect();
        let mut out: Components = phi.iter().map(|c| self.wave_operator(c, scheme)).collect();
        let target = self.target;
        let quad_term: Vec<Vec<f64>> = (0..self.len())
            .into_par_iter()
            .map(|i| {
                let inv = &self.inverse[i / nf];
                let y: Vec<f64> = (0..nu).map(|j| phi[j][i]).collect();
                let mut gam = vec![0.0; nu.pow(3)];
                target.christoffel_into(&y, &mut gam);
                let mut contr = vec![0.0; nu * nu];
                for j in 0..nu {
                    for k in 0..nu {
                        let mut acc = 0.0;
                        for p in 0..d {
                            for q in 0..d {
                                let w = inv[p * d + q];
                                if w != 0.0 {
                                    acc += w * grads[j][p][i] * grads[k][q][i];
                                }
                            }
                        }
                        contr[j * nu + k] = acc;
                    }
                }
                (0..nu)
                    .map(|ii| {
                        let mut acc = 0.0;
                        for j in 0..nu {
                            for k in 0..nu {
                                acc += gam[(ii * nu + j) * nu + k] * contr[j * nu + k];
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        for (i, row) in quad_term.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out[c][i] += v;
            }
        }
        Ok(out)
    }

    /// Pullback bundle of a map on `C(M)`, carrying the signed frame
    /// `{X̃_a↑, (T↑ + S), (T↑ − S)}`.
    pub fn pullback<'a>(&'a self, phi: &'a [Vec<f64>]) -> Result<Pullback<'a>> {
        Pullback::new(&self.calc, &self.target, phi, PullbackOptions::default())
    }

    /// `□^Φ 𝔙` through the orthonormal frame.
    pub fn rough_laplacian(&self, phi: &LiftedField, v: &LiftedField, scheme: Scheme) -> Result<LiftedField> {
        self.check_lifted(phi)?;
        self.check_lifted(v)?;
        let pb = self.pullback(&phi.components)?;
        Ok(self.lifted(pb.rough_laplacian(&v.components, scheme)?))
    }

    /// `trace_F R^h(W, Φ_*·)Φ_*·`.
    pub fn curvature_trace(&self, phi: &LiftedField, w: &LiftedField) -> Result<LiftedField> {
        self.check_lifted(phi)?;
        self.check_lifted(w)?;
        let pb = self.pullback(&phi.components)?;
        Ok(self.lifted(pb.curvature_trace(&w.components)?))
    }

    /// `BH(Φ) = □^Φ τ(Φ) + trace_F R^h(τ(Φ), Φ_*·)Φ_*·`.
    pub fn bh(&self, phi: &LiftedField, scheme: Scheme) -> Result<LiftedField> {
        self.check_lifted(phi)?;
        let tau = self.tension(&phi.components, scheme)?;
        let pb = self.pullback(&phi.components)?;
        let mut out = pb.rough_laplacian(&tau, scheme)?;
        let curv = pb.curvature_trace(&tau)?;
        add_scaled(&mut out, &curv, 1.0);
        Ok(self.lifted(out))
    }

    /// Quadrature weights for `dvol` on the product lattice.
    pub fn volume_weights(&self, measure: FiberMeasure) -> Vec<f64> {
        let n = self.model.cr_dim();
        let fibre = match (measure, self.mutation) {
            (_, Some(Mutation::FiberWeight)) | (FiberMeasure::Riemannian, _) => 1.0,
            (FiberMeasure::Normalized, _) => (n as f64 + 2.0) * (1..=n).map(|k| k as f64).product::<f64>(),
        };
        let nf = self.circle.points();
        self.calc
            .fd()
            .lattice()
            .quadrature_weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.sqrt_det[i / nf] * fibre)
            .collect()
    }

    /// `𝔼₂(Φ) = ½ ∫ ‖τ(Φ)‖² dvol`.
    pub fn energy_e2(&self, phi: &LiftedField, measure: FiberMeasure, scheme: Scheme) -> Result<f64> {
        self.check_lifted(phi)?;
        let tau = self.tension(&phi.components, scheme)?;
        let dens = pointwise_inner(&self.target, &phi.components, &tau, &tau);
        let w = self.volume_weights(measure);
        Ok(0.5 * dens.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
    }

    /// `∫_{fibre} √|det F| dγ` over `c_n`, which the normalized measure makes `2π`.
    pub fn fiber_density_ratio(&self, measure: FiberMeasure) -> Result<f64> {
        let w = self.volume_weights(measure);
        let nf = self.circle.points();
        let centre = self.base.center_index();
        let fibre: f64 = (0..nf).map(|k| w[centre * nf + k]).sum::<f64>();
        let base_w = self.base.lattice().quadrature_weights()[centre];
        Ok(fibre / (base_w * volume_density(self.model.cr_dim())?))
    }
}

fn quad(m: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let d = u.len();
    let mut acc = 0.0;
    for a in 0..d {
        for b in 0..d {
            acc += m[(a, b)] * u[a] * v[b];
        }
    }
    acc
}

/// `𝔼₂(φ∘π) / E_{2,b}(φ)`, or `None` when `E_{2,b}` is below `1e−14`.
pub fn energy_lift_ratio(space: &FeffermanSpace, engine: &Subelliptic, phi: &MapField, measure: FiberMeasure) -> Result<Option<f64>> {
    let base = crate::variational::energy_e2b(engine, phi)?;
    if base.abs() < 1e-14 {
        return Ok(None);
    }
    let lifted = space.lift_map(phi)?;
    let total = space.energy_e2(&lifted, measure, Scheme::Nested)?;
    Ok(Some(total / base))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(n: usize) -> FeffermanSpace {
        let grid = GridSpec::uniform(n, 9, 1.0).unwrap();
        FeffermanSpace::new(grid, CircleGrid::new(6).unwrap(), TargetGeometry::flat(1).unwrap(), 4).unwrap()
    }

    #[test]
    fn metric_structure_at_origin() {
        for n in [1, 2] {
            let s = space(n);
            let p = vec![0.0; 2 * n + 2];
            let f = s.metric(&p);
            let m = 2 * n + 1;
            assert_eq!(f.metric[(m, m)], 0.0);
            assert!((f.metric[(m - 1, m)] - 1.0 / (n as f64 + 2.0)).abs() < 1e-14);
            assert_eq!(f.negative_eigenvalues(), 1);
            let expect = 4f64.powi(2 * n as i32) / (n as f64 + 2.0).powi(2);
            assert!((f.determinant.abs() - expect).abs() < 1e-9 * expect);
        }
    }

    #[test]
    fn timelike_pair_has_unit_length() {
        let s = space(1);
        assert!((s.timelike_norm() - 1.0).abs() < 1e-14);
        let p = [0.3, -0.2, 0.7, 1.0];
        let t = s.lifted_vector(LiftedDirection::Reeb, &p);
        let f = s.lifted_vector(LiftedDirection::Fiber, &p);
        let plus: Vec<f64> = t.iter().zip(&f).map(|(a, b)| a + b).collect();
        let minus: Vec<f64> = t.iter().zip(&f).map(|(a, b)| a - b).collect();
        assert!((s.inner(&p, &plus, &plus) - 1.0).abs() < 1e-13);
        assert!((s.inner(&p, &minus, &minus) + 1.0).abs() < 1e-13);
        assert!(s.inner(&p, &plus, &minus).abs() < 1e-13);
    }

    #[test]
    fn wave_operator_annihilates_constants() {
        let s = space(1);
        let u = vec![2.5; s.len()];
        for scheme in [Scheme::Nested, Scheme::Expanded] {
            assert!(s.wave_operator(&u, scheme).iter().all(|v| v.abs() < 1e-9));
        }
    }
}
