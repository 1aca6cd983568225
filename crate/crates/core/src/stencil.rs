//! Finite-difference stencils on uniform tensor-product lattices.
//!
//! Weights come from Fornberg's recursion, so any stencil order and any
//! (possibly one-sided) node layout is handled by the same code path.
//! Interior points use centred stencils; near a non-periodic boundary the
//! window slides inward and keeps the same formal order.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Weights for derivatives `0..=max_deriv` at `x0` from the nodes `xs`.
///
/// Returns `w[k][j]`, the weight of node `j` in the `k`-th derivative.
pub fn fornberg_weights(x0: f64, xs: &[f64], max_deriv: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_deriv + 1];
    if n == 0 {
        return c;
    }
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Uniform lattice: axis-major storage, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dims: Vec<usize>,
    lower: Vec<f64>,
    spacing: Vec<f64>,
    periodic: Vec<bool>,
    strides: Vec<usize>,
}

impl Lattice {
    pub fn new(dims: Vec<usize>, lower: Vec<f64>, spacing: Vec<f64>, periodic: Vec<bool>) -> Self {
        assert!(dims.len() == lower.len() && dims.len() == spacing.len() && dims.len() == periodic.len());
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        Self { dims, lower, spacing, periodic, strides }
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.periodic[axis]
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of flat index `idx` along `axis`.
    #[inline]
    pub fn index_along(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.dims[axis]
    }

    #[inline]
    pub fn coordinate(&self, idx: usize, axis: usize) -> f64 {
        self.lower[axis] + self.index_along(idx, axis) as f64 * self.spacing[axis]
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        (0..self.ndim()).map(|k| self.coordinate(idx, k)).collect()
    }

    /// Flat index from a multi-index.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Product trapezoid weights (uniform on periodic axes).
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = (0..self.ndim())
            .map(|k| {
                let n = self.dims[k];
                let h = self.spacing[k];
                (0..n)
                    .map(|i| {
                        if !self.periodic[k] && (i == 0 || i == n - 1) {
                            0.5 * h
                        } else {
                            h
                        }
                    })
                    .collect()
            })
            .collect();
        (0..self.len())
            .map(|idx| (0..self.ndim()).map(|k| per_axis[k][self.index_along(idx, k)]).product())
            .collect()
    }
}

/// Stencil for every position along one axis: `(node position, weight)` pairs.
#[derive(Debug, Clone)]
struct AxisTable {
    rows: Vec<Vec<(usize, f64)>>,
}

impl AxisTable {
    fn build(n: usize, h: f64, periodic: bool, order: usize, deriv: usize) -> AxisTable {
        let radius = order / 2;
        let width = if deriv == 1 { order + 1 } else { order + 2 };
        let scale = h.powi(deriv as i32);
        let rows = (0..n)
            .map(|i| {
                let offsets: Vec<isize> = if periodic || (i >= radius && i + radius < n) {
                    (-(radius as isize)..=radius as isize).collect()
                } else {
                    let start = (i as isize - radius as isize).clamp(0, (n - width) as isize);
                    (start..start + width as isize).map(|j| j - i as isize).collect()
                };
                let xs: Vec<f64> = offsets.iter().map(|&o| o as f64).collect();
                let w = fornberg_weights(0.0, &xs, deriv);
                offsets
                    .iter()
                    .zip(&w[deriv])
                    .map(|(&o, &wt)| ((i as isize + o).rem_euclid(n as isize) as usize, wt / scale))
                    .collect()
            })
            .collect();
        AxisTable { rows }
    }
}

/// First and second derivative operators of a fixed even order on a lattice.
#[derive(Debug, Clone)]
pub struct FiniteDifference {
    lattice: Lattice,
    order: usize,
    first: Vec<AxisTable>,
    second: Vec<AxisTable>,
}

impl FiniteDifference {
    /// `order` must be 2, 4 or 6.
    pub fn new(lattice: Lattice, order: usize) -> Result<Self> {
        if !matches!(order, 2 | 4 | 6) {
            return Err(Error::InvalidParameter(format!("stencil order {order} (expected 2, 4 or 6)")));
        }
        for k in 0..lattice.ndim() {
            let need = if lattice.is_periodic(k) { order + 1 } else { order + 2 };
            if lattice.dims()[k] < need {
                return Err(Error::GridTooSmall(format!(
                    "axis {k} has {} points, order-{order} stencils need {need}",
                    lattice.dims()[k]
                )));
            }
        }
        let first = (0..lattice.ndim())
            .map(|k| AxisTable::build(lattice.dims()[k], lattice.spacing()[k], lattice.is_periodic(k), order, 1))
            .collect();
        let second = (0..lattice.ndim())
            .map(|k| AxisTable::build(lattice.dims()[k], lattice.spacing()[k], lattice.is_periodic(k), order, 2))
            .collect();
        Ok(Self { lattice, order, first, second })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Stencil radius of the centred first-derivative stencil.
    pub fn radius(&self) -> usize {
        self.order / 2
    }

    fn apply(&self, table: &AxisTable, f: &[f64], axis: usize) -> Vec<f64> {
        assert_eq!(f.len(), self.lattice.len(), "field length does not match lattice");
        let stride = self.lattice.strides()[axis];
        let n = self.lattice.dims()[axis];
        let mut out = vec![0.0; f.len()];
        out.par_iter_mut().enumerate().for_each(|(idx, o)| {
            let i = (idx / stride) % n;
            let base = idx - i * stride;
            let mut acc = 0.0;
            for &(j, w) in &table.rows[i] {
                acc += w * f[base + j * stride];
            }
            *o = acc;
        });
        out
    }

    /// `∂f/∂u^axis`.
    pub fn d1(&self, f: &[f64], axis: usize) -> Vec<f64> {
        self.apply(&self.first[axis], f, axis)
    }

    /// `∂²f/∂(u^axis)²` with a direct second-difference stencil.
    pub fn d2(&self, f: &[f64], axis: usize) -> Vec<f64> {
        self.apply(&self.second[axis], f, axis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_reproduces_classic_central_weights() {
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let d1 = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        let d2 = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
        for j in 0..5 {
            assert!((w[1][j] - d1[j]).abs() < 1e-14);
            assert!((w[2][j] - d2[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn one_sided_stencils_are_exact_for_quartics() {
        let lat = Lattice::new(vec![11], vec![-1.0], vec![0.2], vec![false]);
        let fd = FiniteDifference::new(lat.clone(), 4).unwrap();
        let f: Vec<f64> = (0..11).map(|i| lat.coordinate(i, 0).powi(4)).collect();
        let d = fd.d1(&f, 0);
        let dd = fd.d2(&f, 0);
        for i in 0..11 {
            let x = lat.coordinate(i, 0);
            assert!((d[i] - 4.0 * x.powi(3)).abs() < 1e-11, "d1 at {i}");
            assert!((dd[i] - 12.0 * x * x).abs() < 1e-9, "d2 at {i}");
        }
    }

    #[test]
    fn periodic_axis_wraps() {
        let n = 16;
        let h = std::f64::consts::TAU / n as f64;
        let lat = Lattice::new(vec![n], vec![0.0], vec![h], vec![true]);
        let fd = FiniteDifference::new(lat.clone(), 4).unwrap();
        let f: Vec<f64> = (0..n).map(|i| lat.coordinate(i, 0).sin()).collect();
        let d = fd.d1(&f, 0);
        for i in 0..n {
            assert!((d[i] - lat.coordinate(i, 0).cos()).abs() < 2e-3);
        }
    }

    #[test]
    fn rejects_small_grids_and_bad_orders() {
        let lat = Lattice::new(vec![5], vec![0.0], vec![1.0], vec![false]);
        assert!(matches!(FiniteDifference::new(lat.clone(), 4), Err(Error::GridTooSmall(_))));
        assert!(matches!(FiniteDifference::new(lat, 3), Err(Error::InvalidParameter(_))));
    }
}
