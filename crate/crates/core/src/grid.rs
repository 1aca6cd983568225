//! Uniform grids over a box in `H_n`, the field containers that live on them,
//! compactly supported bump weights, quadrature against `θ ∧ (dθ)^n`, and
//! the `hfield v1` text format.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::heisenberg::volume_density;
use crate::stencil::Lattice;

/// Box `[−L_A, L_A]` per axis with an odd number of points per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    n: usize,
    dims: Vec<usize>,
    extent: Vec<f64>,
}

pub const MIN_POINTS_PER_AXIS: usize = 9;

impl GridSpec {
    pub fn new(n: usize, dims: Vec<usize>, extent: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("CR dimension must be at least 1".into()));
        }
        let m = 2 * n + 1;
        if dims.len() != m || extent.len() != m {
            return Err(Error::InvalidDimension(format!(
                "grid needs {m} axes, got {} dims and {} extents",
                dims.len(),
                extent.len()
            )));
        }
        for (k, &d) in dims.iter().enumerate() {
            if d < MIN_POINTS_PER_AXIS || d % 2 == 0 {
                return Err(Error::GridTooSmall(format!("axis {k}: {d} points (need an odd count >= {MIN_POINTS_PER_AXIS})")));
            }
        }
        for (k, &l) in extent.iter().enumerate() {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!("axis {k}: extent {l}")));
            }
        }
        Ok(Self { n, dims, extent })
    }

    /// Same point count and half-width on every axis.
    pub fn uniform(n: usize, points: usize, extent: f64) -> Result<Self> {
        Self::new(n, vec![points; 2 * n + 1], vec![extent; 2 * n + 1])
    }

    pub fn cr_dim(&self) -> usize {
        self.n
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.extent[axis] / (self.dims[axis] - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::new(
            self.dims.clone(),
            self.extent.iter().map(|l| -l).collect(),
            (0..self.ndim()).map(|k| self.spacing(k)).collect(),
            vec![false; self.ndim()],
        )
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.lattice().point(idx)
    }

    /// Flat index of the box centre (the origin).
    pub fn center_index(&self) -> usize {
        let mid: Vec<usize> = self.dims.iter().map(|d| d / 2).collect();
        self.lattice().flat_index(&mid)
    }

    /// Flags for points with `|x_A| ≤ fraction·L_A` on every axis.
    pub fn interior_mask(&self, fraction: f64) -> Vec<bool> {
        let lat = self.lattice();
        (0..self.len())
            .map(|idx| (0..self.ndim()).all(|k| lat.coordinate(idx, k).abs() <= fraction * self.extent[k] + 1e-12))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Mismatch(format!("{} values for {} grid points", values.len(), grid.len())));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let lat = grid.lattice();
        let values = (0..grid.len()).map(|i| f(&lat.point(i))).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }
}

/// Components `φ^i = y^i ∘ φ` of a map into a single target chart.
#[derive(Debug, Clone, PartialEq)]
pub struct MapField {
    pub grid: GridSpec,
    pub components: Vec<Vec<f64>>,
}

/// Components `V^i` against the natural lift frame `X_i^φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionField {
    pub grid: GridSpec,
    pub components: Vec<Vec<f64>>,
}

fn check_components(grid: &GridSpec, comps: &[Vec<f64>]) -> Result<()> {
    if comps.is_empty() {
        return Err(Error::InvalidDimension("target dimension must be at least 1".into()));
    }
    for c in comps {
        if c.len() != grid.len() {
            return Err(Error::Mismatch(format!("component with {} values for {} grid points", c.len(), grid.len())));
        }
    }
    Ok(())
}

impl MapField {
    pub fn new(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        check_components(&grid, &components)?;
        Ok(Self { grid, components })
    }

    pub fn from_fn(grid: &GridSpec, nu: usize, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let lat = grid.lattice();
        let components = (0..nu).map(|i| (0..grid.len()).map(|p| f(&lat.point(p), i)).collect()).collect();
        Self { grid: grid.clone(), components }
    }

    pub fn constant(grid: &GridSpec, value: &[f64]) -> Self {
        Self { grid: grid.clone(), components: value.iter().map(|&v| vec![v; grid.len()]).collect() }
    }

    pub fn nu(&self) -> usize {
        self.components.len()
    }

    /// Largest Euclidean chart norm over the grid.
    pub fn max_chart_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|p| self.components.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

impl SectionField {
    pub fn new(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        check_components(&grid, &components)?;
        Ok(Self { grid, components })
    }

    pub fn from_fn(grid: &GridSpec, nu: usize, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let m = MapField::from_fn(grid, nu, f);
        Self { grid: m.grid, components: m.components }
    }

    pub fn zeros(grid: &GridSpec, nu: usize) -> Self {
        Self { grid: grid.clone(), components: vec![vec![0.0; grid.len()]; nu] }
    }

    pub fn nu(&self) -> usize {
        self.components.len()
    }
}

/// Tensor-product taper: 1 on `|x_A| ≤ inner·L_A`, 0 on `|x_A| ≥ outer·L_A`.
///
/// Between the two the weight is the smoothstep polynomial of degree
/// `2·smoothness + 1`, which is `C^smoothness` across both edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpProfile {
    pub inner: f64,
    pub outer: f64,
    pub smoothness: usize,
}

impl Default for BumpProfile {
    fn default() -> Self {
        Self { inner: 0.3, outer: 0.8, smoothness: 2 }
    }
}

impl BumpProfile {
    pub fn new(inner: f64, outer: f64, smoothness: usize) -> Result<Self> {
        let p = Self { inner, outer, smoothness };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner > 0.0 && self.inner < self.outer && self.outer < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "bump radii must satisfy 0 < inner < outer < 1 (got {} and {})",
                self.inner, self.outer
            )));
        }
        if self.smoothness == 0 || self.smoothness > 12 {
            return Err(Error::InvalidParameter(format!("bump smoothness {} (expected 1..=12)", self.smoothness)));
        }
        Ok(())
    }

    /// One-dimensional weight at normalized coordinate `r = |x| / L`.
    pub fn weight(&self, r: f64) -> f64 {
        let r = r.abs();
        if r <= self.inner {
            1.0
        } else if r >= self.outer {
            0.0
        } else {
            1.0 - smoothstep((r - self.inner) / (self.outer - self.inner), self.smoothness)
        }
    }
}

/// `S_k(u) = u^{k+1} Σ_{j=0}^{k} C(k+j, j) (1−u)^j`, the degree `2k+1` smoothstep.
pub fn smoothstep(u: f64, k: usize) -> f64 {
    let u = u.clamp(0.0, 1.0);
    let mut sum = 0.0;
    let mut binom = 1.0;
    for j in 0..=k {
        if j > 0 {
            binom = binom * (k + j) as f64 / j as f64;
        }
        sum += binom * (1.0 - u).powi(j as i32);
    }
    u.powi(k as i32 + 1) * sum
}

pub fn make_bump(grid: &GridSpec, profile: &BumpProfile) -> ScalarField {
    ScalarField::from_fn(grid, |p| {
        p.iter().zip(grid.extent()).map(|(x, l)| profile.weight(x / l)).product()
    })
}

/// `∫ f θ∧(dθ)^n` by product trapezoid quadrature.
pub fn integrate(f: &ScalarField) -> f64 {
    integrate_values(&f.grid, &f.values)
}

pub fn integrate_values(grid: &GridSpec, values: &[f64]) -> f64 {
    let w = grid.lattice().quadrature_weights();
    let c = volume_density(grid.cr_dim()).expect("grid has n >= 1");
    c * w.iter().zip(values).map(|(a, b)| a * b).sum::<f64>()
}

/// Serializes components in `hfield v1` (one row per grid point).
pub fn write_hfield(path: &Path, grid: &GridSpec, components: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&hfield_header(grid, components.len()));
    out.push('\n');
    for p in 0..grid.len() {
        let row: Vec<String> = components.iter().map(|c| format!("{:.16e}", c[p])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

fn hfield_header(grid: &GridSpec, nu: usize) -> String {
    let dims: Vec<String> = grid.dims().iter().map(|d| d.to_string()).collect();
    let mut ext = String::new();
    for (k, l) in grid.extent().iter().enumerate() {
        if k > 0 {
            ext.push(',');
        }
        let _ = write!(ext, "{l:?}");
    }
    format!("hfield v1 n={} nu={} dims={} extent={}", grid.cr_dim(), nu, dims.join(","), ext)
}

/// Reads an `hfield v1` file back into a grid and its components.
pub fn read_hfield(path: &Path) -> Result<(GridSpec, Vec<Vec<f64>>)> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty hfield file".into()))??;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("hfield") || tokens.next() != Some("v1") {
        return Err(Error::Parse("missing `hfield v1` header".into()));
    }
    let (mut n, mut nu, mut dims, mut extent) = (None, None, None, None);
    for tok in tokens {
        let (key, value) = tok.split_once('=').ok_or_else(|| Error::Parse(format!("bad header token `{tok}`")))?;
        let bad = |_| Error::Parse(format!("bad value for `{key}`"));
        match key {
            "n" => n = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "nu" => nu = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "dims" => {
                dims = Some(
                    value
                        .split(',')
                        .map(|s| s.parse::<usize>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "extent" => {
                extent = Some(
                    value
                        .split(',')
                        .map(|s| s.parse::<f64>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            other => return Err(Error::Parse(format!("unknown header key `{other}`"))),
        }
    }
    let missing = |k: &str| Error::Parse(format!("header lacks `{k}`"));
    let grid = GridSpec::new(n.ok_or_else(|| missing("n"))?, dims.ok_or_else(|| missing("dims"))?, extent.ok_or_else(|| missing("extent"))?)?;
    let nu = nu.ok_or_else(|| missing("nu"))?;
    let mut comps = vec![Vec::with_capacity(grid.len()); nu];
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != nu {
            return Err(Error::Parse(format!("row {row}: {} values, expected {nu}", vals.len())));
        }
        for (c, v) in comps.iter_mut().zip(vals) {
            c.push(v.parse::<f64>().map_err(|_| Error::Parse(format!("row {row}: bad number `{v}`")))?);
        }
    }
    if comps.iter().any(|c| c.len() != grid.len()) {
        return Err(Error::Parse(format!("expected {} rows", grid.len())));
    }
    Ok((grid, comps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(GridSpec::uniform(1, 9, 1.0).is_ok());
        assert!(matches!(GridSpec::uniform(1, 7, 1.0), Err(Error::GridTooSmall(_))));
        assert!(matches!(GridSpec::uniform(1, 10, 1.0), Err(Error::GridTooSmall(_))));
        assert!(GridSpec::uniform(1, 9, 0.0).is_err());
        assert!(GridSpec::new(1, vec![9, 9], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn unit_integrand_gives_box_volume_times_density() {
        let g = GridSpec::uniform(1, 9, 1.0).unwrap();
        let v = integrate(&ScalarField::constant(&g, 1.0));
        assert!((v - 32.0).abs() < 1e-12);
    }

    #[test]
    fn bump_examples() {
        let g = GridSpec::uniform(1, 17, 1.0).unwrap();
        let b = make_bump(&g, &BumpProfile::default());
        assert_eq!(b.values[g.center_index()], 1.0);
        assert!(b.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(b.values[0], 0.0);
    }

    #[test]
    fn smoothstep_is_monotone_with_flat_ends() {
        for k in 1..6 {
            assert_eq!(smoothstep(0.0, k), 0.0);
            assert!((smoothstep(1.0, k) - 1.0).abs() < 1e-14);
            assert!((smoothstep(0.5, k) - 0.5).abs() < 1e-14);
            let mut prev = 0.0;
            for i in 1..=100 {
                let s = smoothstep(i as f64 / 100.0, k);
                assert!(s >= prev);
                prev = s;
            }
        }
    }

    #[test]
    fn odd_integrand_vanishes() {
        let g = GridSpec::uniform(1, 17, 1.0).unwrap();
        let b = make_bump(&g, &BumpProfile::default());
        let f = ScalarField::from_fn(&g, |p| p[0]);
        let prod: Vec<f64> = f.values.iter().zip(&b.values).map(|(a, b)| a * b).collect();
        assert!(integrate_values(&g, &prod).abs() < 1e-14);
    }

    #[test]
    fn hfield_round_trip() {
        let g = GridSpec::new(1, vec![9, 11, 9], vec![1.0, 0.5, 2.0]).unwrap();
        let m = MapField::from_fn(&g, 2, |p, i| (p[0] + 0.1 * i as f64).sin() / 3.0 + p[2]);
        let dir = std::env::temp_dir().join(format!("hfield_rt_{}", std::process::id()));
        write_hfield(&dir, &g, &m.components).unwrap();
        let (g2, c2) = read_hfield(&dir).unwrap();
        std::fs::remove_file(&dir).ok();
        assert_eq!(g, g2);
        assert_eq!(m.components, c2);
    }
}
