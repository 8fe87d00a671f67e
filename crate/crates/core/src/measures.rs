//! Absolutely continuous probability measures on a truncated 1D grid.
//!
//! A [`GridMeasure`] is a piecewise-constant density on the cells of a uniform
//! [`Grid1D`] covering `[-L, L]`. Integrals use the midpoint rule; the CDF is
//! the exact (piecewise-linear) CDF of the piecewise-constant density.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Unit-mass tolerance enforced by constructors.
pub const MASS_TOL: f64 = 1e-10;
/// Tolerance accepted when reading measures from disk.
pub const CSV_MASS_TOL: f64 = 1e-6;
/// Densities below this value are treated as out of support.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Largest Gaussian tail mass allowed outside the domain.
pub const TAIL_MASS_LIMIT: f64 = 1e-8;

/// Uniform cell-centered grid on `[-L, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    half_width: f64,
    n_cells: usize,
    h: f64,
}

impl Grid1D {
    pub const MIN_CELLS: usize = 8;

    pub fn new(half_width: f64, n_cells: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(LabError::DegenerateDomain(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        if n_cells < Self::MIN_CELLS {
            return Err(LabError::DegenerateDomain(format!(
                "need at least {} cells, got {n_cells}",
                Self::MIN_CELLS
            )));
        }
        Ok(Self {
            half_width,
            n_cells,
            h: 2.0 * half_width / n_cells as f64,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn left(&self) -> f64 {
        -self.half_width
    }

    pub fn right(&self) -> f64 {
        self.half_width
    }

    pub fn center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.h
    }

    /// Left edge of cell `i`; `edge(n)` is the right domain boundary.
    pub fn edge(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn cell_of(&self, x: f64) -> usize {
        let k = ((x + self.half_width) / self.h).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.n_cells - 1)
        }
    }

    pub fn same_as(&self, other: &Grid1D) -> bool {
        self.n_cells == other.n_cells
            && (self.half_width - other.half_width).abs() <= 1e-12 * self.half_width
    }

    pub fn ensure_same(&self, other: &Grid1D) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(LabError::GridMismatch(format!(
                "(L={}, n={}) vs (L={}, n={})",
                self.half_width, self.n_cells, other.half_width, other.n_cells
            )))
        }
    }

    /// Midpoint-rule integral of a function sampled at cell centers.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.h
    }
}

/// Gaussian with mean `mean` and variance parameter `sigma`, i.e. density
/// proportional to `exp(-(x - mean)^2 / (2 sigma))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: f64,
    pub sigma: f64,
}

impl GaussianSpec {
    pub fn new(mean: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mean.is_finite() {
            return Err(LabError::InvalidParameter(format!(
                "gaussian needs finite mean and sigma > 0, got ({mean}, {sigma})"
            )));
        }
        Ok(Self { mean, sigma })
    }

    pub fn centered(sigma: f64) -> Result<Self> {
        Self::new(0.0, sigma)
    }

    /// Mass of the continuum Gaussian outside `[-l, l]`.
    pub fn tail_mass(&self, l: f64) -> f64 {
        let s = (2.0 * self.sigma).sqrt();
        0.5 * libm::erfc((l - self.mean) / s) + 0.5 * libm::erfc((l + self.mean) / s)
    }

    pub fn density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        (-d * d / (2.0 * self.sigma)).exp() / (2.0 * std::f64::consts::PI * self.sigma).sqrt()
    }
}

/// Piecewise-constant probability density on a [`Grid1D`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    grid: Grid1D,
    density: Vec<f64>,
}

/// Outcome of reading a measure from CSV.
#[derive(Debug, Clone)]
pub struct MeasureRead {
    pub measure: GridMeasure,
    /// Mass found in the file before renormalization.
    pub file_mass: f64,
    /// Set when the file mass deviated from one by more than [`MASS_TOL`].
    pub renormalized: bool,
}

impl GridMeasure {
    /// Wraps a density that already has unit mass.
    pub fn new(grid: Grid1D, density: Vec<f64>) -> Result<Self> {
        validate_density(&grid, &density)?;
        let mass = grid.integrate(&density);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(LabError::InvalidDensity(format!(
                "mass {mass} differs from 1 by more than {MASS_TOL:e}"
            )));
        }
        Ok(Self { grid, density })
    }

    /// Wraps a density whose mass is checked against `tol` but not rescaled.
    pub fn with_mass_tolerance(grid: Grid1D, density: Vec<f64>, tol: f64) -> Result<Self> {
        validate_density(&grid, &density)?;
        let mass = grid.integrate(&density);
        if (mass - 1.0).abs() > tol {
            return Err(LabError::InvalidDensity(format!(
                "mass {mass} differs from 1 by more than {tol:e}"
            )));
        }
        Ok(Self { grid, density })
    }

    /// Normalizes nonnegative cell weights (interpreted as density values).
    pub fn from_unnormalized(grid: Grid1D, mut density: Vec<f64>) -> Result<Self> {
        validate_density(&grid, &density)?;
        let mass = grid.integrate(&density);
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(LabError::InvalidDensity(format!("cannot normalize mass {mass}")));
        }
        density.iter_mut().for_each(|d| *d /= mass);
        Ok(Self { grid, density })
    }

    /// Builds a density from its logarithm, shifting for stability.
    pub fn from_log_density(grid: Grid1D, log_density: &[f64]) -> Result<Self> {
        let max = log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(LabError::NonFinite("log density has no finite maximum".into()));
        }
        let weights = log_density.iter().map(|&l| (l - max).exp()).collect();
        Self::from_unnormalized(grid, weights)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn into_density(self) -> Vec<f64> {
        self.density
    }

    /// Mass carried by cell `i`.
    pub fn cell_mass(&self, i: usize) -> f64 {
        self.density[i] * self.grid.h
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.density)
    }

    /// Midpoint-rule integral of `f` against the measure.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let h = self.grid.h;
        self.density
            .iter()
            .enumerate()
            .map(|(i, &d)| if d > 0.0 { d * f(self.grid.center(i)) } else { 0.0 })
            .sum::<f64>()
            * h
    }

    /// Integral of a grid function (values at cell centers).
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        self.density
            .iter()
            .zip(values)
            .map(|(&d, &v)| if d > 0.0 { d * v } else { 0.0 })
            .sum::<f64>()
            * self.grid.h
    }

    /// `∫ |x|^p dμ`.
    pub fn moment(&self, p: f64) -> Result<f64> {
        if !(p > 0.0) || !p.is_finite() {
            return Err(LabError::InvalidParameter(format!("moment order must be positive, got {p}")));
        }
        Ok(self.integrate(|x| x.abs().powf(p)))
    }

    pub fn second_moment(&self) -> f64 {
        self.integrate(|x| x * x)
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.integrate(|x| (x - m) * (x - m))
    }

    /// CDF at the `n + 1` cell edges: `cdf[0] = 0`, `cdf[n] = 1`.
    pub fn cdf(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.density.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for &d in &self.density {
            acc += d * self.grid.h;
            out.push(acc);
        }
        // Unit mass holds up to MASS_TOL; pin the endpoint exactly.
        let total = acc;
        if total > 0.0 {
            out.iter_mut().for_each(|c| *c /= total);
        }
        out
    }

    /// CDF evaluated at an arbitrary point.
    pub fn cdf_at(&self, x: f64) -> f64 {
        if x <= self.grid.left() {
            return 0.0;
        }
        if x >= self.grid.right() {
            return 1.0;
        }
        let cdf = self.cdf();
        let i = self.grid.cell_of(x);
        let frac = (x - self.grid.edge(i)) / self.grid.h;
        cdf[i] + frac * (cdf[i + 1] - cdf[i])
    }

    /// Generalized inverse of the CDF.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        Quantile::new(self).eval(u)
    }

    /// Index range `[first, last]` of cells with density above the floor.
    pub fn support(&self) -> Option<(usize, usize)> {
        let first = self.density.iter().position(|&d| d > DENSITY_FLOOR)?;
        let last = self.density.iter().rposition(|&d| d > DENSITY_FLOOR)?;
        Some((first, last))
    }

    /// Convex combination `(1 - eps) self + eps other`.
    pub fn mix(&self, other: &GridMeasure, eps: f64) -> Result<GridMeasure> {
        self.grid.ensure_same(&other.grid)?;
        if !(0.0..=1.0).contains(&eps) {
            return Err(LabError::InvalidParameter(format!("mixing weight {eps} outside [0,1]")));
        }
        let density = self
            .density
            .iter()
            .zip(&other.density)
            .map(|(a, b)| (1.0 - eps) * a + eps * b)
            .collect();
        GridMeasure::from_unnormalized(self.grid, density)
    }

    /// Translation by an integer number of cells; mass pushed past the
    /// boundary is rejected.
    pub fn shift_cells(&self, k: isize) -> Result<GridMeasure> {
        let n = self.density.len() as isize;
        let mut out = vec![0.0; self.density.len()];
        for (i, &d) in self.density.iter().enumerate() {
            let j = i as isize + k;
            if (0..n).contains(&j) {
                out[j as usize] = d;
            } else if d > TAIL_MASS_LIMIT {
                return Err(LabError::DomainTooNarrow {
                    tail_mass: d * self.grid.h,
                    limit: TAIL_MASS_LIMIT,
                });
            }
        }
        GridMeasure::from_unnormalized(self.grid, out)
    }

    /// L¹ distance between densities.
    pub fn l1_distance(&self, other: &GridMeasure) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self
            .density
            .iter()
            .zip(&other.density)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.h)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "density"])?;
        for (i, d) in self.density.iter().enumerate() {
            w.write_record([format!("{:.17e}", self.grid.center(i)), format!("{d:.17e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `x,density` schema. The grid is inferred from the cell
    /// centers, which must be uniformly spaced and symmetric about zero.
    pub fn read_csv<R: Read>(reader: R) -> Result<MeasureRead> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "density" {
            return Err(LabError::InvalidDensity(format!(
                "expected header `x,density`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut xs = Vec::new();
        let mut ds = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| LabError::InvalidDensity(format!("bad number `{s}`: {e}")))
            };
            xs.push(parse(&rec[0])?);
            ds.push(parse(&rec[1])?);
        }
        if xs.len() < Grid1D::MIN_CELLS {
            return Err(LabError::DegenerateDomain(format!("only {} rows", xs.len())));
        }
        let n = xs.len();
        let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
        let half_width = xs[n - 1] + 0.5 * h;
        let grid = Grid1D::new(half_width, n)?;
        for (i, &x) in xs.iter().enumerate() {
            if (x - grid.center(i)).abs() > 1e-6 * grid.h() {
                return Err(LabError::GridMismatch(format!(
                    "row {i}: x = {x} is not on a uniform symmetric grid"
                )));
            }
        }
        validate_density(&grid, &ds)?;
        let file_mass = grid.integrate(&ds);
        if (file_mass - 1.0).abs() > CSV_MASS_TOL {
            return Err(LabError::InvalidDensity(format!(
                "file mass {file_mass} differs from 1 by more than {CSV_MASS_TOL:e}"
            )));
        }
        let renormalized = (file_mass - 1.0).abs() > MASS_TOL;
        let measure = GridMeasure::from_unnormalized(grid, ds)?;
        Ok(MeasureRead {
            measure,
            file_mass,
            renormalized,
        })
    }

    pub fn read_csv_file(path: &Path) -> Result<MeasureRead> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn validate_density(grid: &Grid1D, density: &[f64]) -> Result<()> {
    if density.len() != grid.n_cells() {
        return Err(LabError::GridMismatch(format!(
            "density has {} cells, grid has {}",
            density.len(),
            grid.n_cells()
        )));
    }
    if let Some((i, d)) = density
        .iter()
        .enumerate()
        .find(|(_, d)| !d.is_finite() || **d < 0.0)
    {
        return Err(LabError::InvalidDensity(format!("cell {i} has density {d}")));
    }
    Ok(())
}

/// Quantile function of a grid measure with the CDF precomputed.
#[derive(Debug, Clone)]
pub struct Quantile<'a> {
    measure: &'a GridMeasure,
    cdf: Vec<f64>,
}

impl<'a> Quantile<'a> {
    pub fn new(measure: &'a GridMeasure) -> Self {
        Self {
            cdf: measure.cdf(),
            measure,
        }
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(LabError::ProbabilityOutOfRange(u));
        }
        let grid = self.measure.grid();
        let density = self.measure.density();
        let (first, last) = self
            .measure
            .support()
            .ok_or_else(|| LabError::InvalidDensity("empty support".into()))?;
        if u <= self.cdf[first] {
            return Ok(grid.edge(first));
        }
        if u >= self.cdf[last + 1] {
            return Ok(grid.edge(last + 1));
        }
        // Largest edge k with cdf[k] <= u; cell k then carries mass.
        let k = self
            .cdf
            .partition_point(|&c| c <= u)
            .saturating_sub(1)
            .clamp(first, last);
        let cell_mass = self.cdf[k + 1] - self.cdf[k];
        if cell_mass <= 0.0 || density[k] <= 0.0 {
            return Ok(grid.edge(k));
        }
        let x = grid.edge(k) + grid.h() * (u - self.cdf[k]) / cell_mass;
        Ok(x.clamp(grid.edge(k), grid.edge(k + 1)))
    }
}

/// Gaussian with variance parameter `spec.sigma`, sampled at cell centers and
/// renormalized to unit discrete mass.
pub fn gaussian_on_grid(grid: &Grid1D, spec: &GaussianSpec) -> Result<GridMeasure> {
    let tail_mass = spec.tail_mass(grid.half_width());
    if tail_mass >= TAIL_MASS_LIMIT {
        return Err(LabError::DomainTooNarrow {
            tail_mass,
            limit: TAIL_MASS_LIMIT,
        });
    }
    let density = grid
        .centers()
        .into_iter()
        .map(|x| {
            let d = x - spec.mean;
            (-d * d / (2.0 * spec.sigma)).exp()
        })
        .collect();
    GridMeasure::from_unnormalized(*grid, density)
}

/// Uniform density on `[a, b]` with exact partial-cell overlaps.
pub fn uniform_on_grid(grid: &Grid1D, a: f64, b: f64) -> Result<GridMeasure> {
    if !(b > a) || a < grid.left() - 1e-12 || b > grid.right() + 1e-12 {
        return Err(LabError::InvalidParameter(format!(
            "uniform support [{a}, {b}] must be a nonempty subinterval of the domain"
        )));
    }
    let h = grid.h();
    let density = (0..grid.n_cells())
        .map(|i| {
            let lo = grid.edge(i).max(a);
            let hi = grid.edge(i + 1).min(b);
            let overlap = (hi - lo).max(0.0);
            // Snap near-full overlaps produced by rounding of aligned edges.
            let overlap = if (overlap - h).abs() < 1e-12 * h { h } else { overlap };
            overlap / h
        })
        .collect();
    GridMeasure::from_unnormalized(*grid, density)
}

/// All mass in the cell containing `x`.
pub fn point_mass_on_grid(grid: &Grid1D, x: f64) -> Result<GridMeasure> {
    let mut density = vec![0.0; grid.n_cells()];
    density[grid.cell_of(x)] = 1.0;
    GridMeasure::from_unnormalized(*grid, density)
}

pub fn make_grid(half_width: f64, n_cells: usize) -> Result<Grid1D> {
    Grid1D::new(half_width, n_cells)
}
