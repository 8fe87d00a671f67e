//! Exact optimal transport between grid measures on the line.
//!
//! Both quantile functions are piecewise linear in `u`, so merging their
//! breakpoints yields the monotone coupling as a finite list of segments on
//! which every quantity (distances, the monotone map, the potential) is
//! integrated in closed form.

use serde::{Serialize, Serializer};

use crate::error::{LabError, Result};
use crate::measures::{Grid1D, GridMeasure, DENSITY_FLOOR};

/// Piece of the monotone coupling: probability levels `[u0, u1]` are carried
/// from source cell `src` (positions `x0..x1`) to target cell `tgt`
/// (positions `y0..y1`), both linearly in `u`. `mass` is accumulated from
/// the nearer end of the distribution, so it stays accurate in the upper
/// tail where `u1 - u0` underflows against 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingSegment {
    pub u0: f64,
    pub u1: f64,
    pub mass: f64,
    pub src: usize,
    pub tgt: usize,
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl CouplingSegment {
    pub fn mass(&self) -> f64 {
        self.mass
    }

    fn frac(&self, u: f64) -> f64 {
        let du = self.u1 - self.u0;
        if du > 0.0 {
            ((u - self.u0) / du).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    fn source_at(&self, u: f64) -> f64 {
        lerp(self.x0, self.x1, self.frac(u))
    }

    fn target_at(&self, u: f64) -> f64 {
        lerp(self.y0, self.y1, self.frac(u))
    }

    /// Target position matched to source position `x` inside the piece.
    fn target_at_x(&self, x: f64) -> f64 {
        let len = self.x1 - self.x0;
        if len > 0.0 {
            lerp(self.y0, self.y1, ((x - self.x0) / len).clamp(0.0, 1.0))
        } else {
            0.5 * (self.y0 + self.y1)
        }
    }
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

/// Cumulative cell masses of `mu` in traversal order (left to right, or
/// right to left when `reverse`), normalized to end at 1.
fn levels(mu: &GridMeasure, reverse: bool) -> Vec<f64> {
    let n = mu.grid().n_cells();
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for k in 0..n {
        acc += mu.cell_mass(if reverse { n - 1 - k } else { k });
        out.push(acc);
    }
    out.iter_mut().for_each(|v| *v /= acc);
    out
}

type Piece = (f64, f64, usize, usize, f64, f64, f64, f64);

/// Merges the two level sequences up to level 1/2, walking from one end of
/// the line. Returns `(l0, l1, src, tgt, x(l0), x(l1), y(l0), y(l1))` with
/// grid cell indices.
fn sweep(grid: &Grid1D, mu: &GridMeasure, nu: &GridMeasure, reverse: bool) -> Vec<Piece> {
    const HALF: f64 = 0.5;
    let n = grid.n_cells();
    let h = grid.h();
    let cell = |k: usize| if reverse { n - 1 - k } else { k };
    let (fs, ft) = (levels(mu, reverse), levels(nu, reverse));
    let (ds, dt) = (mu.density(), nu.density());
    let pos = |f: &[f64], k: usize, level: f64| {
        let frac = ((level - f[k]) / (f[k + 1] - f[k])).clamp(0.0, 1.0);
        if reverse {
            grid.edge(n - k) - h * frac
        } else {
            grid.edge(k) + h * frac
        }
    };
    let mut out = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    while u < HALF {
        while i < n && (ds[cell(i)] <= DENSITY_FLOOR || fs[i + 1] <= u) {
            i += 1;
        }
        while j < n && (dt[cell(j)] <= DENSITY_FLOOR || ft[j + 1] <= u) {
            j += 1;
        }
        if i >= n || j >= n {
            break;
        }
        let u_end = fs[i + 1].min(ft[j + 1]).min(HALF);
        if u_end > u {
            out.push((
                u,
                u_end,
                cell(i),
                cell(j),
                pos(&fs, i, u),
                pos(&fs, i, u_end),
                pos(&ft, j, u),
                pos(&ft, j, u_end),
            ));
        }
        u = u_end;
    }
    out
}

/// Monotone (quantile) coupling between two measures on a common grid.
#[derive(Debug, Clone)]
pub struct MonotoneCoupling {
    grid: Grid1D,
    segments: Vec<CouplingSegment>,
}

impl MonotoneCoupling {
    pub fn new(mu: &GridMeasure, nu: &GridMeasure) -> Result<Self> {
        mu.grid().ensure_same(nu.grid())?;
        let grid = *mu.grid();
        // Lower half from the left end, upper half from the right end, so
        // both tails are resolved to full relative precision.
        let lower = sweep(&grid, mu, nu, false);
        let upper = sweep(&grid, mu, nu, true);
        let mut segments = Vec::with_capacity(lower.len() + upper.len());
        segments.extend(lower.into_iter().map(|(l0, l1, src, tgt, x0, x1, y0, y1)| CouplingSegment {
            u0: l0,
            u1: l1,
            mass: l1 - l0,
            src,
            tgt,
            x0,
            x1,
            y0,
            y1,
        }));
        segments.extend(upper.into_iter().rev().map(|(l0, l1, src, tgt, x0, x1, y0, y1)| {
            CouplingSegment {
                u0: 1.0 - l1,
                u1: 1.0 - l0,
                mass: l1 - l0,
                src,
                tgt,
                x0: x1,
                x1: x0,
                y0: y1,
                y1: y0,
            }
        }));
        Ok(Self { grid, segments })
    }

    pub fn segments(&self) -> &[CouplingSegment] {
        &self.segments
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// `∫₀¹ |Q_μ(u) - Q_ν(u)|^p du` for `p ∈ {1, 2}`, exact for the
    /// piecewise-linear quantile functions.
    pub fn cost(&self, p: u8) -> f64 {
        self.segments
            .iter()
            .map(|s| {
                let (a, b) = (s.x0 - s.y0, s.x1 - s.y1);
                let du = s.mass;
                match p {
                    1 => {
                        if a * b >= 0.0 {
                            0.5 * du * (a.abs() + b.abs())
                        } else {
                            0.5 * du * (a * a + b * b) / (a.abs() + b.abs())
                        }
                    }
                    _ => du * (a * a + a * b + b * b) / 3.0,
                }
            })
            .sum()
    }

    /// Segment containing level `u` (binary search).
    fn segment_at(&self, u: f64) -> &CouplingSegment {
        let k = self.segments.partition_point(|s| s.u1 < u);
        &self.segments[k.min(self.segments.len() - 1)]
    }

    /// Target cell masses reproduced by the coupling.
    pub fn target_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_cells()];
        for s in &self.segments {
            out[s.tgt] += s.mass();
        }
        out
    }

    /// Source cell masses reproduced by the coupling.
    pub fn source_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_cells()];
        for s in &self.segments {
            out[s.src] += s.mass();
        }
        out
    }
}

/// `d_p(μ, ν)` for `p ∈ {1, 2}` by the quantile formula.
pub fn wasserstein_p(mu: &GridMeasure, nu: &GridMeasure, p: u8) -> Result<f64> {
    if p != 1 && p != 2 {
        return Err(LabError::InvalidParameter(format!("p must be 1 or 2, got {p}")));
    }
    let cost = MonotoneCoupling::new(mu, nu)?.cost(p);
    Ok(if p == 1 { cost } else { cost.max(0.0).sqrt() })
}

pub fn wasserstein_1(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    wasserstein_p(mu, nu, 1)
}

pub fn wasserstein_2(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    wasserstein_p(mu, nu, 2)
}

/// Monotone transport map `T = F_ν⁻¹ ∘ F_μ` between grid measures.
#[derive(Debug, Clone)]
pub struct TransportMap1D {
    source: GridMeasure,
    target: GridMeasure,
    coupling: MonotoneCoupling,
    /// `T` at cell centers; NaN outside the source support hull.
    values: Vec<f64>,
    support: (usize, usize),
}

impl TransportMap1D {
    pub fn source(&self) -> &GridMeasure {
        &self.source
    }

    pub fn target(&self) -> &GridMeasure {
        &self.target
    }

    pub fn coupling(&self) -> &MonotoneCoupling {
        &self.coupling
    }

    /// Map values at cell centers, NaN outside the support hull.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cell index range of the source support hull.
    pub fn support(&self) -> (usize, usize) {
        self.support
    }

    /// Map values with the convex-potential extension outside the support
    /// hull (constant at the extreme target positions).
    pub fn extended_values(&self) -> Vec<f64> {
        let (first, last) = self.support;
        let left = self.coupling.segments.first().map(|s| s.y0).unwrap_or(0.0);
        let right = self.coupling.segments.last().map(|s| s.y1).unwrap_or(0.0);
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if i < first {
                    left
                } else if i > last {
                    right
                } else {
                    v
                }
            })
            .collect()
    }

    /// `∫ |x - T(x)|² dμ`, integrated exactly along the coupling pieces.
    pub fn transport_cost(&self) -> f64 {
        self.coupling
            .segments
            .iter()
            .map(|s| {
                // In x, the displacement is linear across the piece and the
                // source density is constant, so the integral is Simpson-exact.
                let w = self.source.density()[s.src] * (s.x1 - s.x0);
                let (a, b) = (s.x0 - s.y0, s.x1 - s.y1);
                w * (a * a + a * b + b * b) / 3.0
            })
            .sum()
    }
}

/// The monotone map pushing `mu` onto `nu`.
pub fn brenier_map(mu: &GridMeasure, nu: &GridMeasure) -> Result<TransportMap1D> {
    mu.grid().ensure_same(nu.grid())?;
    let (first, last) = mu
        .support()
        .ok_or_else(|| LabError::NonAcSource("source has empty support".into()))?;
    if let Some(k) = (first..=last).find(|&k| mu.density()[k] <= DENSITY_FLOOR) {
        return Err(LabError::NonAcSource(format!(
            "cell {k} at x = {} is empty inside the support hull",
            mu.grid().center(k)
        )));
    }
    let coupling = MonotoneCoupling::new(mu, nu)?;
    let grid = *mu.grid();
    let mut values = vec![f64::NAN; grid.n_cells()];
    // Pieces are ordered by source position; evaluate at each cell center.
    let segs = &coupling.segments;
    let mut k = 0;
    for (i, v) in values.iter_mut().enumerate().take(last + 1).skip(first) {
        let c = grid.center(i);
        while k + 1 < segs.len() && (segs[k].src < i || (segs[k].src == i && segs[k].x1 < c)) {
            k += 1;
        }
        *v = segs[k].target_at_x(c);
    }
    Ok(TransportMap1D {
        source: mu.clone(),
        target: nu.clone(),
        coupling,
        values,
        support: (first, last),
    })
}

/// Potential `φ(x) = ∫_{-L}^x 2(s - T(s)) ds` at cell centers, pinned by
/// `φ(-L) = 0`; its derivative is the Wasserstein gradient of `d₂²(·, ν)`
/// and, as a grid function, it is the flat derivative of `d₂²(·, ν)` at `μ`.
pub fn kantorovich_potential(mu: &GridMeasure, nu: &GridMeasure) -> Result<Vec<f64>> {
    let map = brenier_map(mu, nu)?;
    Ok(potential_from_map(&map))
}

pub fn potential_from_map(map: &TransportMap1D) -> Vec<f64> {
    let grid = map.coupling.grid;
    let segs = &map.coupling.segments;
    // Pieces (xa, xb, Ta, Tb) covering [-L, L] in increasing x.
    let mut pieces: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(segs.len() + 2);
    let t_left = segs.first().map(|s| s.y0).unwrap_or(0.0);
    let t_right = segs.last().map(|s| s.y1).unwrap_or(0.0);
    let x_start = segs.first().map(|s| s.x0).unwrap_or(grid.left());
    let x_end = segs.last().map(|s| s.x1).unwrap_or(grid.right());
    if x_start > grid.left() {
        pieces.push((grid.left(), x_start, t_left, t_left));
    }
    pieces.extend(segs.iter().filter(|s| s.x1 > s.x0).map(|s| (s.x0, s.x1, s.y0, s.y1)));
    if x_end < grid.right() {
        pieces.push((x_end, grid.right(), t_right, t_right));
    }

    let partial = |(xa, xb, ta, tb): (f64, f64, f64, f64), c: f64| {
        let len = xb - xa;
        let d = c - xa;
        let slope = if len > 0.0 { (tb - ta) / len } else { 0.0 };
        (c * c - xa * xa) - 2.0 * (ta * d + 0.5 * slope * d * d)
    };

    let mut out = Vec::with_capacity(grid.n_cells());
    let mut acc = 0.0;
    let mut k = 0;
    for i in 0..grid.n_cells() {
        let c = grid.center(i);
        while k < pieces.len() && pieces[k].1 <= c {
            acc += partial(pieces[k], pieces[k].1);
            k += 1;
        }
        let extra = if k < pieces.len() { partial(pieces[k], c) } else { 0.0 };
        out.push(acc + extra);
    }
    out
}

/// Gridded McCann interpolant `((1-t) id + t T)_# μ` and its Eulerian
/// velocity at cell centers.
fn interpolant(coupling: &MonotoneCoupling, t: f64) -> (Vec<f64>, Vec<f64>) {
    let grid = coupling.grid;
    let n = grid.n_cells();
    let segs = &coupling.segments;
    let pos = |s: &CouplingSegment, u: f64| lerp(s.source_at(u), s.target_at(u), t);

    // CDF of the interpolant at the n + 1 edges.
    let mut cdf = vec![0.0; n + 1];
    let mut k = 0;
    for (e, c) in cdf.iter_mut().enumerate() {
        let x = grid.edge(e);
        while k < segs.len() && pos(&segs[k], segs[k].u1) <= x {
            k += 1;
        }
        *c = if k == segs.len() {
            1.0
        } else {
            let s = &segs[k];
            let (a, b) = (pos(s, s.u0), pos(s, s.u1));
            if x <= a {
                s.u0
            } else {
                lerp(s.u0, s.u1, (x - a) / (b - a))
            }
        };
    }
    cdf[n] = 1.0;
    let masses: Vec<f64> = cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let velocity = (0..n)
        .map(|i| {
            if masses[i] <= 0.0 {
                return 0.0;
            }
            let u = 0.5 * (cdf[i] + cdf[i + 1]);
            let s = coupling.segment_at(u);
            s.target_at(u) - s.source_at(u)
        })
        .collect();
    (masses, velocity)
}

/// Benamou-Brenier action of the displacement interpolation between `mu`
/// and `nu`, evaluated on `k_steps` time steps (trapezoid in time) with the
/// interpolants binned onto the grid.
pub fn displacement_action(mu: &GridMeasure, nu: &GridMeasure, k_steps: usize) -> Result<f64> {
    if k_steps < 2 {
        return Err(LabError::InvalidParameter(format!("need k >= 2 time steps, got {k_steps}")));
    }
    let map = brenier_map(mu, nu)?;
    let dt = 1.0 / k_steps as f64;
    let mut action = 0.0;
    for j in 0..=k_steps {
        let (masses, velocity) = interpolant(&map.coupling, j as f64 * dt);
        let kinetic: f64 = masses.iter().zip(&velocity).map(|(m, v)| m * v * v).sum();
        let w = if j == 0 || j == k_steps { 0.5 } else { 1.0 };
        action += w * dt * kinetic;
    }
    Ok(action)
}

/// Distances, monotone map, potential and Benamou-Brenier action between
/// two measures.
#[derive(Debug, Clone)]
pub struct TransportReport {
    pub d1: f64,
    pub d2: f64,
    pub map: TransportMap1D,
    pub potential: Vec<f64>,
    pub action_check: f64,
}

impl TransportReport {
    pub const ACTION_STEPS: usize = 16;

    pub fn compute(mu: &GridMeasure, nu: &GridMeasure) -> Result<Self> {
        let map = brenier_map(mu, nu)?;
        let d1 = map.coupling.cost(1);
        let d2 = map.coupling.cost(2).max(0.0).sqrt();
        let potential = potential_from_map(&map);
        let action_check = displacement_action(mu, nu, Self::ACTION_STEPS)?;
        Ok(Self {
            d1,
            d2,
            map,
            potential,
            action_check,
        })
    }
}

impl Serialize for TransportReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let grid = self.map.coupling.grid;
        let rows: Vec<(f64, Option<f64>, f64)> = (0..grid.n_cells())
            .map(|i| {
                let t = self.map.values[i];
                (grid.center(i), t.is_finite().then_some(t), self.potential[i])
            })
            .collect();
        let mut st = serializer.serialize_struct("TransportReport", 4)?;
        st.serialize_field("d1", &self.d1)?;
        st.serialize_field("d2", &self.d2)?;
        st.serialize_field("action_check", &self.action_check)?;
        st.serialize_field("map", &rows)?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{gaussian_on_grid, make_grid, uniform_on_grid, GaussianSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gauss(g: &Grid1D, m: f64, s: f64) -> GridMeasure {
        gaussian_on_grid(g, &GaussianSpec::new(m, s).unwrap()).unwrap()
    }

    /// Independent oracle: midpoint rule on `m` equispaced levels using the
    /// measures' own quantile functions.
    fn quantile_oracle(mu: &GridMeasure, nu: &GridMeasure, p: i32, m: usize) -> f64 {
        let (qa, qb) = (crate::measures::Quantile::new(mu), crate::measures::Quantile::new(nu));
        let s: f64 = (0..m)
            .map(|k| {
                let u = (k as f64 + 0.5) / m as f64;
                (qa.eval(u).unwrap() - qb.eval(u).unwrap()).abs().powi(p)
            })
            .sum::<f64>()
            / m as f64;
        s.powf(1.0 / p as f64)
    }

    #[test]
    fn distances_match_quantile_oracles() {
        let g = make_grid(16.0, 1024).unwrap();
        let a = gauss(&g, 0.0, 1.0);
        assert_eq!(wasserstein_2(&a, &a).unwrap(), 0.0);

        let b = gauss(&g, 1.0, 1.0);
        let d = wasserstein_2(&a, &b).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 2e-3);
        assert_abs_diff_eq!(d, quantile_oracle(&a, &b, 2, 20_000), epsilon = 2e-3);

        // N(0, sd 2) has variance parameter 4.
        let c = gauss(&g, 0.0, 4.0);
        let d = wasserstein_2(&a, &c).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 2e-3);
        assert_abs_diff_eq!(d, quantile_oracle(&a, &c, 2, 20_000), epsilon = 2e-3);

        let u1 = uniform_on_grid(&g, -1.0, 0.0).unwrap();
        let u2 = uniform_on_grid(&g, 0.0, 1.0).unwrap();
        // CDF-area oracle: ∫|F_μ - F_ν| dx.
        let (f1, f2) = (u1.cdf(), u2.cdf());
        let area: f64 = f1
            .windows(2)
            .zip(f2.windows(2))
            .map(|(a, b)| 0.5 * ((a[0] - b[0]).abs() + (a[1] - b[1]).abs()) * g.h())
            .sum();
        let d1 = wasserstein_1(&u1, &u2).unwrap();
        assert_abs_diff_eq!(d1, 1.0, epsilon = 2e-3);
        assert_abs_diff_eq!(d1, area, epsilon = 1e-9);
        assert!(wasserstein_p(&u1, &u2, 3).is_err());
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = gauss(&make_grid(16.0, 256).unwrap(), 0.0, 1.0);
        let b = gauss(&make_grid(16.0, 512).unwrap(), 0.0, 1.0);
        assert!(matches!(wasserstein_2(&a, &b), Err(LabError::GridMismatch(_))));
    }

    #[test]
    fn brenier_maps_match_affine_oracles() {
        let g = make_grid(8.0, 1024).unwrap();
        let h = g.h();
        let a = gauss(&g, 0.0, 1.0);
        let id = brenier_map(&a, &a).unwrap();
        for (i, t) in id.values().iter().enumerate() {
            assert!((t - g.center(i)).abs() <= h);
        }

        let c = 0.75;
        let b = gauss(&g, c, 1.0);
        let map = brenier_map(&a, &b).unwrap();
        for (i, t) in map.values().iter().enumerate() {
            let x = g.center(i);
            if a.density()[i] > 1e-8 {
                assert!((t - (x + c)).abs() <= 2.0 * h, "x={x} T={t}");
            }
        }

        let u1 = uniform_on_grid(&g, -1.0, 1.0).unwrap();
        let u2 = uniform_on_grid(&g, -2.0, 2.0).unwrap();
        let map = brenier_map(&u1, &u2).unwrap();
        let (first, last) = map.support();
        for i in first..=last {
            assert!((map.values()[i] - 2.0 * g.center(i)).abs() <= 2.0 * h);
        }
        assert!(map.values()[0].is_nan());
    }

    #[test]
    fn brenier_map_rejects_gapped_source() {
        let g = make_grid(4.0, 64).unwrap();
        let a = uniform_on_grid(&g, -2.0, -1.0).unwrap();
        let b = uniform_on_grid(&g, 1.0, 2.0).unwrap();
        let gapped = a.mix(&b, 0.5).unwrap();
        let err = brenier_map(&gapped, &a).unwrap_err();
        assert!(err.to_string().contains("non-a.c. source"));
    }

    #[test]
    fn map_reproduces_cost_and_pushforward() {
        let g = make_grid(16.0, 512).unwrap();
        let a = gauss(&g, -0.5, 0.6);
        let b = uniform_on_grid(&g, -1.0, 2.0).unwrap().mix(&gauss(&g, 1.0, 0.3), 0.4).unwrap();
        let map = brenier_map(&a, &b).unwrap();
        let d2 = wasserstein_2(&a, &b).unwrap();
        let cost = map.transport_cost();
        assert!((cost - d2 * d2).abs() <= 1e-6 * d2 * d2);

        let pushed = map.coupling().target_marginal();
        let tv: f64 = pushed
            .iter()
            .enumerate()
            .map(|(j, m)| (m - b.cell_mass(j)).abs())
            .sum();
        assert!(tv < 1e-6, "tv = {tv}");
        let vals = map.values();
        let (first, last) = map.support();
        assert!((first..last).all(|i| vals[i + 1] >= vals[i]));
    }

    #[test]
    fn potential_matches_closed_forms() {
        let g = make_grid(8.0, 1024).unwrap();
        let a = gauss(&g, 0.0, 1.0);
        let phi = kantorovich_potential(&a, &a).unwrap();
        assert!(phi.iter().all(|p| p.abs() < 1e-9));

        let c = 0.5;
        let b = gauss(&g, c, 1.0);
        let phi = kantorovich_potential(&a, &b).unwrap();
        // φ(x) - φ(0) = -2cx on the bulk; the truncated tails only shift
        // the additive constant.
        let i0 = g.cell_of(0.0);
        let phi0 = phi[i0] + 2.0 * c * g.center(i0);
        for i in 0..g.n_cells() {
            let x = g.center(i);
            if x.abs() < 4.0 {
                assert!((phi[i] - phi0 + 2.0 * c * x).abs() < 1e-6, "x={x} phi={}", phi[i]);
            }
        }
        // Finite-difference derivative against 2(x - T).
        let map = brenier_map(&a, &b).unwrap();
        let t = map.values();
        for i in 1..g.n_cells() - 1 {
            if a.density()[i] > 1e-6 {
                let fd = (phi[i + 1] - phi[i - 1]) / (2.0 * g.h());
                assert!((fd - 2.0 * (g.center(i) - t[i])).abs() <= 2.0 * g.h() * 1.1);
            }
        }
    }

    #[test]
    fn potential_is_the_flat_derivative_of_squared_distance() {
        let g = make_grid(16.0, 1024).unwrap();
        let mu = gauss(&g, 0.0, 1.0);
        let nu = gauss(&g, 1.0, 0.5);
        let rho = gauss(&g, -0.5, 2.0);
        let eps = 1e-3;
        let base = wasserstein_2(&mu, &nu).unwrap().powi(2);
        let pert = wasserstein_2(&mu.mix(&rho, eps).unwrap(), &nu).unwrap().powi(2);
        let fd = (pert - base) / eps;
        let phi = kantorovich_potential(&mu, &nu).unwrap();
        let predicted = rho.integrate_values(&phi) - mu.integrate_values(&phi);
        assert!((fd - predicted).abs() <= 5e-2 * predicted.abs(), "fd={fd} pred={predicted}");
    }

    #[test]
    fn displacement_action_matches_squared_distance() {
        let g = make_grid(16.0, 1024).unwrap();
        let a = gauss(&g, 0.0, 1.0);
        assert_eq!(displacement_action(&a, &a, 4).unwrap(), 0.0);
        let b = gauss(&g, 1.0, 1.0);
        assert!((displacement_action(&a, &b, 16).unwrap() - 1.0).abs() <= 0.02);

        let u1 = uniform_on_grid(&g, -1.0, 1.0).unwrap();
        let u2 = uniform_on_grid(&g, -2.0, 2.0).unwrap();
        let d2sq = wasserstein_2(&u1, &u2).unwrap().powi(2);
        let act = displacement_action(&u1, &u2, 16).unwrap();
        assert!((act - d2sq).abs() <= 0.02 * d2sq, "act={act} d2sq={d2sq}");
        assert!(displacement_action(&a, &b, 1).is_err());
    }

    #[test]
    fn report_serializes_expected_keys() {
        let g = make_grid(6.0, 32).unwrap();
        let rep = TransportReport::compute(&gauss(&g, 0.0, 0.5), &gauss(&g, 0.5, 0.5)).unwrap();
        let v = serde_json::to_value(&rep).unwrap();
        for key in ["d1", "d2", "action_check", "map"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["map"].as_array().unwrap().len(), 32);
    }

    proptest! {
        #[test]
        fn distance_axioms(m1 in -2.0f64..2.0, s1 in 0.2f64..2.0, m2 in -2.0f64..2.0, s2 in 0.2f64..2.0,
                           m3 in -2.0f64..2.0, s3 in 0.2f64..2.0) {
            let g = make_grid(16.0, 256).unwrap();
            let (a, b, c) = (gauss(&g, m1, s1), gauss(&g, m2, s2), gauss(&g, m3, s3));
            let dab = wasserstein_2(&a, &b).unwrap();
            prop_assert!((dab - wasserstein_2(&b, &a).unwrap()).abs() < 1e-9);
            prop_assert!(wasserstein_1(&a, &b).unwrap() <= dab + 1e-9);
            let dac = wasserstein_2(&a, &c).unwrap();
            let dbc = wasserstein_2(&b, &c).unwrap();
            prop_assert!(dac <= dab + dbc + 1e-9);
        }

        #[test]
        fn translation_equivariance(k in 1isize..80, s in 0.3f64..1.5) {
            let g = make_grid(16.0, 512).unwrap();
            let a = gauss(&g, -1.0, s);
            let b = a.shift_cells(k).unwrap();
            let c = k as f64 * g.h();
            prop_assert!((wasserstein_2(&a, &b).unwrap() - c).abs() <= 2.0 * g.h());
            prop_assert!((wasserstein_1(&a, &b).unwrap() - c).abs() <= 2.0 * g.h());
        }

        #[test]
        fn action_is_at_least_squared_distance(m in -1.5f64..1.5, s in 0.3f64..2.0) {
            let g = make_grid(16.0, 256).unwrap();
            let a = gauss(&g, 0.0, 1.0);
            let b = gauss(&g, m, s);
            let d2sq = wasserstein_2(&a, &b).unwrap().powi(2);
            let act = displacement_action(&a, &b, 16).unwrap();
            prop_assert!(act >= d2sq * 0.98 - 1e-9);
        }
    }
}
