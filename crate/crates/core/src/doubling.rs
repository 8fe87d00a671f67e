//! Entropy-penalized variational problems: the JKO-type step and the
//! doubling-of-variables maximization
//! `U(μ) - V(ν) - d₂²(μ, ν)/(2ε) - δE*(μ) - δE*(ν)`,
//! solved by entropic mirror ascent in log-density coordinates.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::functionals::{entropy, entropy_star, log_gradient, FunctionalHandle};
use crate::measures::{Grid1D, GridMeasure};
use crate::transport::{brenier_map, potential_from_map, wasserstein_2};

/// Fraction of mass defining the bulk on which L∞ diagnostics are taken.
pub const BULK_MASS: f64 = 0.999;
/// Relative slack on the P-bound and diagonal inequalities.
pub const BOUND_SLACK: f64 = 0.10;
const STALL_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingParams {
    pub eps: f64,
    pub delta: f64,
    pub max_iters: usize,
    /// Stationarity tolerance: weighted standard deviation of the flat
    /// derivative of the objective. The discrete transport potential is only
    /// consistent with the discrete distance to O(h²), which floors this
    /// residual near 1e-5 on typical grids.
    pub tol: f64,
    /// Initial mirror step in `(0, 1]`.
    pub step: f64,
}

impl Default for DoublingParams {
    fn default() -> Self {
        Self {
            eps: 0.1,
            delta: 0.05,
            max_iters: 5000,
            tol: 1e-4,
            step: 1.0,
        }
    }
}

impl DoublingParams {
    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.delta > 0.0) {
            return Err(LabError::InvalidParameter(format!(
                "eps and delta must be positive, got ({}, {})",
                self.eps, self.delta
            )));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(LabError::InvalidParameter(format!("step must lie in (0, 1], got {}", self.step)));
        }
        Ok(())
    }
}

/// Log-density range kept below the maximum; deeper tails are lifted so the
/// iterate stays strictly positive in floating point.
const LOG_RANGE: f64 = 600.0;

/// Normalizes a log-density so that `Σ exp(l) h = 1`.
fn normalize_log(l: &mut [f64], h: f64) {
    let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    l.iter_mut().for_each(|v| *v = v.max(max - LOG_RANGE));
    let z = max + (l.iter().map(|v| (v - max).exp()).sum::<f64>() * h).ln();
    l.iter_mut().for_each(|v| *v -= z);
}

fn measure_of(grid: &Grid1D, l: &[f64]) -> Result<GridMeasure> {
    GridMeasure::from_log_density(*grid, l)
}

/// μ-weighted standard deviation of a grid function.
fn weighted_std(mu: &GridMeasure, f: &[f64]) -> f64 {
    let mean = mu.integrate_values(f);
    let var = mu.integrate_values(&f.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>());
    var.max(0.0).sqrt()
}

/// Kantorovich potential of `d₂²(·, target)` at `source`.
fn potential(source: &GridMeasure, target: &GridMeasure) -> Result<Vec<f64>> {
    Ok(potential_from_map(&brenier_map(source, target)?))
}

/// One accepted-or-backtracked mirror step on a log-density.
/// `target` is the log-density the flat derivative points to (up to a constant).
fn mirror_step<F: Fn(&[f64]) -> Result<f64>>(
    log_rho: &mut Vec<f64>,
    target: &[f64],
    h: f64,
    theta: &mut f64,
    current: f64,
    objective: F,
) -> Result<f64> {
    let mut t = *theta;
    loop {
        let mut cand: Vec<f64> = log_rho.iter().zip(target).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        normalize_log(&mut cand, h);
        let value = objective(&cand)?;
        if !value.is_finite() {
            return Err(LabError::NonFinite("objective".into()));
        }
        if value >= current - 1e-13 * (1.0 + current.abs()) {
            *log_rho = cand;
            *theta = (2.0 * t).min(1.0);
            return Ok(value);
        }
        t *= 0.5;
        if t < 1e-12 {
            return Err(LabError::Stagnation(format!("mirror step collapsed at objective {current}")));
        }
    }
}

/// Output of [`jko_step`] and the single-measure maximizer.
#[derive(Debug, Clone)]
pub struct AscentResult {
    pub measure: GridMeasure,
    pub objective: f64,
    pub iterations: usize,
    /// Weighted standard deviation of the flat derivative at exit.
    pub stationarity: f64,
    pub converged: bool,
}

/// `argmax_μ {∫u dμ - d₂²(μ, ν)/(2ε) - δE(μ)}` by mirror ascent from `ν`.
pub fn jko_step(u: &[f64], nu: &GridMeasure, eps: f64, delta: f64, max_iters: usize, tol: f64) -> Result<AscentResult> {
    let grid = *nu.grid();
    let h = grid.h();
    if u.len() != grid.n_cells() {
        return Err(LabError::GridMismatch("u length".into()));
    }
    if !(eps > 0.0 && delta > 0.0) {
        return Err(LabError::InvalidParameter("eps and delta must be positive".into()));
    }
    let objective = |l: &[f64]| -> Result<f64> {
        let mu = measure_of(&grid, l)?;
        Ok(mu.integrate_values(u) - wasserstein_2(&mu, nu)?.powi(2) / (2.0 * eps) - delta * entropy(&mu))
    };
    // Strictly positive start: ν mixed with a little uniform mass.
    let mut log_rho: Vec<f64> = nu.density().iter().map(|d| (d + 1e-12).ln()).collect();
    normalize_log(&mut log_rho, h);
    let mut value = objective(&log_rho)?;
    let mut theta = 1.0;
    let mut stationarity = f64::INFINITY;
    let mut iterations = 0;
    let mut history = vec![value];
    while iterations < max_iters {
        let mu = measure_of(&grid, &log_rho)?;
        let phi = potential(&mu, nu)?;
        let flat: Vec<f64> = (0..u.len()).map(|i| u[i] - phi[i] / (2.0 * eps) - delta * log_rho[i]).collect();
        stationarity = weighted_std(&mu, &flat);
        if stationarity < tol {
            break;
        }
        let target: Vec<f64> = (0..u.len()).map(|i| (u[i] - phi[i] / (2.0 * eps)) / delta).collect();
        value = mirror_step(&mut log_rho, &target, h, &mut theta, value, objective)?;
        history.push(value);
        iterations += 1;
        if iterations >= STALL_WINDOW && value - history[iterations - STALL_WINDOW] <= 1e-13 * (1.0 + value.abs()) {
            break;
        }
    }
    Ok(AscentResult {
        measure: measure_of(&grid, &log_rho)?,
        objective: value,
        iterations,
        stationarity,
        converged: stationarity < tol,
    })
}

/// `argmax_μ {∫u dμ - δE*(μ)}`; the maximizer is `∝ exp(u/δ - π|x|²)`,
/// reached by the same mirror ascent from the uniform density.
pub fn single_measure_maximizer(u: &[f64], grid: &Grid1D, delta: f64, max_iters: usize, tol: f64) -> Result<AscentResult> {
    if u.len() != grid.n_cells() || !(delta > 0.0) {
        return Err(LabError::InvalidParameter("u length or delta".into()));
    }
    let h = grid.h();
    let xs = grid.centers();
    let objective = |l: &[f64]| -> Result<f64> {
        let mu = measure_of(grid, l)?;
        Ok(mu.integrate_values(u) - delta * entropy_star(&mu))
    };
    let target: Vec<f64> = (0..u.len()).map(|i| u[i] / delta - PI * xs[i] * xs[i]).collect();
    let mut log_rho = vec![0.0; u.len()];
    normalize_log(&mut log_rho, h);
    let mut value = objective(&log_rho)?;
    let mut theta = 1.0;
    let mut iterations = 0;
    let mut stationarity = f64::INFINITY;
    while iterations < max_iters {
        let mu = measure_of(grid, &log_rho)?;
        let flat: Vec<f64> = (0..u.len()).map(|i| delta * (target[i] - log_rho[i])).collect();
        stationarity = weighted_std(&mu, &flat);
        if stationarity < tol {
            break;
        }
        value = mirror_step(&mut log_rho, &target, h, &mut theta, value, objective)?;
        iterations += 1;
    }
    Ok(AscentResult {
        measure: measure_of(grid, &log_rho)?,
        objective: value,
        iterations,
        stationarity,
        converged: stationarity < tol,
    })
}

/// `δ ∫ |∂ₓ log μ| dμ`.
pub fn log_gradient_mass(mu: &GridMeasure, delta: f64) -> f64 {
    let g = log_gradient(mu);
    delta * mu.integrate_values(&g.iter().map(|v| v.abs()).collect::<Vec<_>>())
}

/// Cell range carrying the central `mass` fraction of `mu`.
pub fn bulk_window(mu: &GridMeasure, mass: f64) -> (usize, usize) {
    let cdf = mu.cdf();
    let tail = 0.5 * (1.0 - mass);
    let n = mu.grid().n_cells();
    let first = (0..n).find(|&i| cdf[i + 1] > tail).unwrap_or(0);
    let last = (0..n).rev().find(|&i| cdf[i] < 1.0 - tail).unwrap_or(n - 1);
    (first, last.max(first))
}

/// Diagnostics of a doubling maximizer.
#[derive(Debug, Clone, Serialize)]
pub struct DoublingDiagnostics {
    /// Smallest density over the bulk windows of μ̄ and ν̄.
    pub positivity_margin: f64,
    /// Largest reciprocal density over the same windows.
    pub reciprocal_max: f64,
    /// `sup_bulk |p + δ∂ₓlog μ̄|`.
    pub p_residual: f64,
    /// `sup_bulk |q - δ∂ₓlog ν̄|`.
    pub q_residual: f64,
    pub diagonal_d2: f64,
    /// `δ (E*(μ̄) + E*(ν̄))`.
    pub weighted_estar: f64,
    /// `δ (M₂(μ̄) + M₂(ν̄))`.
    pub weighted_m2: f64,
    pub fischer_mu: Option<f64>,
    pub fischer_nu: Option<f64>,
    pub stationarity_mu: f64,
    pub stationarity_nu: f64,
}

#[derive(Debug, Clone)]
pub struct DoublingReport {
    pub mu_bar: GridMeasure,
    pub nu_bar: GridMeasure,
    pub phi_value: f64,
    /// `p(x) = (x - T_μ̄^ν̄(x))/ε + 2πδx`.
    pub p_field: Vec<f64>,
    /// `q(y) = (T_ν̄^μ̄(y) - y)/ε - 2πδy`.
    pub q_field: Vec<f64>,
    pub diagnostics: DoublingDiagnostics,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// JSON view of a [`DoublingReport`] (fields are written to CSV separately).
#[derive(Debug, Clone, Serialize)]
pub struct DoublingSummary {
    pub phi_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: DoublingDiagnostics,
}

impl DoublingReport {
    pub fn summary(&self) -> DoublingSummary {
        DoublingSummary {
            phi_value: self.phi_value,
            iterations: self.iterations,
            converged: self.converged,
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// CSV with columns `x, mu_bar, nu_bar, p, q, dlog_mu, dlog_nu`.
    pub fn write_fields_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "mu_bar", "nu_bar", "p", "q", "dlog_mu", "dlog_nu"])?;
        let (gm, gn) = (log_gradient(&self.mu_bar), log_gradient(&self.nu_bar));
        let grid = self.mu_bar.grid();
        for i in 0..grid.n_cells() {
            w.write_record(&[
                grid.center(i).to_string(),
                self.mu_bar.density()[i].to_string(),
                self.nu_bar.density()[i].to_string(),
                self.p_field[i].to_string(),
                self.q_field[i].to_string(),
                gm[i].to_string(),
                gn[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Objective of the doubling problem.
pub fn doubling_objective(u: &FunctionalHandle, v: &FunctionalHandle, mu: &GridMeasure, nu: &GridMeasure, p: &DoublingParams) -> Result<f64> {
    Ok(u.value(mu) - v.value(nu) - wasserstein_2(mu, nu)?.powi(2) / (2.0 * p.eps) - p.delta * (entropy_star(mu) + entropy_star(nu)))
}

/// Alternating mirror ascent in μ and ν from the given strictly positive
/// starting log-densities (the E* minimizer when `None`).
pub fn doubling_maximize_from(
    u: &FunctionalHandle,
    v: &FunctionalHandle,
    grid: &Grid1D,
    params: &DoublingParams,
    start: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<DoublingReport> {
    params.validate()?;
    let h = grid.h();
    let xs = grid.centers();
    let n = grid.n_cells();
    let (eps, delta) = (params.eps, params.delta);
    let (mut lm, mut ln) = start.unwrap_or_else(|| {
        let l: Vec<f64> = xs.iter().map(|x| -PI * x * x).collect();
        (l.clone(), l)
    });
    if lm.len() != n || ln.len() != n {
        return Err(LabError::GridMismatch("starting log-densities".into()));
    }
    normalize_log(&mut lm, h);
    normalize_log(&mut ln, h);

    let mut mu = measure_of(grid, &lm)?;
    let mut nu = measure_of(grid, &ln)?;
    let mut value = doubling_objective(u, v, &mu, &nu, params)?;
    let mut history = vec![value];
    let (mut theta_mu, mut theta_nu) = (params.step, params.step);
    let (mut stat_mu, mut stat_nu) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let quad: Vec<f64> = xs.iter().map(|x| PI * x * x).collect();

    while iterations < params.max_iters {
        // μ-step with ν frozen.
        let du = u.flat_derivative_grid(&mu);
        let phi = potential(&mu, &nu)?;
        let flat: Vec<f64> = (0..n).map(|i| du[i] - phi[i] / (2.0 * eps) - delta * (lm[i] + quad[i])).collect();
        stat_mu = weighted_std(&mu, &flat);
        // ν-step quantities at the current pair.
        let dv = v.flat_derivative_grid(&nu);
        let psi = potential(&nu, &mu)?;
        let flat_nu: Vec<f64> = (0..n).map(|i| -dv[i] - psi[i] / (2.0 * eps) - delta * (ln[i] + quad[i])).collect();
        stat_nu = weighted_std(&nu, &flat_nu);
        if stat_mu < params.tol && stat_nu < params.tol {
            break;
        }

        let target: Vec<f64> = (0..n).map(|i| (du[i] - phi[i] / (2.0 * eps)) / delta - quad[i]).collect();
        let nu_now = nu.clone();
        value = match mirror_step(&mut lm, &target, h, &mut theta_mu, value, |l| {
            doubling_objective(u, v, &measure_of(grid, l)?, &nu_now, params)
        }) {
            Ok(v) => v,
            // No ascent left at the discretization floor.
            Err(LabError::Stagnation(_)) => break,
            Err(e) => return Err(e),
        };
        mu = measure_of(grid, &lm)?;

        let psi = potential(&nu, &mu)?;
        let dv = v.flat_derivative_grid(&nu);
        let target: Vec<f64> = (0..n).map(|i| (-dv[i] - psi[i] / (2.0 * eps)) / delta - quad[i]).collect();
        let mu_now = mu.clone();
        value = match mirror_step(&mut ln, &target, h, &mut theta_nu, value, |l| {
            doubling_objective(u, v, &mu_now, &measure_of(grid, l)?, params)
        }) {
            Ok(v) => v,
            Err(LabError::Stagnation(_)) => break,
            Err(e) => return Err(e),
        };
        nu = measure_of(grid, &ln)?;
        history.push(value);
        iterations += 1;
        // Stalled: the objective no longer moves at round-off level.
        if iterations >= STALL_WINDOW && value - history[iterations - STALL_WINDOW] <= 1e-13 * (1.0 + value.abs()) {
            break;
        }
    }

    let converged = stat_mu < params.tol && stat_nu < params.tol;
    let map_mn = brenier_map(&mu, &nu)?;
    let map_nm = brenier_map(&nu, &mu)?;
    let p_field: Vec<f64> = (0..n)
        .map(|i| (xs[i] - map_mn.values()[i]) / eps + 2.0 * PI * delta * xs[i])
        .collect();
    let q_field: Vec<f64> = (0..n)
        .map(|i| (map_nm.values()[i] - xs[i]) / eps - 2.0 * PI * delta * xs[i])
        .collect();
    let (gm, gn) = (log_gradient(&mu), log_gradient(&nu));
    let (bm, bn) = (bulk_window(&mu, BULK_MASS), bulk_window(&nu, BULK_MASS));
    let sup_on = |range: (usize, usize), f: &dyn Fn(usize) -> f64| (range.0..=range.1).map(f).fold(0.0f64, |m, v| m.max(v.abs()));
    let p_residual = sup_on(bm, &|i| p_field[i] + delta * gm[i]);
    let q_residual = sup_on(bn, &|i| q_field[i] - delta * gn[i]);
    let min_on = |m: &GridMeasure, r: (usize, usize)| m.density()[r.0..=r.1].iter().cloned().fold(f64::INFINITY, f64::min);
    let positivity_margin = min_on(&mu, bm).min(min_on(&nu, bn));
    let diagnostics = DoublingDiagnostics {
        positivity_margin,
        reciprocal_max: 1.0 / positivity_margin,
        p_residual,
        q_residual,
        diagonal_d2: wasserstein_2(&mu, &nu)?,
        weighted_estar: delta * (entropy_star(&mu) + entropy_star(&nu)),
        weighted_m2: delta * (mu.second_moment() + nu.second_moment()),
        fischer_mu: crate::functionals::fischer_information(&mu).ok(),
        fischer_nu: crate::functionals::fischer_information(&nu).ok(),
        stationarity_mu: stat_mu,
        stationarity_nu: stat_nu,
    };
    Ok(DoublingReport {
        mu_bar: mu,
        nu_bar: nu,
        phi_value: value,
        p_field,
        q_field,
        diagnostics,
        iterations,
        converged,
        history,
    })
}

pub fn doubling_maximize(u: &FunctionalHandle, v: &FunctionalHandle, grid: &Grid1D, params: &DoublingParams) -> Result<DoublingReport> {
    doubling_maximize_from(u, v, grid, params, None)
}

/// Random strictly positive log-density: a mixture of a few Gaussians plus
/// a uniform floor.
fn random_start(grid: &Grid1D, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let xs = grid.centers();
    let l = grid.half_width();
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(-0.5 * l..0.5 * l), rng.gen_range(0.05..1.0), rng.gen_range(0.1..1.0)))
        .collect();
    xs.iter()
        .map(|&x| {
            let d: f64 = bumps.iter().map(|&(m, s, w)| w * (-(x - m).powi(2) / (2.0 * s)).exp()).sum();
            (d + 1e-6).ln()
        })
        .collect()
}

/// Ascents from the default start and `restarts` random starts. Returns the
/// best report and the spread (max - min) of the attained objectives.
pub fn doubling_with_restarts(
    u: &FunctionalHandle,
    v: &FunctionalHandle,
    grid: &Grid1D,
    params: &DoublingParams,
    restarts: usize,
    seed: u64,
) -> Result<(DoublingReport, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None];
    for _ in 0..restarts {
        starts.push(Some((random_start(grid, &mut rng), random_start(grid, &mut rng))));
    }
    let reports = starts
        .into_par_iter()
        .map(|s| doubling_maximize_from(u, v, grid, params, s))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = reports.iter().map(|r| r.phi_value).collect();
    let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - values.iter().cloned().fold(f64::INFINITY, f64::min);
    let best = reports
        .into_iter()
        .max_by(|a, b| a.phi_value.total_cmp(&b.phi_value))
        .expect("at least one start");
    Ok((best, spread))
}

/// One point of a vanishing-δ scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanPoint {
    pub delta: f64,
    pub weighted_estar: f64,
    pub weighted_m2: f64,
    pub converged: bool,
}

/// Runs the doubling maximization for each δ (in parallel) and reports
/// `δ(E*(μ̄) + E*(ν̄))` and `δ(M₂(μ̄) + M₂(ν̄))`.
pub fn vanishing_delta_scan(
    u: &FunctionalHandle,
    v: &FunctionalHandle,
    grid: &Grid1D,
    params: &DoublingParams,
    deltas: &[f64],
) -> Result<Vec<ScanPoint>> {
    if deltas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(LabError::InvalidParameter("delta sequence must decrease".into()));
    }
    deltas
        .par_iter()
        .map(|&delta| {
            let p = DoublingParams { delta, ..*params };
            let r = doubling_maximize(u, v, grid, &p)?;
            Ok(ScanPoint {
                delta,
                weighted_estar: r.diagnostics.weighted_estar,
                weighted_m2: r.diagnostics.weighted_m2,
                converged: r.converged,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{make_grid, uniform_on_grid};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn kink(k: f64) -> FunctionalHandle {
        FunctionalHandle::linear("kink", Arc::new(move |x: f64| -k * x.abs().min(1.0)), k, k)
    }

    #[test]
    fn jko_without_transport_is_uniform() {
        let g = make_grid(2.0, 128).unwrap();
        let nu = crate::measures::gaussian_on_grid(&g, &crate::measures::GaussianSpec::new(0.0, 0.1).unwrap()).unwrap();
        let r = jko_step(&vec![0.0; 128], &nu, 1e9, 1.0, 500, 1e-9).unwrap();
        let uni = uniform_on_grid(&g, -2.0, 2.0).unwrap();
        assert!(r.measure.l1_distance(&uni).unwrap() < 1e-4, "{}", r.measure.l1_distance(&uni).unwrap());
        // Re-running from the maximizer is a fixed point.
        let again = jko_step(&vec![0.0; 128], &r.measure, 1e9, 1.0, 500, 1e-9).unwrap();
        assert!(again.measure.l1_distance(&r.measure).unwrap() < 1e-6);
    }

    #[test]
    fn jko_step_is_stationary_and_beats_its_start() {
        let g = make_grid(6.0, 256).unwrap();
        let nu = crate::measures::gaussian_on_grid(&g, &crate::measures::GaussianSpec::new(0.5, 0.3).unwrap()).unwrap();
        let u: Vec<f64> = g.centers().iter().map(|x| -x.abs().min(1.0)).collect();
        let r = jko_step(&u, &nu, 0.1, 0.05, 2000, 1e-3).unwrap();
        assert!(r.converged, "stationarity {}", r.stationarity);
        let start = nu.integrate_values(&u) - 0.05 * entropy(&nu);
        assert!(r.objective >= start);
        assert!(r.measure.density().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn single_measure_maximizer_closed_form() {
        let g = make_grid(8.0, 2048).unwrap();
        let delta = 0.05;
        let u: Vec<f64> = g.centers().iter().map(|x| -x.abs().min(1.0)).collect();
        let r = single_measure_maximizer(&u, &g, delta, 100, 1e-10).unwrap();
        let closed: Vec<f64> = g.centers().iter().zip(&u).map(|(x, u)| u / delta - PI * x * x).collect();
        let exact = GridMeasure::from_log_density(g, &closed).unwrap();
        assert!(r.measure.l1_distance(&exact).unwrap() < 1e-9);
    }

    #[test]
    fn log_gradient_mass_approaches_one() {
        // The kink must be resolved: h/δ small.
        let g = make_grid(8.0, 8192).unwrap();
        let u: Vec<f64> = g.centers().iter().map(|x| -x.abs().min(1.0)).collect();
        let mut vals = Vec::new();
        for delta in [0.05, 0.025, 0.0125] {
            let r = single_measure_maximizer(&u, &g, delta, 100, 1e-10).unwrap();
            vals.push(log_gradient_mass(&r.measure, delta));
        }
        assert!(vals.iter().all(|v| (0.8..=1.2).contains(v)), "{vals:?}");
    }

    #[test]
    fn zero_functionals_give_the_estar_minimizer() {
        let g = make_grid(8.0, 512).unwrap();
        let zero = FunctionalHandle::constant(0.0);
        let p = DoublingParams {
            eps: 0.1,
            delta: 0.05,
            ..Default::default()
        };
        let r = doubling_maximize(&zero, &zero, &g, &p).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.phi_value, 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(r.mu_bar.variance(), 1.0 / (2.0 * PI), epsilon = 1e-3);
        assert!(r.diagnostics.diagonal_d2 < 1e-6);
        let scan = vanishing_delta_scan(&zero, &zero, &g, &p, &[0.1, 0.05]).unwrap();
        assert!(scan.iter().all(|s| s.weighted_estar.abs() < 1e-3));
    }

    #[test]
    fn p_bound_and_positivity_for_a_kinked_linear_functional() {
        let g = make_grid(8.0, 2048).unwrap();
        let u = kink(1.0);
        let zero = FunctionalHandle::constant(0.0);
        let p = DoublingParams {
            eps: 0.1,
            delta: 0.05,
            ..Default::default()
        };
        let r = doubling_maximize(&u, &zero, &g, &p).unwrap();
        assert!(r.converged, "{:?}", r.diagnostics);
        assert!(r.diagnostics.positivity_margin > 0.0);
        assert!(r.diagnostics.p_residual <= u.lip_d1 * (1.0 + BOUND_SLACK), "{:?}", r.diagnostics);
        assert!(r.diagnostics.q_residual <= 1e-2, "{:?}", r.diagnostics);
        assert!(r.history.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(r.diagnostics.fischer_mu.is_some());
    }

    #[test]
    fn diagonal_distance_is_small() {
        let g = make_grid(8.0, 1024).unwrap();
        let u = kink(1.0);
        for eps in [0.2, 0.1, 0.05] {
            let p = DoublingParams {
                eps,
                delta: 0.05,
                ..Default::default()
            };
            let r = doubling_maximize(&u, &u, &g, &p).unwrap();
            let bound = 2.0 * (u.lip_d1 + u.lip_d1) * eps * (1.0 + BOUND_SLACK);
            assert!(r.diagnostics.diagonal_d2 <= bound, "eps {eps}: {}", r.diagnostics.diagonal_d2);
        }
    }

    #[test]
    fn restarts_agree() {
        let g = make_grid(8.0, 512).unwrap();
        let u = kink(1.0);
        let zero = FunctionalHandle::constant(0.0);
        let p = DoublingParams {
            eps: 0.1,
            delta: 0.1,
            ..Default::default()
        };
        let (best, spread) = doubling_with_restarts(&u, &zero, &g, &p, 5, 11).unwrap();
        assert!(best.converged);
        assert!(spread < 1e-5, "spread {spread}");
    }

    #[test]
    fn scan_rejects_increasing_deltas() {
        let g = make_grid(8.0, 128).unwrap();
        let zero = FunctionalHandle::constant(0.0);
        assert!(vanishing_delta_scan(&zero, &zero, &g, &DoublingParams::default(), &[0.1, 0.2]).is_err());
        assert_eq!(vanishing_delta_scan(&zero, &zero, &g, &DoublingParams::default(), &[0.1]).unwrap().len(), 1);
    }
}
