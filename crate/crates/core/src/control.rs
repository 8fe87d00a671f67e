//! Mean-field optimal control: Hamiltonian/Lagrangian duality, backward HJB
//! solves, cost evaluation, the forward-backward value solver, DPP residuals
//! and the closed-form oracles for linear and mean terminal costs.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::fokker_planck::{fp_solve, implicit_diffusion, ControlField, FPPath, SchemeParams};
use crate::functionals::FunctionalHandle;
use crate::measures::{Grid1D, GridMeasure};
use crate::tabulated::ScalarFn;

pub type PhaseFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Convex Hamiltonian `H₁(x, p)` with its derivatives and convexity
/// constants `c_low ≤ ∂²ₚₚH₁ ≤ c_high`.
#[derive(Clone)]
pub struct Hamiltonian {
    pub name: String,
    eval: PhaseFn,
    dp: PhaseFn,
    dx: PhaseFn,
    /// Closed-form Lagrangian, when known; [`legendre`] is used otherwise.
    lagrangian: Option<PhaseFn>,
    pub c_low: f64,
    pub c_high: f64,
    /// `|∂ₓH₁(x, p)| ≤ growth (1 + |p|)`.
    pub growth: f64,
}

impl std::fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hamiltonian")
            .field("name", &self.name)
            .field("c_low", &self.c_low)
            .field("c_high", &self.c_high)
            .field("growth", &self.growth)
            .finish()
    }
}

impl Hamiltonian {
    pub fn new(
        name: impl Into<String>,
        eval: PhaseFn,
        dp: PhaseFn,
        dx: PhaseFn,
        c_low: f64,
        c_high: f64,
        growth: f64,
    ) -> Result<Self> {
        if !(c_low > 0.0 && c_high >= c_low) {
            return Err(LabError::InvalidParameter(format!(
                "convexity constants must satisfy 0 < c_low <= c_high, got ({c_low}, {c_high})"
            )));
        }
        Ok(Self {
            name: name.into(),
            eval,
            dp,
            dx,
            lagrangian: None,
            c_low,
            c_high,
            growth,
        })
    }

    /// `H₁ = ½p²`, with `L(x, q) = ½q²`.
    pub fn quadratic() -> Self {
        Self {
            name: "quadratic".into(),
            eval: Arc::new(|_, p| 0.5 * p * p),
            dp: Arc::new(|_, p| p),
            dx: Arc::new(|_, _| 0.0),
            lagrangian: Some(Arc::new(|_, q| 0.5 * q * q)),
            c_low: 1.0,
            c_high: 1.0,
            growth: 0.0,
        }
    }

    /// `H₁ = ½p² + b(x)p`, with `L(x, q) = ½(q + b(x))²`.
    pub fn quadratic_with_drift(b: ScalarFn, b_lip: f64) -> Self {
        let (b1, b2, b3) = (b.clone(), b.clone(), b.clone());
        let step = 1e-5;
        Self {
            name: "quadratic+drift".into(),
            eval: Arc::new(move |x, p| 0.5 * p * p + b1(x) * p),
            dp: Arc::new(move |x, p| p + b2(x)),
            dx: Arc::new(move |x, p| (b3(x + step) - b3(x - step)) / (2.0 * step) * p),
            lagrangian: Some(Arc::new(move |x, q| 0.5 * (q + b(x)).powi(2))),
            c_low: 1.0,
            c_high: 1.0,
            growth: b_lip,
        }
    }

    /// Same Hamiltonian plus a constant `ε₀`.
    pub fn shifted(&self, eps0: f64) -> Self {
        let eval = self.eval.clone();
        let lagrangian = self.lagrangian.clone();
        Self {
            name: format!("{}+{eps0}", self.name),
            eval: Arc::new(move |x, p| eval(x, p) + eps0),
            lagrangian: lagrangian.map(|l| Arc::new(move |x, q| l(x, q) - eps0) as PhaseFn),
            ..self.clone()
        }
    }

    /// Drops the closed-form Lagrangian so [`legendre`] is used.
    pub fn without_closed_form(&self) -> Self {
        Self {
            lagrangian: None,
            ..self.clone()
        }
    }

    pub fn eval(&self, x: f64, p: f64) -> f64 {
        (self.eval)(x, p)
    }

    pub fn dp(&self, x: f64, p: f64) -> f64 {
        (self.dp)(x, p)
    }

    pub fn dx(&self, x: f64, p: f64) -> f64 {
        (self.dx)(x, p)
    }

    /// `L(x, q)`, closed form when available.
    pub fn lagrangian(&self, x: f64, q: f64) -> Result<f64> {
        match &self.lagrangian {
            Some(l) => Ok(l(x, q)),
            None => legendre(self, x, q).map(|r| r.value),
        }
    }

    /// Largest violation of midpoint `c_low`-strong convexity over random
    /// samples in `[-range, range]²`.
    pub fn convexity_violation(&self, samples: usize, range: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .map(|_| {
                let x = rng.gen_range(-range..=range);
                let p = rng.gen_range(-range..=range);
                let q = rng.gen_range(-range..=range);
                let lhs = self.eval(x, 0.5 * (p + q));
                let rhs = 0.5 * self.eval(x, p) + 0.5 * self.eval(x, q) - self.c_low / 8.0 * (p - q).powi(2);
                lhs - rhs
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `|dp - finite difference of eval|` over random samples.
    pub fn dp_inconsistency(&self, samples: usize, range: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = 1e-5;
        (0..samples)
            .map(|_| {
                let x = rng.gen_range(-range..=range);
                let p = rng.gen_range(-range..=range);
                let fd = (self.eval(x, p + e) - self.eval(x, p - e)) / (2.0 * e);
                (fd - self.dp(x, p)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Runs both sampled checks at their stated tolerances.
    pub fn validate(&self, seed: u64) -> Result<()> {
        let conv = self.convexity_violation(512, 5.0, seed);
        if conv > 1e-8 {
            return Err(LabError::InvalidParameter(format!(
                "{}: convexity violated by {conv:e}",
                self.name
            )));
        }
        let dp = self.dp_inconsistency(512, 5.0, seed.wrapping_add(1));
        if dp > 1e-4 {
            return Err(LabError::InvalidParameter(format!(
                "{}: dp inconsistent with eval by {dp:e}",
                self.name
            )));
        }
        Ok(())
    }
}

/// Value and maximizer of the Legendre transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendrePoint {
    pub value: f64,
    pub argmax: f64,
}

const BRACKET_CAP: f64 = 1e8;

/// `L(x, q) = sup_p {-pq - H₁(x, p)}` by golden-section search on a bracket
/// sized from the convexity constant, polished by Newton steps on
/// `∂ₚH₁(x, p) = -q`.
pub fn legendre(h1: &Hamiltonian, x: f64, q: f64) -> Result<LegendrePoint> {
    let objective = |p: f64| -p * q - h1.eval(x, p);
    // Strong convexity puts the maximizer within |q + ∂ₚH₁(x, 0)| / c_low of 0.
    let mut radius = (q.abs() + h1.dp(x, 0.0).abs()) / h1.c_low + 1.0;
    loop {
        let p = golden_max(&objective, -radius, radius, 1e-12 * (1.0 + radius));
        let p = newton_polish(h1, x, q, p);
        if p.abs() < 0.999 * radius {
            if (h1.dp(x, p) + q).abs() > 1e-6 * (1.0 + q.abs()) {
                return Err(LabError::NonFinite(format!(
                    "legendre stationarity residual too large at x = {x}, q = {q}"
                )));
            }
            return Ok(LegendrePoint {
                value: objective(p),
                argmax: p,
            });
        }
        radius *= 4.0;
        if radius > BRACKET_CAP {
            return Err(LabError::BracketEscape { x, q });
        }
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn newton_polish(h1: &Hamiltonian, x: f64, q: f64, mut p: f64) -> f64 {
    for _ in 0..5 {
        let e = 1e-6 * (1.0 + p.abs());
        let hpp = (h1.dp(x, p + e) - h1.dp(x, p - e)) / (2.0 * e);
        if !(hpp > 0.0) {
            break;
        }
        let step = (h1.dp(x, p) + q) / hpp;
        if !step.is_finite() {
            break;
        }
        p -= step;
        if step.abs() < 1e-14 * (1.0 + p.abs()) {
            break;
        }
    }
    p
}

/// Value function grid path `u(τ_k, x_i)` on the HJB time grid.
#[derive(Debug, Clone, Serialize)]
pub struct AdjointPath {
    pub grid: Grid1D,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl AdjointPath {
    /// Central-difference `∂ₓu` at time index `k` (zero at the reflecting ends).
    pub fn gradient(&self, k: usize) -> Vec<f64> {
        central_gradient(&self.values[k], self.grid.h())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn central_gradient(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                0.0
            } else {
                (u[i + 1] - u[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

/// Gradients above this magnitude abort the backward solve.
pub const GRADIENT_BLOWUP: f64 = 1e6;

/// Solves `-∂ₜu - ∂ₓₓu + H₁(x, ∂ₓu) = f` backward from `u(T) = terminal`
/// on `times` (increasing, ending at `T`). `source` holds one row per time
/// or a single time-independent row.
///
/// Lax-Friedrichs numerical Hamiltonian with dissipation at least
/// `sup |∂ₚH₁|` over the current one-sided gradients, explicit; diffusion
/// implicit with reflecting ends. Sub-steps keep `dt θ ≤ h`.
pub fn hjb_backward(
    h1: &Hamiltonian,
    grid: &Grid1D,
    times: &[f64],
    source: &[Vec<f64>],
    terminal: &[f64],
) -> Result<AdjointPath> {
    let n = grid.n_cells();
    let h = grid.h();
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LabError::InvalidParameter("HJB times must be increasing".into()));
    }
    if terminal.len() != n || source.iter().any(|r| r.len() != n) {
        return Err(LabError::GridMismatch("HJB data length".into()));
    }
    if source.len() != 1 && source.len() != times.len() {
        return Err(LabError::InvalidParameter(format!(
            "source needs 1 or {} rows, got {}",
            times.len(),
            source.len()
        )));
    }
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(LabError::NonFinite("terminal datum".into()));
    }
    let xs = grid.centers();
    let k_last = times.len() - 1;
    let mut values = vec![Vec::new(); times.len()];
    values[k_last] = terminal.to_vec();
    let mut u = terminal.to_vec();
    let mut scratch = Vec::with_capacity(n);
    let (mut pm, mut pp, mut ham) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let row = |k: usize| if source.len() == 1 { &source[0] } else { &source[k] };

    for k in (0..k_last).rev() {
        let span = times[k + 1] - times[k];
        let mut left = span;
        // Source on [τ_k, τ_{k+1}] taken as the average of its end rows.
        let f: Vec<f64> = row(k).iter().zip(row(k + 1)).map(|(a, b)| 0.5 * (a + b)).collect();
        while left > 1e-14 * span {
            let mut theta = 0.0f64;
            for i in 0..n {
                pm[i] = if i == 0 { 0.0 } else { (u[i] - u[i - 1]) / h };
                pp[i] = if i == n - 1 { 0.0 } else { (u[i + 1] - u[i]) / h };
                theta = theta.max(h1.dp(xs[i], pm[i]).abs()).max(h1.dp(xs[i], pp[i]).abs());
            }
            let gmax = pm.iter().chain(&pp).fold(0.0f64, |m, v| m.max(v.abs()));
            if !(gmax < GRADIENT_BLOWUP) {
                return Err(LabError::Diverged {
                    time: times[k + 1] - (span - left),
                    reason: format!("HJB gradient reached {gmax:e}"),
                    snapshot: None,
                });
            }
            let tau = if theta > 0.0 { left.min(h / theta) } else { left };
            for i in 0..n {
                let avg = 0.5 * (pm[i] + pp[i]);
                ham[i] = h1.eval(xs[i], avg) - 0.5 * theta * (pp[i] - pm[i]);
            }
            for i in 0..n {
                u[i] -= tau * (ham[i] - f[i]);
            }
            implicit_diffusion(&mut u, tau / (h * h), &mut scratch);
            left -= tau;
        }
        values[k] = u.clone();
    }
    Ok(AdjointPath {
        grid: *grid,
        times: times.to_vec(),
        values,
    })
}

/// Optimal feedback `α = -∂ₚH₁(x, ∂ₓu)` on each interval of the adjoint
/// time grid (gradients averaged over the interval ends), clamped to
/// `[-bound, bound]`. Returns the field and whether the clamp was active.
pub fn feedback_control(h1: &Hamiltonian, adjoint: &AdjointPath, bound: f64) -> Result<(ControlField, bool)> {
    let xs = adjoint.grid.centers();
    let k_last = adjoint.times.len() - 1;
    let mut active = false;
    let mut rows = Vec::with_capacity(adjoint.times.len());
    let mut next = adjoint.gradient(0);
    for k in 0..=k_last {
        let cur = next;
        next = if k < k_last { adjoint.gradient(k + 1) } else { cur.clone() };
        let row = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let a = -h1.dp(x, 0.5 * (cur[i] + next[i]));
                if a.abs() > bound {
                    active = true;
                }
                a.clamp(-bound, bound)
            })
            .collect();
        rows.push(row);
    }
    Ok((ControlField::new(adjoint.grid, adjoint.times.clone(), rows)?, active))
}

/// Mean-field control problem `inf ∫∫L(x,α) dμ dt + ∫F(μ) dt + G(μ_T)`.
#[derive(Debug, Clone)]
pub struct MFCProblem {
    pub h1: Hamiltonian,
    pub running: FunctionalHandle,
    pub terminal: FunctionalHandle,
    pub horizon: f64,
}

impl MFCProblem {
    /// Default control box `4 (1 + Lip G + T Lip F)`.
    pub fn default_control_bound(&self) -> f64 {
        4.0 * (1.0 + self.terminal.lip_d1 + self.horizon * self.running.lip_d1)
    }
}

/// `∫_{t₀}^{t₁} ∫ L(x, α) dμ dt + ∫_{t₀}^{t₁} F(μ) dt` along a path, with α
/// held at its value at each interval's left end and trapezoids in time.
pub fn running_cost(problem: &MFCProblem, path: &FPPath, alpha: &ControlField, upto: usize) -> Result<f64> {
    let xs = path.grid().centers();
    let mut total = 0.0;
    for k in 0..upto.min(path.times.len() - 1) {
        let dt = path.times[k + 1] - path.times[k];
        let a = alpha.at(path.times[k]);
        let lag = xs
            .iter()
            .zip(a)
            .map(|(&x, &q)| problem.h1.lagrangian(x, q))
            .collect::<Result<Vec<_>>>()?;
        let (m0, m1) = (&path.snapshots[k], &path.snapshots[k + 1]);
        total += 0.5 * dt * (m0.integrate_values(&lag) + m1.integrate_values(&lag));
        total += 0.5 * dt * (problem.running.value(m0) + problem.running.value(m1));
    }
    Ok(total)
}

/// Total cost of a path assumed to be generated by `alpha`.
pub fn cost_evaluate_trusted(problem: &MFCProblem, path: &FPPath, alpha: &ControlField) -> Result<f64> {
    Ok(running_cost(problem, path, alpha, usize::MAX)? + problem.terminal.value(path.last()))
}

/// Re-simulation tolerance (L¹ per snapshot) for [`cost_evaluate`].
pub const RESIMULATION_TOL: f64 = 1e-6;

/// Total cost, after checking that `path` is the solution under `alpha`.
pub fn cost_evaluate(problem: &MFCProblem, path: &FPPath, alpha: &ControlField) -> Result<f64> {
    let t_end = *path.times.last().unwrap();
    let again = fp_solve(&path.snapshots[0], alpha, path.t0(), t_end, &path.scheme)?;
    if again.times.len() != path.times.len() {
        return Err(LabError::PathControlMismatch(format!(
            "re-simulation produced {} snapshots, path has {}",
            again.times.len(),
            path.times.len()
        )));
    }
    for (k, (a, b)) in again.snapshots.iter().zip(&path.snapshots).enumerate() {
        let d = a.l1_distance(b)?;
        if d > RESIMULATION_TOL {
            return Err(LabError::PathControlMismatch(format!(
                "snapshot {k} differs from re-simulation by {d:e} in L1"
            )));
        }
    }
    cost_evaluate_trusted(problem, path, alpha)
}

/// Damping of the fictitious-play iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Damping {
    /// `λ_k = 2 / (k + 2)`.
    FictitiousPlay,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MfcOptions {
    /// Time step of the shared HJB/FP time grid.
    pub dt: f64,
    pub cfl_safety: f64,
    pub tail_tolerance: f64,
    pub max_iter: usize,
    pub tol_value: f64,
    pub tol_control: f64,
    pub damping: Damping,
    pub control_bound: Option<f64>,
}

impl Default for MfcOptions {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            cfl_safety: 0.9,
            tail_tolerance: 1e-6,
            max_iter: 60,
            tol_value: 1e-6,
            tol_control: 1e-3,
            damping: Damping::FictitiousPlay,
            control_bound: None,
        }
    }
}

impl MfcOptions {
    fn scheme(&self) -> SchemeParams {
        SchemeParams {
            dt: self.dt,
            cfl_safety: self.cfl_safety,
            tail_tolerance: self.tail_tolerance,
        }
    }
}

/// Computed value, control, state path and adjoint.
#[derive(Debug, Clone)]
pub struct MFCSolution {
    pub value: f64,
    pub alpha: ControlField,
    pub path: FPPath,
    pub adjoint: AdjointPath,
    pub iterations: usize,
    /// Cost after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
    /// Whether the control clamp bound was hit by the returned control.
    pub clamp_active: bool,
}

/// JSON view of an [`MFCSolution`] (fields are written to CSV separately).
#[derive(Debug, Clone, Serialize)]
pub struct MFCSummary {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub clamp_active: bool,
    pub history: Vec<f64>,
    pub control_sup: f64,
    pub mass_drift: f64,
}

impl MFCSolution {
    pub fn summary(&self) -> MFCSummary {
        MFCSummary {
            value: self.value,
            iterations: self.iterations,
            converged: self.converged,
            clamp_active: self.clamp_active,
            history: self.history.clone(),
            control_sup: self.alpha.sup_norm(),
            mass_drift: self.path.mass_drift(),
        }
    }

    /// Long-format CSV `t,x,alpha,u,density`.
    pub fn write_fields_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "x", "alpha", "u", "density"])?;
        let xs = self.path.grid().centers();
        for (k, t) in self.path.times.iter().enumerate() {
            let a = self.alpha.at(*t);
            for (i, x) in xs.iter().enumerate() {
                w.write_record(&[
                    t.to_string(),
                    x.to_string(),
                    a[i].to_string(),
                    self.adjoint.values[k][i].to_string(),
                    self.path.snapshots[k].density()[i].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn time_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let steps = ((t1 - t0) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut out: Vec<f64> = (0..steps).map(|k| t0 + k as f64 * dt).collect();
    out.push(t1);
    out
}

/// Approximates `U(t₀, μ₀)` by forward-backward sweeps.
pub fn mfc_solve(problem: &MFCProblem, mu0: &GridMeasure, t0: f64, opts: &MfcOptions) -> Result<MFCSolution> {
    let horizon = problem.horizon;
    if !(t0 < horizon) {
        return Err(LabError::InvalidParameter(format!("need t0 < T, got t0 = {t0}, T = {horizon}")));
    }
    let grid = *mu0.grid();
    let times = time_grid(t0, horizon, opts.dt);
    let scheme = opts.scheme();
    let bound = opts.control_bound.unwrap_or_else(|| problem.default_control_bound());

    if problem.running.linear && problem.terminal.linear {
        let source = vec![problem.running.flat_derivative_grid(mu0)];
        let terminal = problem.terminal.flat_derivative_grid(mu0);
        let adjoint = hjb_backward(&problem.h1, &grid, &times, &source, &terminal)?;
        let (alpha, clamp_active) = feedback_control(&problem.h1, &adjoint, bound)?;
        let path = fp_solve(mu0, &alpha, t0, horizon, &scheme)?;
        let value = cost_evaluate_trusted(problem, &path, &alpha)?;
        return Ok(MFCSolution {
            value,
            alpha,
            path,
            adjoint,
            iterations: 1,
            history: vec![value],
            converged: true,
            clamp_active,
        });
    }

    let n = grid.n_cells();
    let mut alpha = ControlField::new(grid, times.clone(), vec![vec![0.0; n]; times.len()])?;
    let mut path = fp_solve(mu0, &alpha, t0, horizon, &scheme)?;
    let mut value = cost_evaluate_trusted(problem, &path, &alpha)?;
    let mut history = vec![value];
    let mut best: Option<MFCSolution> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut clamp_active;
    let mut adjoint;
    loop {
        let source: Vec<Vec<f64>> = path
            .snapshots
            .iter()
            .map(|m| problem.running.flat_derivative_grid(m))
            .collect();
        let terminal = problem.terminal.flat_derivative_grid(path.last());
        adjoint = hjb_backward(&problem.h1, &grid, &times, &source, &terminal)?;
        let (response, active) = feedback_control(&problem.h1, &adjoint, bound)?;
        let lambda = match opts.damping {
            Damping::FictitiousPlay => 2.0 / (iterations as f64 + 2.0),
            Damping::Fixed(l) => l,
        };
        let mut increment = 0.0f64;
        let rows: Vec<Vec<f64>> = alpha
            .values()
            .iter()
            .zip(response.values())
            .map(|(old, new)| {
                old.iter()
                    .zip(new)
                    .map(|(a, b)| {
                        let v = (1.0 - lambda) * a + lambda * b;
                        increment = increment.max((v - a).abs());
                        v
                    })
                    .collect()
            })
            .collect();
        alpha = ControlField::new(grid, times.clone(), rows)?;
        clamp_active = active;
        path = fp_solve(mu0, &alpha, t0, horizon, &scheme)?;
        let new_value = cost_evaluate_trusted(problem, &path, &alpha)?;
        iterations += 1;
        let change = (new_value - value).abs();
        value = new_value;
        history.push(value);
        if best.as_ref().map_or(true, |b| value < b.value) {
            best = Some(MFCSolution {
                value,
                alpha: alpha.clone(),
                path: path.clone(),
                adjoint: adjoint.clone(),
                iterations,
                history: Vec::new(),
                converged: false,
                clamp_active,
            });
        }
        if change < opts.tol_value && increment < opts.tol_control {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
    }
    if converged {
        return Ok(MFCSolution {
            value,
            alpha,
            path,
            adjoint,
            iterations,
            history,
            converged,
            clamp_active,
        });
    }
    let mut out = best.expect("at least one iteration ran");
    out.iterations = iterations;
    out.history = history;
    Ok(out)
}

/// Dynamic programming check at an intermediate time.
#[derive(Debug, Clone, Serialize)]
pub struct DppReport {
    pub value: f64,
    pub partial_cost: f64,
    pub restart_value: f64,
    /// `partial + restart - value`; nonnegative up to slack for any control.
    pub signed: f64,
    pub residual: f64,
}

/// `|U(t₀, μ₀) - (running cost on [t₀, t₁] + U(t₁, μ_{t₁}))|` along the
/// solution's own control.
pub fn dpp_residual(problem: &MFCProblem, solution: &MFCSolution, t1: f64, opts: &MfcOptions) -> Result<DppReport> {
    let path = &solution.path;
    if !(t1 > path.t0() && t1 < problem.horizon) {
        return Err(LabError::InvalidParameter(format!("t1 = {t1} must lie strictly inside (t0, T)")));
    }
    let k = path
        .index_of(t1)
        .ok_or_else(|| LabError::PathControlMismatch(format!("no snapshot at t1 = {t1}")))?;
    let partial_cost = running_cost(problem, path, &solution.alpha, k)?;
    let restart_value = mfc_solve(problem, &path.snapshots[k], t1, opts)?.value;
    let signed = partial_cost + restart_value - solution.value;
    Ok(DppReport {
        value: solution.value,
        partial_cost,
        restart_value,
        signed,
        residual: signed.abs(),
    })
}

/// Running cost of `alpha` on `[t₀, t₁]` plus the restarted value at
/// `(t₁, μ_{t₁})`: an upper bound for `U(t₀, μ₀)` up to discretization.
pub fn dpp_restart_bound(
    problem: &MFCProblem,
    mu0: &GridMeasure,
    t0: f64,
    t1: f64,
    alpha: &ControlField,
    opts: &MfcOptions,
) -> Result<f64> {
    let path = fp_solve(mu0, alpha, t0, t1, &opts.scheme())?;
    let partial = running_cost(problem, &path, alpha, usize::MAX)?;
    Ok(partial + mfc_solve(problem, path.last(), t1, opts)?.value)
}

/// Cole-Hopf solution `u₁(t, x) = -2 log (p_{T-t} * e^{-g₁/2})(x)` of
/// `-∂ₜu - ∂ₓₓu + ½|∂ₓu|² = 0`, `u(T) = g₁`, by Simpson quadrature of the
/// heat kernel `p_τ = g_{2τ}` (log-sum-exp for stability).
pub fn cole_hopf(g1: &ScalarFn, tau: f64, x: f64) -> f64 {
    if tau <= 0.0 {
        return g1(x);
    }
    const PANELS: usize = 400;
    let s = (2.0 * tau).sqrt();
    let width = 12.0 * s;
    let step = 2.0 * width / PANELS as f64;
    let terms: Vec<f64> = (0..=PANELS)
        .map(|k| {
            let z = -width + k as f64 * step;
            let w = if k == 0 || k == PANELS {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (w * step / 3.0).ln() - z * z / (2.0 * s * s) - 0.5 * (2.0 * PI * s * s).ln() - 0.5 * g1(x - z)
        })
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    -2.0 * lse
}

/// `∫ u₁(t₀, x) dμ₀(x)`: the value for `F ≡ 0`, `G(μ) = ∫g₁ dμ`, `H₁ = ½p²`.
pub fn oracle_linear_terminal(g1: &ScalarFn, mu0: &GridMeasure, t0: f64, horizon: f64) -> Result<f64> {
    if t0 > horizon {
        return Err(LabError::InvalidParameter(format!("need t0 <= T, got {t0} > {horizon}")));
    }
    Ok(mu0.integrate(|x| cole_hopf(g1, horizon - t0, x)))
}

/// Hopf-Lax `u₂(t, m) = inf_y {g₂(y) + (m - y)² / (2(T - t))}` by grid scan
/// and golden-section refinement.
pub fn hopf_lax(g2: &ScalarFn, tau: f64, m: f64) -> f64 {
    if tau <= 0.0 {
        return g2(m);
    }
    let f = |y: f64| g2(y) + (m - y).powi(2) / (2.0 * tau);
    let radius = 8.0 * (1.0 + tau);
    let k = 4000;
    let step = 2.0 * radius / k as f64;
    let (mut best_y, mut best) = (m, f(m));
    for j in 0..=k {
        let y = m - radius + j as f64 * step;
        let v = f(y);
        if v < best {
            best = v;
            best_y = y;
        }
    }
    let y = golden_max(&|y| -f(y), best_y - step, best_y + step, 1e-13);
    best.min(f(y))
}

/// `u₂(t₀, ⟨μ₀⟩)`: the value for `F ≡ 0`, `G(μ) = g₂(⟨μ⟩)`, `H₁ = ½p²`.
pub fn oracle_mean_terminal(g2: &ScalarFn, mu0: &GridMeasure, t0: f64, horizon: f64) -> Result<f64> {
    if t0 > horizon {
        return Err(LabError::InvalidParameter(format!("need t0 <= T, got {t0} > {horizon}")));
    }
    Ok(hopf_lax(g2, horizon - t0, mu0.mean()))
}
