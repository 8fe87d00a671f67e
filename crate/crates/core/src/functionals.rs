//! Entropy, penalized entropy, Fischer information, and user-supplied
//! mean-field cost functionals with their flat derivatives.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::measures::{gaussian_on_grid, GaussianSpec, Grid1D, GridMeasure, DENSITY_FLOOR};
use crate::tabulated::{mollify, ScalarFn, Tabulated};
use crate::transport::{wasserstein_1, wasserstein_2};

/// A support edge whose density exceeds this fraction of the peak is
/// treated as a hard cutoff (continuum Fischer information is infinite).
pub const HARD_EDGE_RATIO: f64 = 1e-3;

/// `E(μ) = ∫ μ log μ`; cells at or below the density floor contribute 0.
pub fn entropy(mu: &GridMeasure) -> f64 {
    mu.density()
        .iter()
        .filter(|&&d| d > DENSITY_FLOOR)
        .map(|&d| d * d.ln())
        .sum::<f64>()
        * mu.grid().h()
}

/// `E*(μ) = E(μ) + π ∫|x|² dμ`, nonnegative in the continuum.
pub fn entropy_star(mu: &GridMeasure) -> f64 {
    entropy(mu) + PI * mu.second_moment()
}

/// `E(μ) + M₂(μ)/(2σ) + ½ log(2πσ)`: the relative entropy of `μ` with
/// respect to the centered Gaussian `g_σ`. Nonnegative, zero only at `g_σ`.
pub fn entropy_coercivity_gap(mu: &GridMeasure, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(LabError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok(entropy(mu) + mu.second_moment() / (2.0 * sigma) + 0.5 * (2.0 * PI * sigma).ln())
}

fn check_finite_fischer(mu: &GridMeasure) -> Result<(usize, usize)> {
    let d = mu.density();
    let n = d.len();
    let (first, last) = mu
        .support()
        .ok_or_else(|| LabError::InfiniteFischer("empty support".into()))?;
    if let Some(k) = (first..=last).find(|&k| d[k] <= DENSITY_FLOOR) {
        return Err(LabError::InfiniteFischer(format!(
            "interior zero at x = {}",
            mu.grid().center(k)
        )));
    }
    let peak = d.iter().cloned().fold(0.0, f64::max);
    let hard = |k: usize| d[k] > HARD_EDGE_RATIO * peak;
    if (first > 0 && hard(first)) || (last + 1 < n && hard(last)) {
        return Err(LabError::InfiniteFischer(format!(
            "hard support edge on [{}, {}]",
            mu.grid().edge(first),
            mu.grid().edge(last + 1)
        )));
    }
    Ok((first, last))
}

/// `I(μ) = 4 ∫ |∂ₓ√μ|²`, by central differences of `√ρ` with reflecting
/// ghost cells at the domain boundary.
pub fn fischer_information(mu: &GridMeasure) -> Result<f64> {
    check_finite_fischer(mu)?;
    let s: Vec<f64> = mu.density().iter().map(|d| d.sqrt()).collect();
    let n = s.len();
    let h = mu.grid().h();
    let total: f64 = (0..n)
        .map(|i| {
            let left = if i == 0 { s[0] } else { s[i - 1] };
            let right = if i + 1 == n { s[n - 1] } else { s[i + 1] };
            let g = (right - left) / (2.0 * h);
            g * g
        })
        .sum();
    Ok(4.0 * total * h)
}

/// `∫ |∂ₓ log μ|² dμ` by central differences of `log ρ` on the support.
pub fn fischer_information_log(mu: &GridMeasure) -> Result<f64> {
    check_finite_fischer(mu)?;
    let grad = log_gradient(mu);
    Ok(mu.integrate_values(&grad.iter().map(|g| g * g).collect::<Vec<_>>()))
}

/// Central-difference `∂ₓ log ρ` at cell centers (one-sided at the ends of
/// the support, zero outside it).
pub fn log_gradient(mu: &GridMeasure) -> Vec<f64> {
    let d = mu.density();
    let n = d.len();
    let h = mu.grid().h();
    let pos = |k: usize| d[k] > DENSITY_FLOOR;
    (0..n)
        .map(|i| {
            if !pos(i) {
                return 0.0;
            }
            let l = i > 0 && pos(i - 1);
            let r = i + 1 < n && pos(i + 1);
            match (l, r) {
                (true, true) => (d[i + 1].ln() - d[i - 1].ln()) / (2.0 * h),
                (false, true) => (d[i + 1].ln() - d[i].ln()) / h,
                (true, false) => (d[i].ln() - d[i - 1].ln()) / h,
                (false, false) => 0.0,
            }
        })
        .collect()
}

/// Entropy, penalized entropy, Fischer information and the Gaussian
/// coercivity gap of a measure.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    pub entropy: f64,
    pub estar: f64,
    /// `None` when the continuum value is infinite.
    pub fischer: Option<f64>,
    pub sigma: f64,
    pub coercivity_gap: f64,
}

impl EntropyReport {
    pub fn compute(mu: &GridMeasure, sigma: f64) -> Result<Self> {
        Ok(Self {
            entropy: entropy(mu),
            estar: entropy_star(mu),
            fischer: fischer_information(mu).ok(),
            sigma,
            coercivity_gap: entropy_coercivity_gap(mu, sigma)?,
        })
    }
}

/// Minimizer of the discrete `E*` found by entropic mirror descent from the
/// uniform density, together with its fitted variance parameter.
pub fn estar_minimizer(grid: &Grid1D) -> Result<(GridMeasure, f64)> {
    let xs = grid.centers();
    let mut log_rho = vec![0.0; xs.len()];
    // Gradient of E* in log coordinates is log ρ + 1 + πx².
    for _ in 0..200 {
        let target: Vec<f64> = xs.iter().map(|x| -PI * x * x).collect();
        let mut delta = 0.0f64;
        for (l, t) in log_rho.iter_mut().zip(&target) {
            let new = 0.5 * *l + 0.5 * t;
            delta = delta.max((new - *l).abs());
            *l = new;
        }
        if delta < 1e-13 {
            break;
        }
    }
    let mu = GridMeasure::from_log_density(*grid, &log_rho)?;
    let sigma = mu.variance();
    Ok((mu, sigma))
}

pub type MeasureFn = Arc<dyn Fn(&GridMeasure) -> f64 + Send + Sync>;
pub type FlatDerivativeFn = Arc<dyn Fn(&GridMeasure, f64) -> f64 + Send + Sync>;

/// A mean-field cost `F: P₂(ℝ) → ℝ` with its flat derivative `δF/δμ(μ, x)`
/// and declared regularity metadata.
#[derive(Clone)]
pub struct FunctionalHandle {
    pub name: String,
    value: MeasureFn,
    flat_derivative: FlatDerivativeFn,
    /// Declared `d₁`-Lipschitz constant.
    pub lip_d1: f64,
    /// Declared `d₂`-Lipschitz constant, when known separately.
    pub lip_d2: Option<f64>,
    /// Declared sup-norm bound.
    pub bound: f64,
    /// Flat derivative does not depend on the measure.
    pub linear: bool,
}

impl std::fmt::Debug for FunctionalHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FunctionalHandle")
            .field("name", &self.name)
            .field("lip_d1", &self.lip_d1)
            .field("lip_d2", &self.lip_d2)
            .field("bound", &self.bound)
            .field("linear", &self.linear)
            .finish()
    }
}

impl FunctionalHandle {
    pub fn new(
        name: impl Into<String>,
        value: MeasureFn,
        flat_derivative: FlatDerivativeFn,
        lip_d1: f64,
        bound: f64,
        linear: bool,
    ) -> Self {
        Self {
            name: name.into(),
            value,
            flat_derivative,
            lip_d1,
            lip_d2: None,
            bound,
            linear,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(
            format!("constant:{c}"),
            Arc::new(move |_| c),
            Arc::new(|_, _| 0.0),
            0.0,
            c.abs(),
            true,
        )
    }

    /// `F(μ) = ∫ f₀ dμ`.
    pub fn linear(name: impl Into<String>, f0: ScalarFn, lip: f64, bound: f64) -> Self {
        let f_val = f0.clone();
        Self::new(
            name,
            Arc::new(move |mu: &GridMeasure| mu.integrate(|x| f_val(x))),
            Arc::new(move |_, x| f0(x)),
            lip,
            bound,
            true,
        )
    }

    pub fn linear_tabulated(name: impl Into<String>, table: Tabulated) -> Self {
        let (lip, bound) = (table.lipschitz(), table.sup_norm());
        Self::linear(name, table.into_fn(), lip, bound)
    }

    /// `G(μ) = g₂(⟨μ⟩)`, with flat derivative `g₂'(⟨μ⟩) x`. The derivative is
    /// taken from `g₂` mollified at `mollify_scale` (no mollification at 0);
    /// values use the raw `g₂`.
    pub fn mean(name: impl Into<String>, g2: ScalarFn, lip: f64, bound: f64, mollify_scale: f64) -> Self {
        let smooth = mollify(g2.clone(), mollify_scale);
        let step = if mollify_scale > 0.0 { 1e-2 * mollify_scale } else { 1e-6 };
        Self::new(
            name,
            Arc::new(move |mu: &GridMeasure| g2(mu.mean())),
            Arc::new(move |mu: &GridMeasure, x| {
                let m = mu.mean();
                (smooth(m + step) - smooth(m - step)) / (2.0 * step) * x
            }),
            lip,
            bound,
            false,
        )
    }

    /// Same functional plus a constant.
    pub fn shifted(&self, c: f64) -> Self {
        let value = self.value.clone();
        Self {
            name: format!("{}+{c}", self.name),
            value: Arc::new(move |mu| value(mu) + c),
            bound: self.bound + c.abs(),
            ..self.clone()
        }
    }

    pub fn value(&self, mu: &GridMeasure) -> f64 {
        (self.value)(mu)
    }

    pub fn flat_derivative(&self, mu: &GridMeasure, x: f64) -> f64 {
        (self.flat_derivative)(mu, x)
    }

    /// Flat derivative sampled at the cell centers of `mu`'s grid.
    pub fn flat_derivative_grid(&self, mu: &GridMeasure) -> Vec<f64> {
        mu.grid()
            .centers()
            .into_iter()
            .map(|x| self.flat_derivative(mu, x))
            .collect()
    }

    /// `d₂`-Lipschitz constant: the declared one, else the `d₁` constant
    /// (valid since `d₁ ≤ d₂`).
    pub fn lip_d2_or_d1(&self) -> f64 {
        self.lip_d2.unwrap_or(self.lip_d1)
    }
}

/// Metric used when estimating Lipschitz constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    D1,
    D2,
}

impl Metric {
    pub fn distance(&self, mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
        match self {
            Metric::D1 => wasserstein_1(mu, nu),
            Metric::D2 => wasserstein_2(mu, nu),
        }
    }
}

/// Random Gaussian measure pairs: half translate pairs, half independent.
#[derive(Debug, Clone, Copy)]
pub struct PairSampler {
    pub mean_range: (f64, f64),
    pub sigma_range: (f64, f64),
    pub shift_range: (f64, f64),
}

impl PairSampler {
    pub fn for_grid(grid: &Grid1D) -> Self {
        let l = grid.half_width();
        Self {
            mean_range: (-0.4 * l, 0.4 * l),
            sigma_range: (0.002, 0.5),
            shift_range: (0.02, 0.3),
        }
    }

    fn draw(&self, grid: &Grid1D, rng: &mut ChaCha8Rng, trial: usize) -> Option<(GridMeasure, GridMeasure)> {
        let mean = rng.gen_range(self.mean_range.0..=self.mean_range.1);
        // Log-uniform variance keeps narrow and wide profiles both represented.
        let (lo, hi) = self.sigma_range;
        let sigma = (rng.gen_range(lo.ln()..=hi.ln())).exp().max(grid.h() * grid.h());
        let a = gaussian_on_grid(grid, &GaussianSpec::new(mean, sigma).ok()?).ok()?;
        let b = if trial % 2 == 0 {
            let shift = rng.gen_range(self.shift_range.0..=self.shift_range.1);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            gaussian_on_grid(grid, &GaussianSpec::new(mean + sign * shift, sigma).ok()?).ok()?
        } else {
            let m2 = rng.gen_range(self.mean_range.0..=self.mean_range.1);
            let s2 = (rng.gen_range(lo.ln()..=hi.ln())).exp().max(grid.h() * grid.h());
            gaussian_on_grid(grid, &GaussianSpec::new(m2, s2).ok()?).ok()?
        };
        Some((a, b))
    }
}

/// Sampled lower bound on `Lip(F; d_p)` over random Gaussian pairs.
pub fn lipschitz_estimate(
    functional: &FunctionalHandle,
    grid: &Grid1D,
    metric: Metric,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    lipschitz_estimate_with(functional, grid, &PairSampler::for_grid(grid), metric, trials, seed)
}

pub fn lipschitz_estimate_with(
    functional: &FunctionalHandle,
    grid: &Grid1D,
    sampler: &PairSampler,
    metric: Metric,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(LabError::InvalidParameter("trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for trial in 0..trials {
        let Some((a, b)) = sampler.draw(grid, &mut rng, trial) else {
            continue;
        };
        let d = metric.distance(&a, &b)?;
        if d > 1e-12 {
            best = best.max((functional.value(&a) - functional.value(&b)).abs() / d);
        }
    }
    Ok(best)
}
