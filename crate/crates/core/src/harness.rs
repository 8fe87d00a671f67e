//! Verification harness: inequality checks with explicit slack, the
//! stability and d₂-Lipschitz envelopes, and the suite runner that turns a
//! [`RunConfig`] into a deterministic JSON report.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{GridConfig, RunConfig};
use crate::control::{
    dpp_residual, mfc_solve, oracle_linear_terminal, oracle_mean_terminal, Hamiltonian, MFCProblem, MfcOptions,
};
use crate::doubling::{
    doubling_maximize, log_gradient_mass, single_measure_maximizer, vanishing_delta_scan, DoublingParams,
};
use crate::error::{LabError, Result};
use crate::fokker_planck::{
    entropy_dissipation_report, fischer_bound_check, fp_solve, heat_oracle_error, ControlField, SchemeParams,
};
use crate::functionals::{entropy, entropy_coercivity_gap, fischer_information, FunctionalHandle};
use crate::measures::{gaussian_on_grid, make_grid, GaussianSpec, Grid1D, GridMeasure};
use crate::tabulated::ScalarFn;
use crate::transport::{displacement_action, wasserstein_2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

/// One checked inequality `lhs ≤ rhs·(1 + slack) + floor`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub floor: f64,
    pub status: Status,
    /// The inequality or identity being checked, in words.
    #[serde(rename = "paper_ref")]
    pub reference: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckOutcome {
    pub fn compare(name: &str, lhs: f64, rhs: f64, slack: f64, floor: f64, reference: &str) -> Self {
        let mut c = Self {
            name: name.into(),
            lhs,
            rhs,
            slack,
            floor,
            status: Status::Fail,
            reference: reference.into(),
            note: None,
        };
        c.status = c.evaluate();
        c
    }

    /// `|error| ≤ tol`, encoded with the tolerance as absolute floor.
    pub fn within(name: &str, error: f64, tol: f64, reference: &str) -> Self {
        Self::compare(name, error.abs(), 0.0, 0.0, tol, reference)
    }

    pub fn inconclusive(name: &str, reference: &str, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            lhs: f64::NAN,
            rhs: f64::NAN,
            slack: 0.0,
            floor: 0.0,
            status: Status::Inconclusive,
            reference: reference.into(),
            note: Some(note.into()),
        }
    }

    fn evaluate(&self) -> Status {
        if self.lhs.is_finite() && self.rhs.is_finite() && self.lhs <= self.rhs * (1.0 + self.slack) + self.floor {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    /// Re-evaluates with the given slack and no absolute floor.
    pub fn with_slack_override(mut self, slack: f64) -> Self {
        if self.status != Status::Inconclusive {
            self.slack = slack;
            self.floor = 0.0;
            self.status = self.evaluate();
        }
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Solver non-convergence is inconclusive; any other error fails the check.
fn settle(name: &str, reference: &str, r: Result<CheckOutcome>) -> CheckOutcome {
    match r {
        Ok(c) => c,
        Err(e @ (LabError::Diverged { .. } | LabError::TailContact { .. } | LabError::Stagnation(_))) => {
            CheckOutcome::inconclusive(name, reference, e.to_string())
        }
        Err(e) => CheckOutcome {
            status: Status::Fail,
            ..CheckOutcome::inconclusive(name, reference, e.to_string())
        },
    }
}

fn gauss(grid: &Grid1D, m: f64, s: f64) -> Result<GridMeasure> {
    gaussian_on_grid(grid, &GaussianSpec::new(m, s)?)
}

/// Grid with the same spacing on `[-half_width, half_width]`.
pub fn same_spacing(grid: &Grid1D, half_width: f64) -> Result<Grid1D> {
    make_grid(half_width, (half_width / grid.h() * 2.0).round() as usize)
}

pub fn refined(grid: &Grid1D, factor: usize) -> Result<Grid1D> {
    make_grid(grid.half_width(), grid.n_cells() * factor)
}

/// Linear terminal cost `∫tanh dμ` with quadratic Hamiltonian and no running cost.
pub fn linear_benchmark(horizon: f64) -> MFCProblem {
    let g1: ScalarFn = Arc::new(|x: f64| x.tanh());
    MFCProblem {
        h1: Hamiltonian::quadratic(),
        running: FunctionalHandle::constant(0.0),
        terminal: FunctionalHandle::linear("tanh", g1, 1.0, 1.0),
        horizon,
    }
}

/// `∫ -k·min(1, |x|) dμ`.
pub fn kink(k: f64) -> FunctionalHandle {
    FunctionalHandle::linear(format!("kink:{k}"), Arc::new(move |x: f64| -k * x.abs().min(1.0)), k, k)
}

/// `sup_{x, |p| ≤ p_max} [H₂ - H₁]₊ / (1 + p²)` on a sample lattice.
pub fn hamiltonian_gap(h1: &Hamiltonian, h2: &Hamiltonian, grid: &Grid1D, p_max: f64) -> f64 {
    let xs = grid.centers();
    let stride = (xs.len() / 128).max(1);
    let mut best = 0.0f64;
    for x in xs.iter().step_by(stride) {
        for k in 0..=200 {
            let p = -p_max + 2.0 * p_max * k as f64 / 200.0;
            best = best.max((h2.eval(*x, p) - h1.eval(*x, p)).max(0.0) / (1.0 + p * p));
        }
    }
    best
}

/// `U¹(t,μ) - U²(t,μ) ≤ sup(G₁ - G₂)₊ + (T - t)(1 + 8L²) M` at every point,
/// with `M` the weighted Hamiltonian gap and `L` the larger declared
/// Lipschitz bound `Lip G + (T - t) Lip F`. Reports the worst point.
pub fn stability_gap(
    name: &str,
    p1: &MFCProblem,
    p2: &MFCProblem,
    points: &[(f64, GridMeasure)],
    opts: &MfcOptions,
    slack: f64,
) -> Result<CheckOutcome> {
    const REFERENCE: &str = "stability: U1 - U2 <= sup(G1 - G2)+ + (T - t)(1 + 8 L^2) sup[H2 - H1]+/(1 + p^2)";
    let Some((_, first)) = points.first() else {
        return Err(LabError::InvalidParameter("no evaluation points".into()));
    };
    let grid = *first.grid();
    let mut samples: Vec<GridMeasure> = points.iter().map(|(_, m)| m.clone()).collect();
    for m in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        for s in [0.1, 0.5, 1.0] {
            samples.push(gauss(&grid, m, s)?);
        }
    }
    let g_gap = samples
        .iter()
        .map(|m| (p1.terminal.value(m) - p2.terminal.value(m)).max(0.0))
        .fold(0.0, f64::max);
    let p_max = opts
        .control_bound
        .unwrap_or_else(|| p1.default_control_bound().max(p2.default_control_bound()));
    let m_gap = hamiltonian_gap(&p1.h1, &p2.h1, &grid, p_max);
    let (mut lhs, mut rhs, mut worst) = (f64::NAN, f64::NAN, f64::NEG_INFINITY);
    for (t, mu) in points {
        let (s1, s2) = (mfc_solve(p1, mu, *t, opts)?, mfc_solve(p2, mu, *t, opts)?);
        if !(s1.converged && s2.converged) {
            return Ok(CheckOutcome::inconclusive(name, REFERENCE, format!("mfc_solve did not converge at t = {t}")));
        }
        let tau = p1.horizon - t;
        let l = (p1.terminal.lip_d1 + tau * p1.running.lip_d1).max(p2.terminal.lip_d1 + tau * p2.running.lip_d1);
        let (a, b) = (s1.value - s2.value, g_gap + tau * (1.0 + 8.0 * l * l) * m_gap);
        if a - b * (1.0 + slack) > worst {
            worst = a - b * (1.0 + slack);
            lhs = a;
            rhs = b;
        }
    }
    Ok(CheckOutcome::compare(name, lhs, rhs, slack, 1e-9, REFERENCE))
}

/// Envelope test `max |U(t,μ) - U(t,ν)| / d₂(μ,ν) ≤ C₀ (1 + Lip(G; d₂))`.
pub fn d2_lipschitz_scan(
    name: &str,
    problem: &MFCProblem,
    t: f64,
    pairs: &[(GridMeasure, GridMeasure)],
    opts: &MfcOptions,
    c0: f64,
) -> Result<CheckOutcome> {
    const REFERENCE: &str = "d2-Lipschitz envelope: Lip(U(t,.); d2) <= C0 (1 + Lip(G; d2))";
    let mut ratio = 0.0f64;
    for (mu, nu) in pairs {
        let d = wasserstein_2(mu, nu)?;
        if d <= 0.0 {
            return Err(LabError::InvalidParameter("pair at zero d2 distance".into()));
        }
        let (a, b) = (mfc_solve(problem, mu, t, opts)?, mfc_solve(problem, nu, t, opts)?);
        if !(a.converged && b.converged) {
            return Ok(CheckOutcome::inconclusive(name, REFERENCE, "mfc_solve did not converge"));
        }
        ratio = ratio.max((a.value - b.value).abs() / d);
    }
    let rhs = c0 * (1.0 + problem.terminal.lip_d2_or_d1());
    Ok(CheckOutcome::compare(name, ratio, rhs, 0.0, 0.0, REFERENCE))
}

/// Machine-readable suite output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub grid: GridConfig,
    pub params: BTreeMap<String, serde_json::Value>,
    pub checks: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn failed(&self) -> bool {
        self.checks.iter().any(|c| c.status == Status::Fail)
    }

    pub fn inconclusive(&self) -> bool {
        self.checks.iter().any(|c| c.status == Status::Inconclusive)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Every check the harness knows, in report order.
pub const ALL_CHECKS: &[&str] = &[
    "doubling.diagonal_eps0.05",
    "doubling.diagonal_eps0.1",
    "doubling.diagonal_eps0.2",
    "doubling.log_gradient_limit",
    "doubling.p_bound",
    "doubling.positivity",
    "doubling.vanishing_delta",
    "fpe.dissipation_drift",
    "fpe.dissipation_heat",
    "fpe.fischer_heat_monotone",
    "fpe.fischer_ou_refinement",
    "fpe.heat_l1",
    "fpe.heat_refinement",
    "fpe.time_lipschitz",
    "functionals.entropy_gaussian",
    "functionals.fischer_s0.5",
    "functionals.fischer_s1",
    "functionals.fischer_s2",
    "functionals.gap_equal",
    "functionals.gap_mismatch",
    "lipschitz.d2_envelope",
    "mfc.dpp_midpoint",
    "mfc.linear_oracle_a",
    "mfc.linear_oracle_b",
    "mfc.mean_oracle",
    "stability.hamiltonian_shift",
    "stability.hamiltonian_shift_reverse",
    "stability.identical",
    "stability.terminal_shift_minus",
    "stability.terminal_shift_plus",
    "transport.action_k16",
    "transport.d2_dilation",
    "transport.d2_translation",
];

/// Checks selected by a named preset.
pub fn preset(name: &str) -> Option<Vec<&'static str>> {
    match name {
        "default" => Some(ALL_CHECKS.to_vec()),
        "quick" => Some(
            ALL_CHECKS
                .iter()
                .copied()
                .filter(|c| c.starts_with("transport.") || c.starts_with("functionals."))
                .collect(),
        ),
        _ => None,
    }
}

/// Benchmark horizon of the control checks.
pub const HORIZON: f64 = 0.5;

struct Ctx<'a> {
    cfg: &'a RunConfig,
    grid: Grid1D,
    opts: MfcOptions,
}

fn reference_of(name: &str) -> &'static str {
    match name.split('.').next().unwrap_or("") {
        _ if name.starts_with("transport.action") => "displacement action of the interpolant equals d2^2",
        "transport" => "quantile-function oracle for d2 between Gaussians",
        _ if name.starts_with("functionals.fischer") => "I(g_s) = 1/s",
        _ if name.starts_with("functionals.gap") => "entropy coercivity gap: zero iff mu = g_s, positive otherwise",
        "functionals" => "E(g_1) = -log(2 pi)/2 - 1/2",
        _ if name.starts_with("fpe.heat") => "heat flow from g_s equals g_(s + 2t)",
        _ if name.starts_with("fpe.dissipation") => {
            "E(mu_t) - E(mu_0) + int I ds - int int dlog(mu) alpha dmu ds = 0"
        }
        _ if name.starts_with("fpe.time") => "d2(mu_t, mu_0) <= (|alpha|_inf + I(mu_0)^(1/2)) |t - t0|",
        "fpe" => "I(mu_t) <= e^(C t) I(mu_0) + (e^(C t) - 1) sup |mu_s|_L1",
        _ if name.starts_with("mfc.dpp") => "dynamic programming: U(t0) = running cost to t1 + U(t1, mu_t1)",
        _ if name.starts_with("mfc.mean") => "U(t, mu) = u2(t, <mu>) with u2 the Hopf-Lax solution",
        "mfc" => "U(t, mu) = int u1(t, x) dmu with u1 the Cole-Hopf solution",
        _ if name.starts_with("doubling.diagonal") => "d2(mu_bar, nu_bar) <= 2 (L_U + L_V) eps",
        _ if name.starts_with("doubling.p_bound") => "|p + delta dlog(mu_bar)|_inf <= Lip(U; d1)",
        _ if name.starts_with("doubling.positivity") => "entropy-penalized maximizer is strictly positive",
        _ if name.starts_with("doubling.log_gradient") => "delta int |dlog(mu_bar)| dmu_bar -> 1 as delta -> 0",
        "doubling" => "delta (E*(mu_bar) + E*(nu_bar)) -> 0 as delta -> 0",
        "stability" => "U1 - U2 <= sup(G1 - G2)+ + (T - t)(1 + 8 L^2) sup[H2 - H1]+/(1 + p^2)",
        "lipschitz" => "Lip(U(t,.); d2) <= C0 (1 + Lip(G; d2))",
        _ => "",
    }
}

fn run_check(name: &str, ctx: &Ctx) -> CheckOutcome {
    let reference = reference_of(name);
    let outcome = settle(name, reference, check_body(name, ctx, reference));
    match ctx.cfg.suite.slack_override {
        Some(s) => outcome.with_slack_override(s),
        None => outcome,
    }
}

fn check_body(name: &str, ctx: &Ctx, reference: &str) -> Result<CheckOutcome> {
    let g = &ctx.grid;
    let wide = same_spacing(g, g.half_width() + 2.0)?;
    let fine_dt = SchemeParams::with_dt(2.5e-3);
    let within = |err: f64, tol: f64| Ok(CheckOutcome::within(name, err, tol, reference));
    let linear = linear_benchmark(HORIZON);
    let tanh: ScalarFn = Arc::new(|x: f64| x.tanh());
    match name {
        "transport.d2_translation" => within(wasserstein_2(&gauss(g, 0.0, 1.0)?, &gauss(g, 1.0, 1.0)?)? - 1.0, 2e-3),
        "transport.d2_dilation" => {
            let big = same_spacing(g, 2.0 * g.half_width())?;
            within(wasserstein_2(&gauss(&big, 0.0, 1.0)?, &gauss(&big, 0.0, 4.0)?)? - 1.0, 2e-3)
        }
        "transport.action_k16" => {
            let (a, b) = (gauss(g, 0.0, 1.0)?, gauss(g, 1.0, 1.0)?);
            let d2 = wasserstein_2(&a, &b)?.powi(2);
            within((displacement_action(&a, &b, 16)? - d2) / d2, 0.02)
        }
        "functionals.entropy_gaussian" => within(entropy(&gauss(g, 0.0, 1.0)?) + 0.5 * (2.0 * PI).ln() + 0.5, 1e-3),
        "functionals.fischer_s0.5" => within(fischer_information(&gauss(g, 0.0, 0.5)?)? - 2.0, 1e-2),
        "functionals.fischer_s1" => within(fischer_information(&gauss(g, 0.0, 1.0)?)? - 1.0, 1e-2),
        "functionals.fischer_s2" => within(fischer_information(&gauss(&wide, 0.0, 2.0)?)? - 0.5, 1e-2),
        "functionals.gap_equal" => within(entropy_coercivity_gap(&gauss(g, 0.0, 1.0)?, 1.0)?, 1e-3),
        "functionals.gap_mismatch" => {
            let mut gap = f64::INFINITY;
            for (m, s, sigma) in [(0.0, 0.5, 1.0), (1.0, 1.0, 1.0), (0.0, 1.0, 0.25)] {
                gap = gap.min(entropy_coercivity_gap(&gauss(g, m, s)?, sigma)?);
            }
            Ok(CheckOutcome::compare(name, 1e-6, gap, 0.0, 0.0, reference).with_note("smallest gap over mismatched pairs"))
        }
        "fpe.heat_l1" => within(heat_oracle_error(g, 0.5, 0.25, &fine_dt)?, 1e-2),
        "fpe.heat_refinement" => {
            let coarse = make_grid(g.half_width(), g.n_cells() / 2)?;
            let e0 = heat_oracle_error(&coarse, 0.5, 0.25, &SchemeParams::with_dt(5e-3))?;
            let e1 = heat_oracle_error(g, 0.5, 0.25, &fine_dt)?;
            Ok(CheckOutcome::compare(name, e1, 0.5 * e0, 0.1, 0.0, reference))
        }
        "fpe.dissipation_heat" | "fpe.dissipation_drift" => {
            let (grid, c) = if name.ends_with("heat") { (*g, 0.0) } else { (refined(g, 2)?, 1.0) };
            let alpha = ControlField::constant(grid, 0.0, c)?;
            let path = fp_solve(&gauss(&grid, 0.0, 0.5)?, &alpha, 0.0, 0.25, &fine_dt)?;
            within(entropy_dissipation_report(&path, &alpha)?.max_residual(), 5e-3)
        }
        "fpe.time_lipschitz" => {
            let mut worst = 0.0f64;
            for s in [0.5, 1.0, 2.0] {
                let grid = if s > 1.0 { wide } else { *g };
                let mu0 = gauss(&grid, 0.0, s)?;
                let i0 = fischer_information(&mu0)?;
                for alpha in [
                    ControlField::zero(grid, 0.0)?,
                    ControlField::constant(grid, 0.0, 1.0)?,
                    ControlField::stationary(grid, 0.0, |x| -x)?,
                ] {
                    let path = fp_solve(&mu0, &alpha, 0.0, 0.3, &SchemeParams::with_dt(1e-2))?;
                    let rate = alpha.sup_norm() + i0.sqrt();
                    for (t, mu) in path.times.iter().zip(&path.snapshots).skip(1) {
                        worst = worst.max(wasserstein_2(&mu0, mu)? / (rate * t));
                    }
                }
            }
            Ok(CheckOutcome::compare(name, worst, 1.0, 0.05, 0.0, reference)
                .with_note("largest ratio d2 / bound over drifts {0, 1, -x} and variances {0.5, 1, 2}"))
        }
        "fpe.fischer_heat_monotone" => {
            let zero = ControlField::zero(*g, 0.0)?;
            let path = fp_solve(&gauss(g, 0.0, 0.5)?, &zero, 0.0, 0.5, &SchemeParams::with_dt(1e-2))?;
            let fb = fischer_bound_check(&path, &zero, 0.0)?;
            let peak = fb.fischer.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok(CheckOutcome::compare(name, peak, fb.fischer[0], 0.01, 0.0, reference))
        }
        "fpe.fischer_ou_refinement" => {
            let mut cs = Vec::new();
            for grid in [wide, refined(&wide, 2)?] {
                let ou = ControlField::stationary(grid, 0.0, |x| -x)?;
                let path = fp_solve(&gauss(&grid, 0.0, 2.0)?, &ou, 0.0, 1.0, &SchemeParams::with_dt(1e-2))?;
                let c = fischer_bound_check(&path, &ou, 1.0)?.smallest_c;
                if !c.is_finite() {
                    return Err(LabError::NonFinite("smallest C".into()));
                }
                cs.push(c);
            }
            Ok(CheckOutcome::within(name, cs[1] / cs[0] - 1.0, 0.2, reference)
                .with_note(format!("smallest C = {:.4} (n), {:.4} (2n)", cs[0], cs[1])))
        }
        "mfc.linear_oracle_a" | "mfc.linear_oracle_b" => {
            let (m, s) = if name.ends_with('a') { (0.5, 0.25) } else { (-1.0, 0.5) };
            let mu0 = gauss(g, m, s)?;
            let sol = mfc_solve(&linear, &mu0, 0.0, &ctx.opts)?;
            if !sol.converged {
                return Ok(CheckOutcome::inconclusive(name, reference, "mfc_solve did not converge"));
            }
            let oracle = oracle_linear_terminal(&tanh, &mu0, 0.0, HORIZON)?;
            within((sol.value - oracle) / oracle.abs(), 0.02)
        }
        "mfc.dpp_midpoint" => {
            let sol = mfc_solve(&linear, &gauss(g, 0.5, 0.25)?, 0.0, &ctx.opts)?;
            let rep = dpp_residual(&linear, &sol, 0.5 * HORIZON, &ctx.opts)?;
            within(rep.residual / sol.value.abs().max(1.0), 0.02)
        }
        "mfc.mean_oracle" => {
            let raw: ScalarFn = Arc::new(|y: f64| -y.abs());
            let p = MFCProblem {
                terminal: FunctionalHandle::mean("neg-abs", raw.clone(), 1.0, g.half_width(), 2.0 * g.h()),
                ..linear.clone()
            };
            let mu0 = gauss(g, 0.5, 0.5)?;
            let sol = mfc_solve(&p, &mu0, 0.0, &ctx.opts)?;
            if !sol.converged {
                return Ok(CheckOutcome::inconclusive(name, reference, "mfc_solve did not converge"));
            }
            let oracle = oracle_mean_terminal(&raw, &mu0, 0.0, HORIZON)?;
            within((sol.value - oracle) / oracle.abs(), 0.02)
        }
        _ if name.starts_with("stability.") => {
            let points = vec![(0.0, gauss(g, 0.5, 0.25)?), (0.25, gauss(g, -1.0, 0.5)?)];
            let (p1, p2) = match name {
                "stability.identical" => (linear.clone(), linear.clone()),
                "stability.terminal_shift_plus" => (linear.clone(), MFCProblem { terminal: linear.terminal.shifted(0.3), ..linear.clone() }),
                "stability.terminal_shift_minus" => (linear.clone(), MFCProblem { terminal: linear.terminal.shifted(-0.3), ..linear.clone() }),
                "stability.hamiltonian_shift" => (linear.clone(), MFCProblem { h1: linear.h1.shifted(0.2), ..linear.clone() }),
                "stability.hamiltonian_shift_reverse" => (MFCProblem { h1: linear.h1.shifted(0.2), ..linear.clone() }, linear.clone()),
                _ => return Err(LabError::InvalidParameter(format!("unknown check {name}"))),
            };
            stability_gap(name, &p1, &p2, &points, &ctx.opts, 0.10)
        }
        "lipschitz.d2_envelope" => {
            let pairs = vec![
                (gauss(g, 0.0, 0.3)?, gauss(g, 0.4, 0.3)?),
                (gauss(g, -1.0, 0.5)?, gauss(g, 0.5, 0.2)?),
            ];
            d2_lipschitz_scan(name, &linear, 0.0, &pairs, &ctx.opts, ctx.cfg.suite.envelope_c0)
        }
        _ if name.starts_with("doubling.") => doubling_check(name, ctx, reference),
        _ => Err(LabError::InvalidParameter(format!("unknown check {name}"))),
    }
}

fn doubling_check(name: &str, ctx: &Ctx, reference: &str) -> Result<CheckOutcome> {
    let g = &ctx.grid;
    let zero = FunctionalHandle::constant(0.0);
    let params = DoublingParams {
        eps: 0.1,
        delta: 0.05,
        ..Default::default()
    };
    let u = kink(1.0);
    match name {
        "doubling.positivity" | "doubling.p_bound" => {
            let r = doubling_maximize(&u, &zero, g, &params)?;
            if !r.converged {
                return Ok(CheckOutcome::inconclusive(name, reference, "doubling ascent did not reach stationarity"));
            }
            Ok(if name.ends_with("positivity") {
                CheckOutcome::compare(name, f64::MIN_POSITIVE, r.diagnostics.positivity_margin, 0.0, 0.0, reference)
                    .with_note("smallest density on the 99.9% bulk of mu_bar and nu_bar")
            } else {
                CheckOutcome::compare(name, r.diagnostics.p_residual, u.lip_d1, 0.1, 0.0, reference)
            })
        }
        _ if name.starts_with("doubling.diagonal_eps") => {
            let eps: f64 = name["doubling.diagonal_eps".len()..]
                .parse()
                .map_err(|_| LabError::InvalidParameter(name.into()))?;
            let r = doubling_maximize(&u, &u, g, &DoublingParams { eps, ..params })?;
            let bound = 2.0 * (u.lip_d1 + u.lip_d1) * eps;
            Ok(CheckOutcome::compare(name, r.diagnostics.diagonal_d2, bound, 0.1, 0.0, reference))
        }
        "doubling.log_gradient_limit" => {
            // The kink of u must be resolved on the scale δ.
            let fine = refined(g, 8)?;
            let delta = 0.0125;
            let uvals: Vec<f64> = fine.centers().iter().map(|x| -x.abs().min(1.0)).collect();
            let r = single_measure_maximizer(&uvals, &fine, delta, 100, 1e-10)?;
            Ok(CheckOutcome::within(name, log_gradient_mass(&r.measure, delta) - 1.0, 0.2, reference))
        }
        "doubling.vanishing_delta" => {
            // Steep enough that the δ log(1/δ) decay is already asymptotic at δ = 0.1.
            let (uk, vk) = (kink(10.0), kink(-10.0));
            let scan = vanishing_delta_scan(&uk, &vk, g, &params, &[0.1, 0.05, 0.025, 0.0125])?;
            let (first, last) = (scan[0].weighted_estar, scan[scan.len() - 1].weighted_estar);
            Ok(CheckOutcome::compare(name, last, first / 4.0, 0.0, 0.0, reference)
                .with_note(format!("ratio first/last = {:.3}", first / last)))
        }
        _ => Err(LabError::InvalidParameter(format!("unknown check {name}"))),
    }
}

/// Runs the configured checks on a bounded worker pool; the report is
/// ordered by check name and independent of scheduling.
pub fn run_suite(cfg: &RunConfig) -> Result<SuiteReport> {
    let names: Vec<String> = match &cfg.suite.checks {
        Some(list) => list.clone(),
        None => preset(&cfg.suite.name)
            .ok_or_else(|| LabError::Config {
                path: "suite.name".into(),
                message: format!("unknown suite `{}`", cfg.suite.name),
            })?
            .into_iter()
            .map(String::from)
            .collect(),
    };
    for (i, n) in names.iter().enumerate() {
        if !ALL_CHECKS.contains(&n.as_str()) {
            return Err(LabError::Config {
                path: format!("suite.checks[{i}]"),
                message: format!("unknown check `{n}`"),
            });
        }
    }
    let ctx = Ctx {
        cfg,
        grid: cfg.grid()?,
        opts: cfg.mfc_options()?,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| LabError::InvalidParameter(format!("thread pool: {e}")))?;
    let mut checks: Vec<CheckOutcome> = pool.install(|| names.par_iter().map(|n| run_check(n, &ctx)).collect());
    for c in &mut checks {
        if c.reference.is_empty() {
            c.status = Status::Fail;
            c.note = Some("check carries no reference statement".into());
        }
    }
    checks.sort_by(|a, b| a.name.cmp(&b.name));

    let mut params = BTreeMap::new();
    params.insert("seed".into(), serde_json::json!(cfg.seed));
    params.insert("scheme".into(), serde_json::to_value(&cfg.scheme)?);
    params.insert("mfc".into(), serde_json::to_value(ctx.opts)?);
    params.insert("horizon".into(), serde_json::json!(HORIZON));
    params.insert("envelope_c0".into(), serde_json::json!(cfg.suite.envelope_c0));
    params.insert("slack_override".into(), serde_json::json!(cfg.suite.slack_override));
    Ok(SuiteReport {
        suite: cfg.suite.name.clone(),
        grid: cfg.grid.clone(),
        params,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn outcome_invariant() {
        let c = CheckOutcome::compare("x", 1.05, 1.0, 0.1, 0.0, "r");
        assert!(c.passed());
        assert!(!c.clone().with_slack_override(0.0).passed());
        let c = CheckOutcome::within("x", -0.5e-3, 1e-3, "r");
        assert!(c.passed() && c.lhs == 0.5e-3);
        assert!(!CheckOutcome::compare("x", f64::NAN, 1.0, 0.0, 0.0, "r").passed());
        let i = CheckOutcome::inconclusive("x", "r", "n").with_slack_override(0.0);
        assert_eq!(i.status, Status::Inconclusive);
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["status"], "pass");
        assert_eq!(v["paper_ref"], "r");
    }

    #[test]
    fn non_convergence_is_inconclusive() {
        let e = LabError::TailContact { time: 0.1, density: 1.0 };
        assert_eq!(settle("x", "r", Err(e)).status, Status::Inconclusive);
        assert_eq!(settle("x", "r", Err(LabError::NonFinite("v".into()))).status, Status::Fail);
    }

    #[test]
    fn every_check_has_a_reference_and_a_preset() {
        assert!(ALL_CHECKS.windows(2).all(|w| w[0] < w[1]));
        for c in ALL_CHECKS {
            assert!(!reference_of(c).is_empty(), "{c}");
        }
        assert!(preset("nope").is_none());
    }

    fn cfg(text: &str) -> RunConfig {
        RunConfig::from_toml_str(text, Path::new(".")).unwrap()
    }

    #[test]
    fn empty_check_list_gives_empty_report() {
        let r = run_suite(&cfg("[suite]\nchecks = []")).unwrap();
        assert!(r.checks.is_empty() && !r.failed());
        assert!(matches!(
            run_suite(&cfg("[suite]\nchecks = [\"bogus\"]")),
            Err(LabError::Config { .. })
        ));
    }

    #[test]
    fn quick_suite_passes_and_zero_slack_fails() {
        let r = run_suite(&cfg("threads = 2\n[suite]\nname = \"quick\"")).unwrap();
        assert!(!r.failed(), "{}", r.to_json().unwrap());
        let r2 = run_suite(&cfg("threads = 1\n[suite]\nname = \"quick\"")).unwrap();
        assert_eq!(r.checks, r2.checks);
        let strict = run_suite(&cfg("[suite]\nchecks = [\"transport.action_k16\"]\nslack_override = 0.0")).unwrap();
        assert!(strict.failed());
    }

    #[test]
    fn stability_trivial_and_shift_cases() {
        let g = make_grid(8.0, 512).unwrap();
        let p = linear_benchmark(HORIZON);
        let points = vec![(0.0, gauss(&g, 0.5, 0.25).unwrap())];
        let opts = MfcOptions::default();
        let same = stability_gap("s", &p, &p, &points, &opts, 0.1).unwrap();
        assert!(same.passed() && same.lhs.abs() < 1e-12);
        for c in [0.3, -0.3] {
            let q = MFCProblem {
                terminal: p.terminal.shifted(c),
                ..p.clone()
            };
            let out = stability_gap("s", &p, &q, &points, &opts, 0.1).unwrap();
            assert!(out.passed());
            assert!((out.lhs + c).abs() < 1e-9, "{out:?}");
        }
        let q = MFCProblem {
            h1: p.h1.shifted(0.2),
            ..p.clone()
        };
        let out = stability_gap("s", &p, &q, &points, &opts, 0.1).unwrap();
        assert!(out.passed());
        assert!((out.lhs - 0.2 * HORIZON).abs() < 1e-6, "{out:?}");
        assert!((out.rhs - HORIZON * 9.0 * 0.2).abs() < 1e-9);
    }

    #[test]
    fn d2_scan_constant_terminal_is_flat() {
        let g = make_grid(8.0, 256).unwrap();
        let p = MFCProblem {
            terminal: FunctionalHandle::constant(1.0),
            ..linear_benchmark(HORIZON)
        };
        let pairs = vec![(gauss(&g, 0.0, 0.3).unwrap(), gauss(&g, 0.5, 0.3).unwrap())];
        let out = d2_lipschitz_scan("d", &p, 0.0, &pairs, &MfcOptions::default(), 10.0).unwrap();
        assert!(out.passed() && out.lhs < 1e-12);
    }
}
