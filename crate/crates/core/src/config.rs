//! Run configuration: a flat TOML document with dotted sections, plus the
//! small spec-string languages used for measures, costs, Hamiltonians and
//! drifts.
//!
//! ```toml
//! seed = 7
//! [grid]
//! half_width = 8.0
//! n = 1024
//! [problem]
//! terminal = "linear:tanh.csv"
//! initial = "gaussian:0.5:0.25"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::{Damping, Hamiltonian, MFCProblem, MfcOptions};
use crate::doubling::DoublingParams;
use crate::error::{LabError, Result};
use crate::fokker_planck::{ControlField, SchemeParams};
use crate::functionals::FunctionalHandle;
use crate::measures::{gaussian_on_grid, make_grid, uniform_on_grid, GaussianSpec, Grid1D, GridMeasure};
use crate::tabulated::Tabulated;

fn config_err(path: &str, message: impl std::fmt::Display) -> LabError {
    LabError::Config {
        path: path.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { half_width: 8.0, n: 1024 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub dt: f64,
    pub cfl_safety: f64,
    pub tail_tolerance: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        let s = SchemeParams::default();
        Self {
            dt: s.dt,
            cfl_safety: s.cfl_safety,
            tail_tolerance: s.tail_tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// `quadratic` or `quadratic+drift:<file>`.
    pub hamiltonian: String,
    /// `constant:<c>`, `linear:<file>` or `mean:<file>`.
    pub running: String,
    pub terminal: String,
    pub horizon: f64,
    pub t0: f64,
    pub initial: String,
    pub max_iter: usize,
    pub tol_value: f64,
    pub tol_control: f64,
    /// `fictitious` or `fixed:<λ>`.
    pub damping: String,
    pub control_bound: Option<f64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let o = MfcOptions::default();
        Self {
            hamiltonian: "quadratic".into(),
            running: "constant:0".into(),
            terminal: "constant:0".into(),
            horizon: 0.5,
            t0: 0.0,
            initial: "gaussian:0:0.5".into(),
            max_iter: o.max_iter,
            tol_value: o.tol_value,
            tol_control: o.tol_control,
            damping: "fictitious".into(),
            control_bound: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub source: String,
    pub target: String,
    pub action_steps: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            source: "gaussian:0:1".into(),
            target: "gaussian:1:1".into(),
            action_steps: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionalsConfig {
    pub measure: String,
    /// Variance of the reference Gaussian in the coercivity gap.
    pub sigma: f64,
}

impl Default for FunctionalsConfig {
    fn default() -> Self {
        Self {
            measure: "gaussian:0:1".into(),
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FpeConfig {
    pub initial: String,
    /// `zero`, `constant:<c>`, `ou:<k>` (α = -k x) or `csv:<file>`.
    pub drift: String,
    pub t0: f64,
    pub t1: f64,
}

impl Default for FpeConfig {
    fn default() -> Self {
        Self {
            initial: "gaussian:0:0.5".into(),
            drift: "zero".into(),
            t0: 0.0,
            t1: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DoublingConfig {
    pub u: String,
    pub v: String,
    pub eps: f64,
    pub delta: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    /// Optional vanishing-δ scan.
    pub scan_deltas: Vec<f64>,
}

impl Default for DoublingConfig {
    fn default() -> Self {
        let p = DoublingParams::default();
        Self {
            u: "constant:0".into(),
            v: "constant:0".into(),
            eps: p.eps,
            delta: p.delta,
            max_iters: p.max_iters,
            tol: p.tol,
            restarts: 0,
            scan_deltas: Vec::new(),
        }
    }
}

impl DoublingConfig {
    pub fn params(&self) -> DoublingParams {
        DoublingParams {
            eps: self.eps,
            delta: self.delta,
            max_iters: self.max_iters,
            tol: self.tol,
            ..DoublingParams::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub name: String,
    /// Explicit check list; `None` selects the named preset.
    pub checks: Option<Vec<String>>,
    /// Replaces every relative slack and zeroes the absolute floors.
    pub slack_override: Option<f64>,
    /// Envelope constant of the d₂-Lipschitz scan.
    pub envelope_c0: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            checks: None,
            slack_override: None,
            envelope_c0: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub grid: GridConfig,
    pub scheme: SchemeConfig,
    pub problem: ProblemConfig,
    pub transport: TransportConfig,
    pub functionals: FunctionalsConfig,
    pub fpe: FpeConfig,
    pub doubling: DoublingConfig,
    pub suite: SuiteConfig,
    /// Directory against which relative file references resolve.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Parses TOML text; schema errors carry the offending key path.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().message().trim())
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(&path.display().to_string(), e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn grid(&self) -> Result<Grid1D> {
        make_grid(self.grid.half_width, self.grid.n).map_err(|e| config_err("grid", e))
    }

    pub fn scheme(&self) -> SchemeParams {
        SchemeParams {
            dt: self.scheme.dt,
            cfl_safety: self.scheme.cfl_safety,
            tail_tolerance: self.scheme.tail_tolerance,
        }
    }

    pub fn mfc_options(&self) -> Result<MfcOptions> {
        let damping = match self.problem.damping.split_once(':') {
            None if self.problem.damping == "fictitious" => Damping::FictitiousPlay,
            Some(("fixed", l)) => Damping::Fixed(parse_f64("problem.damping", l)?),
            _ => return Err(config_err("problem.damping", format!("unknown damping `{}`", self.problem.damping))),
        };
        Ok(MfcOptions {
            dt: self.scheme.dt,
            cfl_safety: self.scheme.cfl_safety,
            tail_tolerance: self.scheme.tail_tolerance,
            max_iter: self.problem.max_iter,
            tol_value: self.problem.tol_value,
            tol_control: self.problem.tol_control,
            damping,
            control_bound: self.problem.control_bound,
        })
    }

    pub fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn problem(&self) -> Result<MFCProblem> {
        let grid = self.grid()?;
        Ok(MFCProblem {
            h1: parse_hamiltonian(self, "problem.hamiltonian", &self.problem.hamiltonian)?,
            running: parse_functional(self, "problem.running", &self.problem.running, &grid)?,
            terminal: parse_functional(self, "problem.terminal", &self.problem.terminal, &grid)?,
            horizon: self.problem.horizon,
        })
    }

    /// Checks ranges and that every referenced spec and file parses.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let positive = |path: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(path, format!("must be positive, got {v}")))
            }
        };
        positive("scheme.dt", self.scheme.dt)?;
        positive("scheme.cfl_safety", self.scheme.cfl_safety)?;
        positive("scheme.tail_tolerance", self.scheme.tail_tolerance)?;
        positive("problem.horizon", self.problem.horizon)?;
        positive("doubling.eps", self.doubling.eps)?;
        positive("doubling.delta", self.doubling.delta)?;
        positive("suite.envelope_c0", self.suite.envelope_c0)?;
        if self.threads == Some(0) {
            return Err(config_err("threads", "must be >= 1"));
        }
        if self.problem.t0 >= self.problem.horizon {
            return Err(config_err("problem.t0", "must be below the horizon"));
        }
        if self.fpe.t1 < self.fpe.t0 {
            return Err(config_err("fpe.t1", "must be >= fpe.t0"));
        }
        self.mfc_options()?;
        self.problem()?;
        parse_measure(self, "problem.initial", &self.problem.initial, &grid)?;
        parse_measure(self, "transport.source", &self.transport.source, &grid)?;
        parse_measure(self, "transport.target", &self.transport.target, &grid)?;
        parse_measure(self, "functionals.measure", &self.functionals.measure, &grid)?;
        parse_measure(self, "fpe.initial", &self.fpe.initial, &grid)?;
        parse_drift(self, "fpe.drift", &self.fpe.drift, &grid, self.fpe.t0)?;
        parse_functional(self, "doubling.u", &self.doubling.u, &grid)?;
        parse_functional(self, "doubling.v", &self.doubling.v, &grid)?;
        Ok(())
    }
}

fn parse_f64(path: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| config_err(path, format!("`{s}` is not a number")))
}

fn table(cfg: &RunConfig, path: &str, file: &str) -> Result<Tabulated> {
    let resolved = cfg.resolve(file);
    if !resolved.exists() {
        return Err(config_err(path, format!("file {} does not exist", resolved.display())));
    }
    Tabulated::read_csv(&resolved).map_err(|e| config_err(path, e))
}

/// `gaussian:<mean>:<variance>`, `uniform:<a>:<b>` or `csv:<file>`.
pub fn parse_measure(cfg: &RunConfig, path: &str, spec: &str, grid: &Grid1D) -> Result<GridMeasure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let built = match parts.as_slice() {
        ["gaussian", m, s] => {
            let g = GaussianSpec::new(parse_f64(path, m)?, parse_f64(path, s)?).map_err(|e| config_err(path, e))?;
            gaussian_on_grid(grid, &g)
        }
        ["uniform", a, b] => uniform_on_grid(grid, parse_f64(path, a)?, parse_f64(path, b)?),
        ["csv", file] => GridMeasure::read_csv_file(&cfg.resolve(file)).and_then(|r| {
            grid.ensure_same(r.measure.grid())?;
            Ok(r.measure)
        }),
        _ => return Err(config_err(path, format!("unknown measure spec `{spec}`"))),
    };
    built.map_err(|e| config_err(path, e))
}

/// `constant:<c>`, `linear:<file>` or `mean:<file>`.
pub fn parse_functional(cfg: &RunConfig, path: &str, spec: &str, grid: &Grid1D) -> Result<FunctionalHandle> {
    match spec.split_once(':') {
        Some(("constant", c)) => Ok(FunctionalHandle::constant(parse_f64(path, c)?)),
        Some(("linear", file)) => Ok(FunctionalHandle::linear_tabulated(spec, table(cfg, path, file)?)),
        Some(("mean", file)) => {
            let t = table(cfg, path, file)?;
            let (lip, bound) = (t.lipschitz(), t.sup_norm());
            Ok(FunctionalHandle::mean(spec, t.into_fn(), lip, bound, 2.0 * grid.h()))
        }
        _ => Err(config_err(path, format!("unknown functional spec `{spec}`"))),
    }
}

/// `quadratic` or `quadratic+drift:<file>`.
pub fn parse_hamiltonian(cfg: &RunConfig, path: &str, spec: &str) -> Result<Hamiltonian> {
    match spec.split_once(':') {
        None if spec == "quadratic" => Ok(Hamiltonian::quadratic()),
        Some(("quadratic+drift", file)) => {
            let t = table(cfg, path, file)?;
            let lip = t.lipschitz();
            Ok(Hamiltonian::quadratic_with_drift(t.into_fn(), lip))
        }
        _ => Err(config_err(path, format!("unknown hamiltonian `{spec}`"))),
    }
}

/// `zero`, `constant:<c>`, `ou:<k>` or `csv:<file>` (stationary fields).
pub fn parse_drift(cfg: &RunConfig, path: &str, spec: &str, grid: &Grid1D, t0: f64) -> Result<ControlField> {
    let built = match spec.split_once(':') {
        None if spec == "zero" => ControlField::zero(*grid, t0),
        Some(("constant", c)) => ControlField::constant(*grid, t0, parse_f64(path, c)?),
        Some(("ou", k)) => {
            let k = parse_f64(path, k)?;
            ControlField::stationary(*grid, t0, move |x| -k * x)
        }
        Some(("csv", file)) => {
            let f = Arc::new(table(cfg, path, file)?);
            ControlField::stationary(*grid, t0, move |x| f.eval(x))
        }
        _ => return Err(config_err(path, format!("unknown drift `{spec}`"))),
    };
    built.map_err(|e| config_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::from_toml_str("", Path::new(".")).unwrap();
        assert_eq!(cfg.grid.n, 1024);
        let text = toml::to_string(&cfg).unwrap();
        let again = RunConfig::from_toml_str(&text, Path::new(".")).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn errors_carry_key_paths() {
        let err = RunConfig::from_toml_str("[grid]\nn = \"many\"", Path::new(".")).unwrap_err();
        assert!(matches!(&err, LabError::Config { path, .. } if path == "grid.n"), "{err}");
        let err = RunConfig::from_toml_str("[doubling]\nbogus = 1", Path::new(".")).unwrap_err();
        assert!(matches!(&err, LabError::Config { path, .. } if path.starts_with("doubling")), "{err}");
        let err = RunConfig::from_toml_str("[problem]\nterminal = \"linear:missing.csv\"", Path::new(".")).unwrap_err();
        assert!(matches!(&err, LabError::Config { path, .. } if path == "problem.terminal"), "{err}");
        let err = RunConfig::from_toml_str("[scheme]\ndt = -1.0", Path::new(".")).unwrap_err();
        assert!(matches!(&err, LabError::Config { path, .. } if path == "scheme.dt"), "{err}");
    }

    #[test]
    fn parses_specs_and_relative_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = std::fs::File::create(dir.path().join("g.csv")).unwrap();
        writeln!(f, "x,g\n-10,-1\n0,0\n10,1").unwrap();
        let text = "[problem]\nterminal = \"linear:g.csv\"\nhamiltonian = \"quadratic+drift:g.csv\"\n[fpe]\ndrift = \"ou:1\"";
        let cfg = RunConfig::from_toml_str(text, dir.path()).unwrap();
        let p = cfg.problem().unwrap();
        assert!((p.terminal.lip_d1 - 0.1).abs() < 1e-12);
        let grid = cfg.grid().unwrap();
        let mu = parse_measure(&cfg, "m", "uniform:-1:1", &grid).unwrap();
        assert!((p.terminal.value(&mu)).abs() < 1e-12);
        assert!(parse_measure(&cfg, "m", "gaussian:0", &grid).is_err());
        assert!(matches!(cfg.mfc_options().unwrap().damping, Damping::FictitiousPlay));
    }
}
