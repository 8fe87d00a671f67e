//! `hjb-lab`: run transport, functional, Fokker-Planck, control and doubling
//! experiments from a TOML config, or the verification suite.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hjb_lab::config::{parse_drift, parse_functional, parse_measure, RunConfig};
use hjb_lab::control::mfc_solve;
use hjb_lab::doubling::{doubling_maximize, doubling_with_restarts, vanishing_delta_scan};
use hjb_lab::fokker_planck::{entropy_dissipation_report, fp_solve};
use hjb_lab::functionals::EntropyReport;
use hjb_lab::harness::{run_suite, Status};
use hjb_lab::transport::{displacement_action, TransportReport};
use hjb_lab::LabError;
use serde_json::json;

#[derive(Parser)]
#[command(name = "hjb-lab", version, about = "Numerical lab for HJB equations on Wasserstein space")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distances, Brenier map and potential between two measures.
    Transport,
    /// Entropy, penalized entropy, Fischer information, coercivity gap.
    Functionals,
    /// Solve the Fokker-Planck equation under a fixed drift.
    Fpe,
    /// Solve the mean-field control problem.
    Mfc,
    /// Entropy-penalized doubling maximization.
    Doubling,
    /// Run a verification suite.
    Verify {
        #[arg(long)]
        suite: Option<String>,
    },
}

enum Outcome {
    Done,
    CheckFailed,
    NotConverged,
}

fn exit_code_for(e: &LabError) -> u8 {
    match e {
        LabError::Config { .. } => 4,
        LabError::Diverged { .. } | LabError::TailContact { .. } | LabError::Stagnation(_) => 3,
        _ => 1,
    }
}

/// Writes through a temporary file in `dir` and renames it into place.
fn write_atomic(dir: &Path, name: &str, f: impl FnOnce(&mut dyn Write) -> hjb_lab::Result<()>) -> hjb_lab::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    f(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    tmp.persist(dir.join(name)).map_err(|e| LabError::Io(e.error))?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> hjb_lab::Result<()> {
    write_atomic(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn load_config(cli: &Cli) -> hjb_lab::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml_str("", Path::new("."))?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(LabError::Config {
                path: "--threads".into(),
                message: "must be >= 1".into(),
            });
        }
        cfg.threads = Some(t);
    }
    if let Command::Verify { suite: Some(s) } = &cli.command {
        cfg.suite.name = s.clone();
        cfg.suite.checks = None;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> hjb_lab::Result<Outcome> {
    let cfg = load_config(cli)?;
    if let Some(t) = cfg.threads {
        // Ignore a second initialization; the first pool stays in effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let grid = cfg.grid()?;

    match &cli.command {
        Command::Transport => {
            let mu = parse_measure(&cfg, "transport.source", &cfg.transport.source, &grid)?;
            let nu = parse_measure(&cfg, "transport.target", &cfg.transport.target, &grid)?;
            let report = TransportReport::compute(&mu, &nu)?;
            let action = displacement_action(&mu, &nu, cfg.transport.action_steps)?;
            write_json(
                &out,
                "transport.json",
                &json!({"report": report, "action": action, "action_steps": cfg.transport.action_steps}),
            )?;
            println!("transport: d1 = {:.6e}, d2 = {:.6e}, action = {action:.6e}", report.d1, report.d2);
        }
        Command::Functionals => {
            let mu = parse_measure(&cfg, "functionals.measure", &cfg.functionals.measure, &grid)?;
            let report = EntropyReport::compute(&mu, cfg.functionals.sigma)?;
            write_json(&out, "functionals.json", &serde_json::to_value(&report)?)?;
            println!(
                "functionals: E = {:.6e}, E* = {:.6e}, I = {}",
                report.entropy,
                report.estar,
                report.fischer.map_or("inf".to_string(), |v| format!("{v:.6e}"))
            );
        }
        Command::Fpe => {
            let mu0 = parse_measure(&cfg, "fpe.initial", &cfg.fpe.initial, &grid)?;
            let alpha = parse_drift(&cfg, "fpe.drift", &cfg.fpe.drift, &grid, cfg.fpe.t0)?;
            let path = match fp_solve(&mu0, &alpha, cfg.fpe.t0, cfg.fpe.t1, &cfg.scheme()) {
                Ok(p) => p,
                Err(LabError::Diverged {
                    time,
                    reason,
                    snapshot: Some(snap),
                }) => {
                    write_atomic(&out, "fpe_last_snapshot.csv", |w| snap.write_csv(w))?;
                    eprintln!("fpe: diverged at t = {time}: {reason}; last snapshot written");
                    return Ok(Outcome::NotConverged);
                }
                Err(e) => return Err(e),
            };
            let dissipation = entropy_dissipation_report(&path, &alpha)?;
            write_atomic(&out, "fpe_path.csv", |w| path.write_csv(w))?;
            write_json(
                &out,
                "fpe_summary.json",
                &json!({"path": path.summary(), "entropy_dissipation_residual": dissipation.max_residual()}),
            )?;
            println!(
                "fpe: {} snapshots, mass drift {:.3e}, dissipation residual {:.3e}",
                path.times.len(),
                path.mass_drift(),
                dissipation.max_residual()
            );
        }
        Command::Mfc => {
            let problem = cfg.problem()?;
            let mu0 = parse_measure(&cfg, "problem.initial", &cfg.problem.initial, &grid)?;
            let sol = mfc_solve(&problem, &mu0, cfg.problem.t0, &cfg.mfc_options()?)?;
            write_atomic(&out, "mfc_fields.csv", |w| sol.write_fields_csv(w))?;
            write_json(&out, "mfc.json", &serde_json::to_value(sol.summary())?)?;
            println!(
                "mfc: value = {:.6e}, iterations = {}, converged = {}, clamp active = {}",
                sol.value, sol.iterations, sol.converged, sol.clamp_active
            );
            if !sol.converged {
                return Ok(Outcome::NotConverged);
            }
        }
        Command::Doubling => {
            let u = parse_functional(&cfg, "doubling.u", &cfg.doubling.u, &grid)?;
            let v = parse_functional(&cfg, "doubling.v", &cfg.doubling.v, &grid)?;
            let params = cfg.doubling.params();
            let (report, spread) = if cfg.doubling.restarts > 0 {
                let (r, s) = doubling_with_restarts(&u, &v, &grid, &params, cfg.doubling.restarts, cfg.seed)?;
                (r, Some(s))
            } else {
                (doubling_maximize(&u, &v, &grid, &params)?, None)
            };
            let scan = if cfg.doubling.scan_deltas.is_empty() {
                None
            } else {
                Some(vanishing_delta_scan(&u, &v, &grid, &params, &cfg.doubling.scan_deltas)?)
            };
            write_atomic(&out, "doubling_fields.csv", |w| report.write_fields_csv(w))?;
            write_json(
                &out,
                "doubling.json",
                &json!({"report": report.summary(), "restart_spread": spread, "scan": scan}),
            )?;
            println!(
                "doubling: phi = {:.6e}, iterations = {}, converged = {}, p residual = {:.4e}",
                report.phi_value, report.iterations, report.converged, report.diagnostics.p_residual
            );
            if !report.converged {
                return Ok(Outcome::NotConverged);
            }
        }
        Command::Verify { .. } => {
            let report = run_suite(&cfg)?;
            let text = report.to_json()?;
            write_atomic(&out, "verify_report.json", |w| {
                w.write_all(text.as_bytes())?;
                writeln!(w)?;
                Ok(())
            })?;
            for c in &report.checks {
                let tag = match c.status {
                    Status::Pass => "PASS",
                    Status::Fail => "FAIL",
                    Status::Inconclusive => "INCONCLUSIVE",
                };
                println!("{tag} {}: {:.4e} <= {:.4e} (slack {}, floor {:.1e})", c.name, c.lhs, c.rhs, c.slack, c.floor);
            }
            if report.failed() {
                return Ok(Outcome::CheckFailed);
            }
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(2),
        Ok(Outcome::NotConverged) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
