//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

use std::path::Path;
use std::process::ExitCode;

use hjb_lab::config::RunConfig;
use hjb_lab::harness::{run_suite, CheckOutcome, SuiteReport};

const CRITERIA: &[(&str, &[&str])] = &[
    (
        "exact transport oracle",
        &["transport.d2_translation", "transport.d2_dilation", "transport.action_k16"],
    ),
    (
        "gaussian functional closed forms",
        &[
            "functionals.entropy_gaussian",
            "functionals.fischer_s0.5",
            "functionals.fischer_s1",
            "functionals.fischer_s2",
            "functionals.gap_equal",
            "functionals.gap_mismatch",
        ],
    ),
    ("heat-flow fidelity", &["fpe.heat_l1", "fpe.heat_refinement"]),
    ("entropy dissipation identity", &["fpe.dissipation_heat", "fpe.dissipation_drift"]),
    ("time-lipschitz estimate", &["fpe.time_lipschitz"]),
    ("fischer bound", &["fpe.fischer_heat_monotone", "fpe.fischer_ou_refinement"]),
    (
        "value oracle, linear terminal data",
        &["mfc.linear_oracle_a", "mfc.linear_oracle_b", "mfc.dpp_midpoint"],
    ),
    ("value oracle, mean terminal data", &["mfc.mean_oracle"]),
    (
        "doubling lab",
        &[
            "doubling.positivity",
            "doubling.p_bound",
            "doubling.diagonal_eps0.2",
            "doubling.diagonal_eps0.1",
            "doubling.diagonal_eps0.05",
            "doubling.log_gradient_limit",
        ],
    ),
    ("vanishing-delta scan", &["doubling.vanishing_delta"]),
    (
        "stability envelope",
        &[
            "stability.identical",
            "stability.terminal_shift_plus",
            "stability.terminal_shift_minus",
            "stability.hamiltonian_shift",
            "stability.hamiltonian_shift_reverse",
        ],
    ),
];

fn config(extra: &str) -> RunConfig {
    let text = format!("seed = 7\n{extra}[grid]\nhalf_width = 8.0\nn = 1024\n");
    RunConfig::from_toml_str(&text, Path::new(".")).expect("acceptance config")
}

fn find<'a>(report: &'a SuiteReport, name: &str) -> Option<&'a CheckOutcome> {
    report.checks.iter().find(|c| c.name == name)
}

fn main() -> ExitCode {
    let report = match run_suite(&config("")) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL suite: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut all = true;
    for (k, (title, names)) in CRITERIA.iter().enumerate() {
        let checks: Vec<Option<&CheckOutcome>> = names.iter().map(|n| find(&report, n)).collect();
        let ok = checks.iter().all(|c| c.is_some_and(CheckOutcome::passed));
        all &= ok;
        println!("{} criterion {:>2}: {title}", if ok { "PASS" } else { "FAIL" }, k + 1);
        for (n, c) in names.iter().zip(&checks) {
            match c {
                Some(c) => println!(
                    "        {n}: {:?} lhs = {:.4e}, rhs = {:.4e}, slack = {}, floor = {:.1e}{}",
                    c.status,
                    c.lhs,
                    c.rhs,
                    c.slack,
                    c.floor,
                    c.note.as_deref().map(|s| format!(" ({s})")).unwrap_or_default()
                ),
                None => println!("        {n}: missing from report"),
            }
        }
    }

    // Determinism: a second run on a different worker count serializes identically.
    let again = run_suite(&config("threads = 1\n"));
    let same = match (&again, report.to_json()) {
        (Ok(b), Ok(a)) => b.to_json().map(|b| b == a).unwrap_or(false),
        _ => false,
    };
    all &= same;
    println!("{} criterion 12: determinism of the default suite report", if same { "PASS" } else { "FAIL" });

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
