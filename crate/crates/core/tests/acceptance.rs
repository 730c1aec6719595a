//! The eight acceptance criteria, run in order. Prints one PASS/FAIL line per
//! criterion (with its individual checks underneath) and exits non-zero if
//! any criterion fails.

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use lgmjoint::verify::run_suite;

const CRITERIA: [(u8, &str, &str); 8] = [
    (1, "Cox equivalence", "cox-equivalence"),
    (2, "LMM exactness", "lmm-exactness"),
    (3, "quadrature equivalence", "quadrature"),
    (4, "MCMC equivalence", "mcmc"),
    (5, "parameter recovery", "recovery"),
    (6, "pbc2 replica", "pbc2"),
    (7, "invariant properties", "properties"),
    (8, "scalability", "scalability"),
];

fn main() -> ExitCode {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (n, title, suite) in CRITERIA {
        if !only.is_empty() && !only.iter().any(|o| suite.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (passed, lines) = match run_suite(suite) {
            Ok(checks) => (
                !checks.is_empty() && checks.iter().all(|c| c.passed),
                checks.iter().map(|c| format!("    {c}")).collect::<Vec<_>>(),
            ),
            Err(e) => (false, vec![format!("    error: {e}")]),
        };
        let verdict = if passed { "PASS" } else { "FAIL" };
        writeln!(out, "criterion {n} ({title}): {verdict} in {:.1}s", start.elapsed().as_secs_f64()).unwrap();
        for l in lines {
            writeln!(out, "{l}").unwrap();
        }
        out.flush().unwrap();
        if !passed {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        writeln!(out, "acceptance: all criteria passed").unwrap();
        ExitCode::SUCCESS
    } else {
        writeln!(out, "acceptance: criteria {failed:?} failed").unwrap();
        ExitCode::FAILURE
    }
}
