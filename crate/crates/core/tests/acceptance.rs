//! One PASS/FAIL line per acceptance criterion.
//!
//! `cargo test --release --test acceptance -- 1 5 9` runs a subset. Failed
//! criteria are reported but only turn into a failing exit status when
//! `ACCEPTANCE_STRICT=1` is set. `ACCEPTANCE_QUICK=1` skips the two studies.

use std::process::ExitCode;
use std::time::Instant;

use inclusion_core::verify::run_suite;

const CRITERIA: [(u32, &str, &str); 11] = [
    (1, "pcn-gaussian-oracle", "pCN reproduces the conjugate Gaussian posterior"),
    (2, "fem-convergence", "P1 solver converges at second order"),
    (3, "basis-orthonormality", "disk eigenfunctions are orthonormal on the mesh"),
    (4, "heps-contracts", "smoothed Heaviside bounds hold"),
    (5, "symdiff-oracle", "symmetric-difference quadrature matches its oracles"),
    (6, "holder-bound", "star map is Hoelder-1/2 continuous"),
    (7, "tube-bound", "level-set tubes scale linearly in their width"),
    (8, "lipschitz-probe", "forward and inverse ratios are mesh stable"),
    (9, "star-study", "star posterior mean error falls with the noise"),
    (10, "level-study", "level-set posterior mean improves and stays in range"),
    (11, "radial-counterexample", "sharp level-set map is not uniformly continuous"),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let quick = std::env::var("ACCEPTANCE_QUICK").is_ok_and(|v| v == "1");
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut failed = 0;
    let start = Instant::now();
    for (id, suite, title) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        if quick && suite.ends_with("-study") {
            println!("criterion {id:>2} SKIP {title} [{suite}] (ACCEPTANCE_QUICK=1)");
            continue;
        }
        match run_suite(suite, None, workers) {
            Ok(report) => {
                let verdict = if report.passed() { "PASS" } else { "FAIL" };
                failed += usize::from(!report.passed());
                println!(
                    "criterion {id:>2} {verdict} {title} [{suite}, {:.1} s] {}",
                    report.elapsed.as_secs_f64(),
                    report.summary()
                );
            }
            Err(e) => {
                failed += 1;
                println!("criterion {id:>2} FAIL {title} [{suite}] error: {e}");
            }
        }
    }
    println!("acceptance: {failed} failed, total {:.1} s", start.elapsed().as_secs_f64());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
