//! Acceptance battery: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the table is always
//! printed, also under `cargo test`.
//!
//! `cargo test --test acceptance -- 4 7` runs a subset.

use std::process::ExitCode;

use nonlocal_sis::mesh::Kernel;
use nonlocal_sis::runner::suite::{self, Outcome};
use nonlocal_sis::spectral::{self, RateFields};

/// `λ_p` with the potential's sign flipped: a deliberately wrong variant that
/// the sign-relation check must reject.
fn flipped_lambda(kernel: &Kernel, d_i: f64, rates: &RateFields) -> nonlocal_sis::Result<f64> {
    let swapped = RateFields::new(rates.gamma().clone(), rates.beta().clone())?;
    spectral::lambda_p_value(kernel, d_i, &swapped)
}

fn main() -> ExitCode {
    let selected: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids: Vec<u8> = if selected.is_empty() { (1..=12).collect() } else { selected };

    let mut outcomes: Vec<Outcome> = Vec::new();
    for id in ids {
        let o = suite::run_criterion(id);
        println!("{}", o.line());
        outcomes.push(o);
    }

    // the sign check must be able to fail
    if outcomes.iter().any(|o| o.id == 2) {
        let mutated = suite::sign_relation_with(&flipped_lambda);
        let caught = matches!(&mutated, Ok((false, _)));
        let detail = match &mutated {
            Ok((_, d)) => d.clone(),
            Err(e) => e.to_string(),
        };
        println!(
            "mutation check {} sign relation with flipped potential is rejected | {detail}",
            if caught { "PASS" } else { "FAIL" }
        );
        if !caught {
            return ExitCode::FAILURE;
        }
    }

    let passed = outcomes.iter().filter(|o| o.passed).count();
    let total: f64 = outcomes.iter().map(|o| o.seconds).sum();
    println!("{passed}/{} criteria passed in {total:.1} s", outcomes.len());
    if passed == outcomes.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
