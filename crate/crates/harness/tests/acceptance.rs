//! The fourteen acceptance criteria, one line each. Runs without the libtest
//! harness so the lines always show up in `cargo test` output.

use std::process::ExitCode;

use gk_harness::suite::{run_criterion, CRITERIA};

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || f == &id.to_string()) {
            continue;
        }
        let outcome = run_criterion(id);
        println!("{outcome}");
        ran += 1;
        if !outcome.pass {
            failed.push(format!("C{id:02} {name}"));
        }
    }
    if failed.is_empty() {
        println!("acceptance: {ran} passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of {ran} failed: {}", failed.len(), failed.join(", "));
        ExitCode::FAILURE
    }
}
