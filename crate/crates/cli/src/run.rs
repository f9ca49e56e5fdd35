use std::path::Path;

use utcb_core::scenario::{run_file, ScenarioError};
use utcb_core::taint::distinct_leaks;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ASSERTION: u8 = 1;
pub const EXIT_SCHEMA: u8 = 2;

pub fn run(script: &Path, out: &Path, seed: Option<u64>, strict: bool) -> u8 {
    let outcome = match run_file(script, seed) {
        Ok(o) => o,
        Err(e @ (ScenarioError::Schema(_) | ScenarioError::Io { .. })) => {
            eprintln!("{e}");
            return EXIT_SCHEMA;
        }
    };
    let dir = out.join(&outcome.script.name);
    if let Err(e) = outcome.write_reports(&dir) {
        eprintln!("cannot write reports to {}: {e}", dir.display());
        return EXIT_ASSERTION;
    }

    println!(
        "{}: {} trace records, {} leaks ({} distinct), {} invariant violations",
        outcome.script.name,
        outcome.records().len(),
        outcome.leaks.len(),
        distinct_leaks(&outcome.leaks),
        outcome.violations.len()
    );
    for (device, ledger) in outcome.sim.ledgers() {
        let total = ledger.total();
        println!("  {device}: {total} cycles, {} ns", ledger.nanos(total));
    }
    println!("reports in {}", dir.display());

    let warnings = outcome.warnings();
    for w in &warnings {
        eprintln!(
            "warning at trace offset {}: {}",
            w.seq,
            serde_json::to_string(&w.event).unwrap_or_default()
        );
    }
    if let Some(f) = outcome.first_failure() {
        eprintln!("FAIL {f}");
        if outcome.failures.len() > 1 {
            eprintln!("({} more failures in this run)", outcome.failures.len() - 1);
        }
        return EXIT_ASSERTION;
    }
    if strict && !warnings.is_empty() {
        eprintln!("FAIL {} warnings under --strict", warnings.len());
        return EXIT_ASSERTION;
    }
    println!("PASS");
    EXIT_OK
}
