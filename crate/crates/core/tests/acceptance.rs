//! Runs every acceptance criterion at its stated tolerance and runtime limit
//! and prints one pass/fail line per criterion.

use clwn_core::checks::{run_suite, Suite};
use clwn_core::Exec;

#[test]
fn acceptance() {
    let results = run_suite(Suite::All, Exec::Parallel);
    for r in &results {
        println!("{}", r.line());
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!(
        "{} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
