//! Runs the whole verification battery once and prints one pass/fail line
//! per criterion. Exits nonzero if any criterion fails.

use std::process::ExitCode;

use measure_mirror::verify::run_battery;

const SEED: u64 = 20240611;

fn main() -> ExitCode {
    let report = run_battery(SEED);
    println!("\nacceptance battery, seed {}, prng {}", report.seed, report.prng);
    let mut criteria: Vec<_> = report.criteria.iter().collect();
    criteria.sort_by_key(|c| c.id);
    for c in criteria {
        println!("{}", c.summary_line());
        for note in &c.notes {
            println!("       {note}");
        }
    }
    println!("battery: {:.2} s, {}", report.elapsed_secs, if report.passed { "all criteria passed" } else { "FAILED" });
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
