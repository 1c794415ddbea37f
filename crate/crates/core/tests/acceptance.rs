//! Acceptance criteria 1-9. One line per criterion; exits nonzero if any fails.
//!
//! `GIGN_ACCEPTANCE_SEED` overrides the root seed, `GIGN_ACCEPTANCE_ONLY`
//! takes a comma-separated list of criterion numbers.

use gign_core::acceptance::{self, CriterionResult};

fn main() {
    let seed = std::env::var("GIGN_ACCEPTANCE_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(acceptance::DEFAULT_SEED);
    let only: Option<Vec<u8>> = std::env::var("GIGN_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let results: Vec<CriterionResult> = match only {
        None => acceptance::run_all(seed, |r| println!("{}", r.line())),
        Some(ids) => ids
            .iter()
            .map(|&id| {
                let r = match id {
                    1 => acceptance::criterion_1(seed),
                    2 => acceptance::criterion_2(),
                    3 => acceptance::criterion_3(),
                    4 => acceptance::criterion_4(),
                    5 => acceptance::criterion_5(seed),
                    6 => acceptance::criterion_6(seed),
                    7 => acceptance::criterion_7(seed),
                    8 => acceptance::criterion_8(),
                    9 => acceptance::criterion_9(seed),
                    other => panic!("no criterion {other}"),
                };
                println!("{}", r.line());
                r
            })
            .collect(),
    };
    let failed: Vec<u8> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
