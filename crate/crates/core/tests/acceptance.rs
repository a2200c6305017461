//! Acceptance gate: one test per criterion, each printing its pass/fail
//! line. The validity matrix and the clustering batch are cached inside the
//! library, so c1/c2/c5 (and c4/c5) share one run.
//!
//! The radius-2 refutation on the 42-node fixture is heavier than the rest
//! and runs behind `--ignored` (the CLI exposes it as `acceptance --heavy`).

use sinkless_core::accept::{self, AcceptConfig};

fn check(id: u32) {
    let outcome = accept::run_criterion(id, &AcceptConfig::default());
    println!("{outcome}");
    assert!(outcome.passed, "{outcome}");
}

#[test]
fn c01_end_to_end_validity() {
    check(1);
}

#[test]
fn c02_locality_budget() {
    check(2);
}

#[test]
fn c03_greedy_doubling_invariant() {
    check(3);
}

#[test]
fn c04_clustering_invariants() {
    check(4);
}

#[test]
fn c05_no_impossibility_sentinels() {
    check(5);
}

#[test]
fn c06_composition_equivalence() {
    check(6);
}

#[test]
fn c07_zero_round_refutation() {
    check(7);
}

#[test]
fn c08_refutation_pipeline() {
    check(8);
}

#[test]
#[ignore = "radius-2 elimination on the girth-6 fixture; run with --ignored"]
fn c08_heavy_refutation_radius_two() {
    let outcome = accept::criterion_heavy_refutation(&AcceptConfig { heavy: true, ..AcceptConfig::default() });
    println!("{outcome}");
    assert!(outcome.passed, "{outcome}");
}

#[test]
fn c09_round_elimination_soundness() {
    check(9);
}

#[test]
fn c10_reference_orientation_validity() {
    check(10);
}
