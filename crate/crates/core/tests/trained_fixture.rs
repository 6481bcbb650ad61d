//! Checks that need a detector with nonzero AP. The fixture is trained once
//! per test binary.

use std::sync::OnceLock;

use cgt_testkit::checks;
use cgt_testkit::gen::{trained_fixture, Fixture};

fn fixture() -> &'static Fixture {
    static FX: OnceLock<Fixture> = OnceLock::new();
    FX.get_or_init(trained_fixture)
}

#[test]
fn bug_sets_nest_by_gate_and_alpha() {
    let o = checks::bug_predicate_structure(fixture());
    assert!(o.passed, "{}", o.detail);
    println!("{}", o.detail);
}

#[test]
fn corruption_scores_are_consistent() {
    let o = checks::corruption_score_identities(fixture());
    assert!(o.passed, "{}", o.detail);
    println!("{}", o.detail);
}
