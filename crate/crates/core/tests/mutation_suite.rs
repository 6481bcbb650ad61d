use cgt_testkit::checks;

#[test]
fn mutation_operators_are_sound() {
    let o = checks::mutation_suite();
    assert!(o.passed, "{}", o.detail);
}
