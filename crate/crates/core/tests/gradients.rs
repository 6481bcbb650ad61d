use cgt_testkit::checks;

#[test]
fn reverse_mode_matches_finite_differences() {
    let o = checks::gradient_check();
    assert!(o.passed, "{}", o.detail);
}
