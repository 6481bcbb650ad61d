use cgt_testkit::checks;

#[test]
fn coverage_matches_per_neuron_oracle() {
    let o = checks::coverage_oracle();
    assert!(o.passed, "{}", o.detail);
}

#[test]
fn coverage_identities_hold() {
    let o = checks::coverage_identities();
    assert!(o.passed, "{}", o.detail);
}
