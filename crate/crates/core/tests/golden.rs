mod common;

#[test]
fn serialization_matches_golden_files() {
    let (checked, bad) = common::check_golden();
    assert_eq!(checked, 16);
    assert!(bad.is_empty(), "golden mismatches: {bad:?}");
}
