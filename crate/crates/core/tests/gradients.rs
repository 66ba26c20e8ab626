use hlnet::gradcheck::GradCheck;
use hlnet::gradsuite::{block_check, toy_model_check, BLOCK_CHECKS, GROUP_ATOL};

#[test]
fn every_block_matches_finite_differences() {
    let cfg = GradCheck::default();
    let mut failures = Vec::new();
    for name in BLOCK_CHECKS {
        let r = block_check(name, &cfg).unwrap();
        let rel = r.overall_rel_err();
        let bad = r.failing_groups(1e-4, GROUP_ATOL);
        println!("{name:<24} rel={rel:.3e} entries={} failing_groups={bad:?}", r.checked);
        if rel > 1e-4 || !bad.is_empty() {
            failures.push(name);
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn toy_model_sampled_weights() {
    let r = toy_model_check(20, &GradCheck::default()).unwrap();
    println!("toy model rel={:.3e} entries={}", r.overall_rel_err(), r.checked);
    assert_eq!(r.checked, 20);
    assert!(r.overall_rel_err() <= 1e-3, "{r:?}");
}
