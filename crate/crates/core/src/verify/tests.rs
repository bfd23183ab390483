use super::*;

#[test]
fn suite_passes_on_the_shipped_code() {
    let checks = run(&VerifyOptions::default());
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(format_check)
        .collect();
    assert!(failed.is_empty(), "{failed:#?}");
    assert!(checks.iter().any(|c| c.module == "train"));
}

#[test]
fn flipped_kl_sign_is_caught_in_the_cluster_head() {
    let options = VerifyOptions {
        kl_sign: KlSign::Verbatim,
        ..VerifyOptions::default()
    };
    let checks = run(&options);
    assert_eq!(failing_modules(&checks), ["cluster"]);
    let c = checks
        .iter()
        .find(|c| c.name == "kl divergence ln 2")
        .unwrap();
    assert!(c.max_error > 1.0);
}
