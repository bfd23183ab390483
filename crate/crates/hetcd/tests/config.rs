use hetcd::config::{apply_override, resolve};
use hetcd::Error;
use hetcd_core::cluster::KlSign;
use hetcd_core::TrainConfig;

#[test]
fn defaults_without_file() {
    assert_eq!(resolve(None, &[]).unwrap(), TrainConfig::default());
}

#[test]
fn overrides_reach_nested_fields() {
    let sets = [
        "loss.silhouette=false",
        "k=4",
        "sampling.budget=9",
        "loss.kl_sign=verbatim",
        "attention.target_attends=[\"aux0\"]",
    ]
    .map(String::from);
    let c = resolve(None, &sets).unwrap();
    assert!(!c.loss.silhouette);
    assert_eq!(c.k, Some(4));
    assert_eq!(c.sampling.budget, 9);
    assert_eq!(c.loss.kl_sign, KlSign::Verbatim);
    assert_eq!(c.attention.target_attends, Some(vec![String::from("aux0")]));
}

#[test]
fn file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"d_model": 16, "heads": 2, "seed": 5}"#).unwrap();
    let c = resolve(Some(&path), &["seed=6".into()]).unwrap();
    assert_eq!((c.d_model, c.heads, c.seed), (16, 2, 6));
    assert_eq!(c.learning_rate, TrainConfig::default().learning_rate);
}

#[test]
fn bad_overrides_are_validation_errors() {
    for bad in ["nope=1", "loss.nope=1", "seed.x=1", "seed"] {
        let e = resolve(None, &[bad.into()]).unwrap_err();
        assert!(matches!(e, Error::Override(..)), "{bad}: {e:?}");
        assert_eq!(e.exit_code(), 2);
    }
    let e = resolve(None, &["d_model=\"wide\"".into()]).unwrap_err();
    assert!(matches!(e, Error::Config(_)));
    let e = resolve(None, &["dropout=1.5".into()]).unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");
}

#[test]
fn unknown_file_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"d_modle": 16}"#).unwrap();
    assert!(matches!(resolve(Some(&path), &[]), Err(Error::Json { .. })));
}

#[test]
fn string_fallback_only_when_not_json() {
    let mut v = serde_json::json!({"a": {"b": 1}});
    apply_override(&mut v, "a.b=2.5").unwrap();
    assert_eq!(v["a"]["b"], 2.5);
    apply_override(&mut v, "a.b=hello world").unwrap();
    assert_eq!(v["a"]["b"], "hello world");
}
