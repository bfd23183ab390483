//! Training configuration: a JSON document mirroring [`TrainConfig`],
//! optionally patched by `path=value` overrides.

use std::fs;
use std::path::Path;

use hetcd_core::TrainConfig;
use serde_json::Value;

use crate::error::{Error, Result};

/// Applies one `a.b.c=value` override. `value` is parsed as JSON when
/// possible and taken as a string otherwise, so `loss.kl_sign=verbatim`
/// and `k=4` both work.
pub fn apply_override(config: &mut Value, assignment: &str) -> Result<()> {
    let fail = |msg: &str| Error::Override(assignment.to_owned(), msg.to_owned());
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| fail("expected path=value"))?;
    let value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_owned()));
    let mut node = config;
    let keys: Vec<&str> = path.trim().split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| fail("path descends into a non-object field"))?;
        let slot = map
            .get_mut(*key)
            .ok_or_else(|| fail(&format!("unknown field `{}`", keys[..=i].join("."))))?;
        if i + 1 == keys.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one key")
}

/// Resolves a config from an optional file (defaults otherwise) and
/// overrides applied in order, then validates it.
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let base: TrainConfig = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?
        }
        None => TrainConfig::default(),
    };
    let mut value = serde_json::to_value(&base).expect("config serializes");
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let config: TrainConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}
