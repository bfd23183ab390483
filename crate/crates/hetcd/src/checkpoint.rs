//! Binary model checkpoint.
//!
//! Layout: the 8-byte magic `HETCDCK1`, a little-endian `u64` header length,
//! a JSON header, then every array's values as little-endian `f64`. The
//! header is the serialized [`ModelState`] with each array's `data` replaced
//! by an `offset`/`len` pair into the value section, so reloading restores
//! every parameter bit for bit.

use std::fs;
use std::path::Path;

use hetcd_core::ModelState;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HETCDCK1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    tool_version: String,
    values: usize,
    state: Value,
}

/// An `Array` as serialized: `{shape, data}`.
fn is_array(map: &Map<String, Value>) -> bool {
    map.len() == 2
        && map.get("shape").is_some_and(Value::is_array)
        && map.get("data").is_some_and(Value::is_array)
}

/// An array whose data was moved out: `{shape, offset, len}`.
fn is_stripped(map: &Map<String, Value>) -> bool {
    map.len() == 3
        && ["shape", "offset", "len"]
            .iter()
            .all(|k| map.contains_key(*k))
}

/// Moves array data out of `v` into `blob`.
fn strip(v: &mut Value, blob: &mut Vec<f64>) {
    match v {
        Value::Object(map) if is_array(map) => {
            let Some(Value::Array(data)) = map.remove("data") else {
                unreachable!()
            };
            let offset = blob.len();
            blob.extend(data.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)));
            map.insert("offset".into(), offset.into());
            map.insert("len".into(), data.len().into());
        }
        Value::Object(map) => map.values_mut().for_each(|x| strip(x, blob)),
        Value::Array(items) => items.iter_mut().for_each(|x| strip(x, blob)),
        _ => {}
    }
}

/// Inverse of [`strip`].
fn restore(v: &mut Value, blob: &[f64]) -> std::result::Result<(), String> {
    match v {
        Value::Object(map) if is_stripped(map) => {
            let get = |k: &str| map.get(k).and_then(Value::as_u64).map(|x| x as usize);
            let (Some(offset), Some(len)) = (get("offset"), get("len")) else {
                return Err("array with malformed offset".into());
            };
            let data = offset
                .checked_add(len)
                .and_then(|end| blob.get(offset..end))
                .ok_or("array extends past the value section")?;
            let data: Vec<Value> = data
                .iter()
                .map(|&x| {
                    serde_json::Number::from_f64(x)
                        .map(Value::Number)
                        .ok_or("non-finite value")
                })
                .collect::<std::result::Result<_, _>>()?;
            map.remove("offset");
            map.remove("len");
            map.insert("data".into(), Value::Array(data));
            Ok(())
        }
        Value::Object(map) => map.values_mut().try_for_each(|x| restore(x, blob)),
        Value::Array(items) => items.iter_mut().try_for_each(|x| restore(x, blob)),
        _ => Ok(()),
    }
}

pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let mut value = serde_json::to_value(state).expect("model state serializes");
    let mut blob = Vec::new();
    strip(&mut value, &mut blob);
    let header = Header {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        values: blob.len(),
        state: value,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for x in blob {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> std::result::Result<ModelState, String> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or("not a checkpoint (bad magic)")?;
    let (len, rest) = rest
        .split_first_chunk::<8>()
        .ok_or("truncated header length")?;
    let len = usize::try_from(u64::from_le_bytes(*len)).map_err(|_| "header too large")?;
    if rest.len() < len {
        return Err("truncated header".into());
    }
    let (header, values) = rest.split_at(len);
    let header: Header = serde_json::from_slice(header).map_err(|e| format!("bad header: {e}"))?;
    if header.format_version != FORMAT_VERSION {
        return Err(format!(
            "unsupported format version {}",
            header.format_version
        ));
    }
    if values.len() != 8 * header.values {
        return Err(format!(
            "expected {} values, found {} bytes",
            header.values,
            values.len()
        ));
    }
    let blob: Vec<f64> = values
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut state = header.state;
    restore(&mut state, &blob)?;
    serde_json::from_value(state).map_err(|e| format!("bad model state: {e}"))
}

pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    crate::write_atomic(path, &to_bytes(state))
}

pub fn load(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}
