//! File formats, run outputs and the command-line driver around
//! `hetcd-core`.
//!
//! - [`graph_dir`]: graph directory reader and writer.
//! - [`checkpoint`]: binary model checkpoints.
//! - [`config`]: JSON training config with `path=value` overrides.
//! - [`run`]: training runs, metrics, histories, manifests, embeddings.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod graph_dir;
pub mod run;

use std::fs;
use std::path::Path;

pub use error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
