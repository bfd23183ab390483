//! On-disk graph directory.
//!
//! A directory holds `manifest.json` plus headerless CSV files it
//! references: one feature file per featured node type (one row per node),
//! `src_id,dst_id` edge lists, `node_id,label` labels of the target type and
//! `node_id,split` assignments with split one of `train`, `val`, `test`.
//! Ids are 0-based.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use hetcd_core::graph::{EdgeType, GraphError, NodeType, Split};
use hetcd_core::{Array, HeteroGraph};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphManifest {
    pub node_types: Vec<NodeTypeEntry>,
    pub edge_types: Vec<EdgeTypeEntry>,
    pub target_type: String,
    pub splits_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTypeEntry {
    pub name: String,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_file: Option<String>,
    /// `0` for featureless types.
    #[serde(default)]
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeTypeEntry {
    pub src: String,
    pub rel: String,
    pub dst: String,
    pub file: String,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Every record of a headerless CSV file with its 1-based line number.
/// When `header_ok`, a first line whose leading field is not an integer is
/// skipped.
fn read_rows(path: &Path, header_ok: bool) -> Result<Vec<(usize, Vec<String>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        let fields: Vec<String> = record.iter().map(str::to_owned).collect();
        if i == 0 && header_ok && fields.first().is_some_and(|f| f.parse::<usize>().is_err()) {
            continue;
        }
        rows.push((line, fields));
    }
    Ok(rows)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// `(id, value)` rows with ids below `count`.
fn read_pairs(path: &Path, count: usize) -> Result<Vec<(usize, usize, String)>> {
    read_rows(path, true)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != 2 {
                return Err(parse_error(
                    path,
                    line,
                    format!("expected 2 fields, found {}", f.len()),
                ));
            }
            let id: usize = f[0]
                .parse()
                .map_err(|_| parse_error(path, line, format!("bad node id `{}`", f[0])))?;
            if id >= count {
                return Err(parse_error(
                    path,
                    line,
                    format!("node id {id} out of range for {count} nodes"),
                ));
            }
            Ok((line, id, f[1].clone()))
        })
        .collect()
}

fn read_features(path: &Path, entry: &NodeTypeEntry) -> Result<Array> {
    let rows = read_rows(path, false)?;
    let mut data = Vec::with_capacity(entry.count * entry.feature_dim);
    for (line, fields) in &rows {
        if fields.len() != entry.feature_dim {
            return Err(GraphError::FeatureDimMismatch {
                name: entry.name.clone(),
                declared: entry.feature_dim,
                found: fields.len(),
            }
            .into());
        }
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_error(path, *line, format!("bad feature value `{f}`")))?;
            if !v.is_finite() {
                return Err(parse_error(
                    path,
                    *line,
                    format!("non-finite feature value `{f}`"),
                ));
            }
            data.push(v);
        }
    }
    if rows.len() != entry.count {
        return Err(GraphError::FeatureRows {
            name: entry.name.clone(),
            expected: entry.count,
            found: rows.len(),
        }
        .into());
    }
    Array::new(entry.count, entry.feature_dim, data)
        .map_err(|e| Error::Manifest(format!("node type `{}`: {e}", entry.name)))
}

fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    read_rows(path, false)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != 2 {
                return Err(parse_error(
                    path,
                    line,
                    format!("expected 2 fields, found {}", f.len()),
                ));
            }
            let id = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| parse_error(path, line, format!("bad node id `{s}`")))
            };
            Ok((id(&f[0])?, id(&f[1])?))
        })
        .collect()
}

/// Loads and validates a graph directory.
pub fn load_graph(dir: &Path) -> Result<HeteroGraph> {
    let manifest: GraphManifest = read_json(&dir.join(MANIFEST))?;
    let index = |name: &str| {
        manifest
            .node_types
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Graph(GraphError::UnknownNodeType(name.to_owned())))
    };
    let target_type = index(&manifest.target_type)?;

    let mut node_types = Vec::with_capacity(manifest.node_types.len());
    for entry in &manifest.node_types {
        let features = match (&entry.feature_file, entry.feature_dim) {
            (Some(file), d) if d > 0 => Some(read_features(&dir.join(file), entry)?),
            (None, 0) => None,
            (Some(_), _) => {
                return Err(Error::Manifest(format!(
                    "node type `{}`: feature_file needs feature_dim > 0",
                    entry.name
                )))
            }
            (None, _) => {
                return Err(Error::Manifest(format!(
                    "node type `{}`: feature_dim without feature_file",
                    entry.name
                )))
            }
        };
        node_types.push(NodeType {
            name: entry.name.clone(),
            count: entry.count,
            features,
        });
    }

    let mut edge_types = Vec::with_capacity(manifest.edge_types.len());
    for e in &manifest.edge_types {
        edge_types.push(EdgeType {
            src: index(&e.src)?,
            rel: e.rel.clone(),
            dst: index(&e.dst)?,
            edges: read_edges(&dir.join(&e.file))?,
        });
    }

    let target = &manifest.node_types[target_type];
    let (Some(labels_file), Some(num_classes)) = (&target.labels_file, target.num_classes) else {
        return Err(Error::Manifest(format!(
            "target type `{}` needs labels_file and num_classes",
            target.name
        )));
    };
    let n = target.count;
    let labels_path = dir.join(labels_file);
    let mut labels = vec![None; n];
    for (line, id, value) in read_pairs(&labels_path, n)? {
        let label: usize = value
            .parse()
            .map_err(|_| parse_error(&labels_path, line, format!("bad label `{value}`")))?;
        if labels[id].replace(label).is_some() {
            return Err(Error::DuplicateLabel { node: id });
        }
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(node, l)| l.ok_or(Error::MissingLabel { node }))
        .collect::<Result<Vec<_>>>()?;

    let splits_path = dir.join(&manifest.splits_file);
    let mut splits = vec![None; n];
    for (line, id, value) in read_pairs(&splits_path, n)? {
        let split = Split::parse(&value)
            .ok_or_else(|| parse_error(&splits_path, line, format!("unknown split `{value}`")))?;
        if splits[id].replace(split).is_some() {
            return Err(GraphError::DuplicateSplit { node: id }.into());
        }
    }
    let splits = splits
        .into_iter()
        .enumerate()
        .map(|(node, s)| s.ok_or(Error::Graph(GraphError::MissingSplit { node })))
        .collect::<Result<Vec<_>>>()?;

    Ok(HeteroGraph::new(
        node_types,
        edge_types,
        target_type,
        labels,
        num_classes,
        splits,
    )?)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `graph` into `dir`, creating it if needed. Files already in the
/// directory are overwritten.
pub fn write_graph(graph: &HeteroGraph, dir: &Path) -> Result<GraphManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let target_type = graph.target_type();
    let mut node_types = Vec::new();
    for (i, t) in graph.node_types().iter().enumerate() {
        let mut entry = NodeTypeEntry {
            name: t.name.clone(),
            count: t.count,
            feature_file: None,
            feature_dim: t.feature_dim(),
            labels_file: None,
            num_classes: None,
        };
        if let Some(f) = &t.features {
            let file = format!("{}.features.csv", file_stem(&t.name));
            write_lines(
                &dir.join(&file),
                (0..f.rows()).map(|r| {
                    f.row(r)
                        .iter()
                        .map(|&v| fmt_f64(v))
                        .collect::<Vec<_>>()
                        .join(",")
                }),
            )?;
            entry.feature_file = Some(file);
        }
        if i == target_type {
            let file = String::from("labels.csv");
            write_lines(
                &dir.join(&file),
                graph
                    .labels()
                    .iter()
                    .enumerate()
                    .map(|(n, l)| format!("{n},{l}")),
            )?;
            entry.labels_file = Some(file);
            entry.num_classes = Some(graph.num_classes());
        }
        node_types.push(entry);
    }
    let names: Vec<&str> = graph.node_types().iter().map(|t| t.name.as_str()).collect();
    let mut edge_types = Vec::new();
    for (i, e) in graph.edge_types().iter().enumerate() {
        let file = format!(
            "{i}.{}-{}-{}.edges.csv",
            file_stem(names[e.src]),
            file_stem(&e.rel),
            file_stem(names[e.dst])
        );
        write_lines(
            &dir.join(&file),
            e.edges.iter().map(|(a, b)| format!("{a},{b}")),
        )?;
        edge_types.push(EdgeTypeEntry {
            src: names[e.src].to_owned(),
            rel: e.rel.clone(),
            dst: names[e.dst].to_owned(),
            file,
        });
    }
    let splits_file = String::from("splits.csv");
    write_lines(
        &dir.join(&splits_file),
        graph
            .splits()
            .iter()
            .enumerate()
            .map(|(n, s)| format!("{n},{}", s.as_str())),
    )?;
    let manifest = GraphManifest {
        node_types,
        edge_types,
        target_type: names[target_type].to_owned(),
        splits_file,
    };
    crate::write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}
