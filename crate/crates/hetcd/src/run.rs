//! Training runs and their output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hetcd_core::train::{self, EpochRecord, Inference, MetricsReport, TrainError};
use hetcd_core::{HeteroGraph, ModelState, Split, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_dir::fmt_f64;
use crate::{checkpoint, write_atomic, write_json};

pub const HISTORY_HEADER: &str =
    "epoch,train_total,train_cls,train_kl,train_sil,val_total,val_nmi,val_ari,val_acc";
pub const METRIC_KEYS: [&str; 5] = ["acc", "clustering_acc", "nmi", "ari", "silhouette"];

/// The five evaluation metrics, in file order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    pub acc: T,
    pub clustering_acc: T,
    pub nmi: T,
    pub ari: T,
    pub silhouette: T,
}

impl Metrics<f64> {
    pub fn values(&self) -> [f64; 5] {
        [
            self.acc,
            self.clustering_acc,
            self.nmi,
            self.ari,
            self.silhouette,
        ]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            acc: v[0],
            clustering_acc: v[1],
            nmi: v[2],
            ari: v[3],
            silhouette: v[4],
        }
    }
}

impl From<MetricsReport> for Metrics<f64> {
    fn from(r: MetricsReport) -> Self {
        Self::from_values([r.acc, r.clustering_acc, r.nmi, r.ari, r.silhouette])
    }
}

/// Output of `evaluate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    #[serde(flatten)]
    pub metrics: Metrics<f64>,
}

/// `metrics.json` of a training run. The top-level metrics are means over
/// repeats; with one repeat they are that run's values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub split: String,
    #[serde(flatten)]
    pub metrics: Metrics<f64>,
    pub mean: Metrics<f64>,
    /// Sample standard deviation; zero for a single repeat.
    pub std: Metrics<f64>,
    pub per_repeat: Metrics<Vec<f64>>,
    pub seeds: Vec<u64>,
}

impl RunMetrics {
    pub fn from_runs(split: Split, seeds: Vec<u64>, runs: &[Metrics<f64>]) -> Self {
        let n = runs.len() as f64;
        let column = |j: usize| runs.iter().map(|m| m.values()[j]).collect::<Vec<f64>>();
        let mean: [f64; 5] = std::array::from_fn(|j| column(j).iter().sum::<f64>() / n);
        let std: [f64; 5] = std::array::from_fn(|j| {
            if runs.len() < 2 {
                return 0.0;
            }
            let ss: f64 = column(j).iter().map(|x| (x - mean[j]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        });
        let mean = Metrics::from_values(mean);
        Self {
            split: split.as_str().into(),
            metrics: mean.clone(),
            mean,
            std: Metrics::from_values(std),
            per_repeat: Metrics {
                acc: column(0),
                clustering_acc: column(1),
                nmi: column(2),
                ari: column(3),
                silhouette: column(4),
            },
            seeds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub per_repeat_seconds: Vec<f64>,
}

/// Everything needed to replay a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: TrainConfig,
    pub data: PathBuf,
    pub seeds: Vec<u64>,
    pub best_epochs: Vec<usize>,
    pub stopped_early: Vec<bool>,
    pub timings: Timings,
    /// Written files, relative to the run directory.
    pub outputs: Vec<String>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let vals = [
            r.train_total,
            r.train_cls,
            r.train_kl,
            r.train_sil,
            r.val_total,
            r.val_nmi,
            r.val_ari,
            r.val_acc,
        ];
        s.push_str(&r.epoch.to_string());
        for v in vals {
            s.push(',');
            s.push_str(&fmt_f64(v));
        }
        s.push('\n');
    }
    s
}

/// Suffix distinguishing repeat `r`'s files; empty for the first repeat.
fn repeat_suffix(r: usize) -> String {
    if r == 0 {
        String::new()
    } else {
        format!("-{r}")
    }
}

pub fn checkpoint_name(r: usize) -> String {
    format!("model{}.ckpt", repeat_suffix(r))
}

pub fn history_name(r: usize) -> String {
    format!("history{}.csv", repeat_suffix(r))
}

pub const LAST_FINITE: &str = "last_finite.ckpt";

pub struct RunSummary {
    pub metrics: RunMetrics,
    pub manifest: RunManifest,
}

/// Trains `config.repeats` models with seeds `seed, seed + 1, ...` and
/// writes checkpoints, histories, `metrics.json` and `manifest.json` into
/// `out`. Test-split metrics of each best state go into `metrics.json`.
///
/// On divergence the state of the last finite epoch is saved as
/// [`LAST_FINITE`] before the error is returned.
pub fn train_run(
    graph: &HeteroGraph,
    data: &Path,
    config: &TrainConfig,
    out: &Path,
    observe: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let start = Instant::now();
    let mut runs = Vec::new();
    let mut seeds = Vec::new();
    let mut best_epochs = Vec::new();
    let mut stopped_early = Vec::new();
    let mut per_repeat_seconds = Vec::new();
    let mut outputs = Vec::new();
    for r in 0..config.repeats {
        let t0 = Instant::now();
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(r as u64),
            repeats: 1,
            ..config.clone()
        };
        let outcome = match train::train_with(graph, &cfg, &mut |rec| observe(r, rec)) {
            Ok(o) => o,
            Err(TrainError::Diverged {
                epoch,
                source,
                last_finite,
            }) => {
                checkpoint::save(&last_finite, &out.join(LAST_FINITE))?;
                return Err(TrainError::Diverged {
                    epoch,
                    source,
                    last_finite,
                }
                .into());
            }
            Err(e) => return Err(e.into()),
        };
        let ckpt = checkpoint_name(r);
        checkpoint::save(&outcome.best, &out.join(&ckpt))?;
        let hist = history_name(r);
        write_atomic(&out.join(&hist), history_csv(&outcome.history).as_bytes())?;
        outputs.extend([ckpt, hist]);
        runs.push(Metrics::from(train::evaluate(
            &outcome.best,
            graph,
            Split::Test,
        )?));
        seeds.push(cfg.seed);
        best_epochs.push(outcome.best.epoch);
        stopped_early.push(outcome.stopped_early);
        per_repeat_seconds.push(t0.elapsed().as_secs_f64());
    }
    let metrics = RunMetrics::from_runs(Split::Test, seeds.clone(), &runs);
    write_json(&out.join("metrics.json"), &metrics)?;
    outputs.extend(["metrics.json".into(), "manifest.json".into()]);
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        data: data.to_path_buf(),
        seeds,
        best_epochs,
        stopped_early,
        timings: Timings {
            total_seconds: start.elapsed().as_secs_f64(),
            per_repeat_seconds,
        },
        outputs,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunSummary { metrics, manifest })
}

pub fn evaluate(state: &ModelState, graph: &HeteroGraph, split: Split) -> Result<SplitMetrics> {
    Ok(SplitMetrics {
        split: split.as_str().into(),
        metrics: train::evaluate(state, graph, split)?.into(),
    })
}

/// Writes `node_id,pred_community,true_label,e_0,...` for every target
/// node.
pub fn write_embeddings(inference: &Inference, graph: &HeteroGraph, path: &Path) -> Result<()> {
    let d = inference.embeddings.cols();
    let mut buf = Vec::new();
    let header: Vec<String> = ["node_id", "pred_community", "true_label"]
        .into_iter()
        .map(String::from)
        .chain((0..d).map(|j| format!("e_{j}")))
        .collect();
    let io = |e| Error::io(path, e);
    writeln!(buf, "{}", header.join(",")).map_err(io)?;
    let pred = inference.predictions();
    for (i, (&p, &t)) in pred.iter().zip(graph.labels()).enumerate() {
        write!(buf, "{i},{p},{t}").map_err(io)?;
        for &v in inference.embeddings.row(i) {
            write!(buf, ",{}", fmt_f64(v)).map_err(io)?;
        }
        writeln!(buf).map_err(io)?;
    }
    write_atomic(path, &buf)
}
