//! Community detection on heterogeneous graphs with a hybrid message-passing
//! encoder, a node-type-aware transformer, and a self-optimizing clustering
//! head.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line and anything touching the filesystem live in the `hetcd` crate.
//!
//! Layout:
//!
//! - [`autodiff`]: dense 2-D arrays, a reverse-mode tape, Adam, gradient checks.
//! - [`graph`]: heterogeneous graph model, synthetic generator, subgraph sampler.
//! - [`gnn`]: one-hop mean-aggregation encoder.
//! - [`attention`]: per-type query/key/value attention and transformer blocks.
//! - [`cluster`]: k-means, soft assignment, target distribution, KL and silhouette losses.
//! - [`metrics`]: NMI, ARI, matched accuracy, silhouette score.
//! - [`train`]: configuration, model state, training loop and evaluation.
//! - [`verify`]: self-check suite exposed through the CLI.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod autodiff;
pub mod cluster;
pub mod gnn;
pub mod graph;
pub mod math;
pub mod metrics;
pub mod params;
pub mod train;
pub mod verify;

pub use autodiff::{Array, Tape, Var};
pub use graph::{Batch, GraphSchema, HeteroGraph, HsbmSpec, Split};
pub use train::{ModelState, TrainConfig};
