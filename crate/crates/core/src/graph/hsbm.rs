//! Seeded heterogeneous stochastic block model.
//!
//! Every node of every type is planted in one of `communities` groups.
//! Target nodes are linked to each other (undirected, stored once as
//! `i < j`) and to every auxiliary type, with probability `p_in` inside a
//! community and `p_out` across. Features are Gaussian around a
//! per-type, per-community mean.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EdgeType, GraphError, HeteroGraph, NodeType, Split};
use crate::autodiff::Array;
use crate::math;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsbmSpec {
    /// Node type names; the first is the target type.
    pub type_names: Vec<String>,
    pub counts: Vec<usize>,
    pub communities: usize,
    /// Relative community sizes. `None` plants exactly balanced communities.
    pub community_weights: Option<Vec<f64>>,
    pub p_in: f64,
    pub p_out: f64,
    /// Feature width for every type; `0` makes all types featureless.
    pub feature_dim: usize,
    /// Norm of each community mean vector.
    pub feature_separation: f64,
    /// Standard deviation of per-entry Gaussian noise.
    pub feature_noise: f64,
    pub seed: u64,
}

impl HsbmSpec {
    /// One target type `target` and `aux_types` auxiliary types named
    /// `aux0`, `aux1`, ...
    pub fn new(
        target_nodes: usize,
        aux_types: usize,
        aux_nodes: usize,
        communities: usize,
    ) -> Self {
        let mut type_names = vec![String::from("target")];
        let mut counts = vec![target_nodes];
        for a in 0..aux_types {
            type_names.push(format!("aux{a}"));
            counts.push(aux_nodes);
        }
        Self {
            type_names,
            counts,
            communities,
            community_weights: None,
            p_in: 0.1,
            p_out: 0.005,
            feature_dim: 16,
            feature_separation: 1.0,
            feature_noise: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let p_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !p_ok(self.p_in) || !p_ok(self.p_out) {
            return Err(GraphError::InvalidSpec("probabilities must lie in [0, 1]"));
        }
        if self.p_out > self.p_in {
            return Err(GraphError::InvalidSpec("p_out must not exceed p_in"));
        }
        if self.type_names.is_empty() || self.type_names.len() != self.counts.len() {
            return Err(GraphError::InvalidSpec("one count per node type required"));
        }
        if self.counts.contains(&0) {
            return Err(GraphError::InvalidSpec("node counts must be positive"));
        }
        if self.communities == 0 {
            return Err(GraphError::InvalidSpec("at least one community required"));
        }
        if let Some(w) = &self.community_weights {
            if w.len() != self.communities
                || w.iter().any(|&x| !(x.is_finite() && x >= 0.0))
                || w.iter().sum::<f64>() <= 0.0
            {
                return Err(GraphError::InvalidSpec(
                    "community weights must be non-negative, one per community",
                ));
            }
        }
        if !(self.feature_separation.is_finite()
            && self.feature_noise.is_finite()
            && self.feature_noise >= 0.0)
        {
            return Err(GraphError::InvalidSpec(
                "feature scales must be finite and noise non-negative",
            ));
        }
        Ok(())
    }
}

fn plant(count: usize, spec: &HsbmSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match &spec.community_weights {
        None => {
            let mut c: Vec<usize> = (0..count).map(|i| i % spec.communities).collect();
            c.shuffle(rng);
            c
        }
        Some(w) => {
            let total: f64 = w.iter().sum();
            (0..count)
                .map(|_| {
                    let mut u = rng.random::<f64>() * total;
                    for (k, &wk) in w.iter().enumerate() {
                        if u < wk {
                            return k;
                        }
                        u -= wk;
                    }
                    w.len() - 1
                })
                .collect()
        }
    }
}

fn features(count: usize, membership: &[usize], spec: &HsbmSpec, rng: &mut ChaCha8Rng) -> Array {
    let d = spec.feature_dim;
    let means: Vec<Vec<f64>> = (0..spec.communities)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = math::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(f64::MIN_POSITIVE);
            v.iter()
                .map(|x| x / norm * spec.feature_separation)
                .collect()
        })
        .collect();
    Array::from_fn(count, d, |i, j| {
        let noise: f64 = StandardNormal.sample(rng);
        means[membership[i]][j] + spec.feature_noise * noise
    })
}

/// Generates a graph from `spec`. Deterministic in `spec.seed`.
///
/// Target labels are the planted communities, and target splits are a
/// seeded 40/30/30 train/val/test partition.
pub fn generate_hsbm(spec: &HsbmSpec) -> Result<HeteroGraph, GraphError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let membership: Vec<Vec<usize>> = spec
        .counts
        .iter()
        .map(|&n| plant(n, spec, &mut rng))
        .collect();
    let tc = &membership[0];
    let bernoulli = |same: bool, rng: &mut ChaCha8Rng| {
        let p = if same { spec.p_in } else { spec.p_out };
        rng.random::<f64>() < p
    };

    let mut edge_types = Vec::new();
    let mut links = Vec::new();
    for i in 0..spec.counts[0] {
        for j in (i + 1)..spec.counts[0] {
            if bernoulli(tc[i] == tc[j], &mut rng) {
                links.push((i, j));
            }
        }
    }
    edge_types.push(EdgeType {
        src: 0,
        rel: String::from("links"),
        dst: 0,
        edges: links,
    });
    for a in 1..spec.counts.len() {
        let ac = &membership[a];
        let mut edges = Vec::new();
        for i in 0..spec.counts[0] {
            for j in 0..spec.counts[a] {
                if bernoulli(tc[i] == ac[j], &mut rng) {
                    edges.push((i, j));
                }
            }
        }
        edge_types.push(EdgeType {
            src: 0,
            rel: format!("has_{}", spec.type_names[a]),
            dst: a,
            edges,
        });
    }

    let node_types = spec
        .type_names
        .iter()
        .zip(&spec.counts)
        .zip(&membership)
        .map(|((name, &count), m)| NodeType {
            name: name.clone(),
            count,
            features: (spec.feature_dim > 0).then(|| features(count, m, spec, &mut rng)),
        })
        .collect();

    let n = spec.counts[0];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (n * 4 + 5) / 10;
    let n_val = (n * 3 + 5) / 10;
    let mut splits = vec![Split::Test; n];
    for (rank, &node) in order.iter().enumerate() {
        splits[node] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    HeteroGraph::new(
        node_types,
        edge_types,
        0,
        tc.clone(),
        spec.communities,
        splits,
    )
}
