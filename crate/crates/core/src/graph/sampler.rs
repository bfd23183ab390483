//! Layer-wise typed neighbor sampling for mini-batches.
//!
//! Starting from a set of target seeds, each hop collects the not-yet-sampled
//! neighbors of the current frontier, grouped by node type, and keeps up to
//! `budgets[type]` of them, chosen uniformly without replacement. The batch
//! is the induced subgraph on everything kept.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use super::{GraphError, HeteroGraph};
use crate::autodiff::Array;

/// Nodes of one type inside a [`Batch`], padded to `max_nodes`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNodes {
    /// Global id of each real local node; local id = position.
    pub global_ids: Vec<usize>,
    /// `max_nodes x feature_dim`; padded rows are zero. `None` for
    /// featureless types.
    pub features: Option<Array>,
    /// `true` for real rows, `false` for padding; length `max_nodes`.
    pub valid: Vec<bool>,
    /// Seed flags, length `max_nodes`. Only target nodes can be seeds.
    pub seed: Vec<bool>,
}

impl BatchNodes {
    pub fn len(&self) -> usize {
        self.global_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global_ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub max_nodes: usize,
    pub target_type: usize,
    /// One entry per graph node type.
    pub nodes: Vec<BatchNodes>,
    /// One entry per graph edge type: local `(src, dst)` pairs.
    pub edges: Vec<Vec<(usize, usize)>>,
}

impl Batch {
    /// Local ids of the seed nodes, in seed order.
    pub fn seed_locals(&self) -> Vec<usize> {
        let t = &self.nodes[self.target_type];
        (0..t.len()).filter(|&i| t.seed[i]).collect()
    }

    /// Global ids of the seed nodes, in seed order.
    pub fn seed_globals(&self) -> Vec<usize> {
        let t = &self.nodes[self.target_type];
        self.seed_locals()
            .into_iter()
            .map(|i| t.global_ids[i])
            .collect()
    }

    /// Same batch with extra padding rows. `max_nodes` below the current
    /// value is ignored.
    pub fn with_max_nodes(&self, max_nodes: usize) -> Batch {
        let m = max_nodes.max(self.max_nodes);
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut valid = n.valid.clone();
                valid.resize(m, false);
                let mut seed = n.seed.clone();
                seed.resize(m, false);
                let features = n.features.as_ref().map(|f| {
                    Array::from_fn(
                        m,
                        f.cols(),
                        |r, c| if r < f.rows() { f.get(r, c) } else { 0.0 },
                    )
                });
                BatchNodes {
                    global_ids: n.global_ids.clone(),
                    features,
                    valid,
                    seed,
                }
            })
            .collect();
        Batch {
            max_nodes: m,
            target_type: self.target_type,
            nodes,
            edges: self.edges.clone(),
        }
    }
}

/// Sampler holding a typed neighbor index of one graph.
pub struct SubgraphSampler<'g> {
    graph: &'g HeteroGraph,
    /// `offsets[t][i]..offsets[t][i + 1]` indexes `neighbors[t]`.
    offsets: Vec<Vec<usize>>,
    neighbors: Vec<Vec<(usize, usize)>>,
}

impl<'g> SubgraphSampler<'g> {
    pub fn new(graph: &'g HeteroGraph) -> Self {
        let types = graph.node_types();
        let mut degree: Vec<Vec<usize>> = types.iter().map(|t| vec![0; t.count]).collect();
        for e in graph.edge_types() {
            for &(s, d) in &e.edges {
                degree[e.src][s] += 1;
                degree[e.dst][d] += 1;
            }
        }
        let mut offsets: Vec<Vec<usize>> = Vec::with_capacity(types.len());
        for deg in &degree {
            let mut off = Vec::with_capacity(deg.len() + 1);
            off.push(0);
            for &d in deg {
                off.push(off.last().copied().unwrap_or(0) + d);
            }
            offsets.push(off);
        }
        let mut neighbors: Vec<Vec<(usize, usize)>> = offsets
            .iter()
            .map(|o| vec![(0, 0); *o.last().unwrap_or(&0)])
            .collect();
        let mut fill: Vec<Vec<usize>> = offsets.iter().map(|o| o[..o.len() - 1].to_vec()).collect();
        for e in graph.edge_types() {
            for &(s, d) in &e.edges {
                neighbors[e.src][fill[e.src][s]] = (e.dst, d);
                fill[e.src][s] += 1;
                neighbors[e.dst][fill[e.dst][d]] = (e.src, s);
                fill[e.dst][d] += 1;
            }
        }
        Self {
            graph,
            offsets,
            neighbors,
        }
    }

    pub fn graph(&self) -> &HeteroGraph {
        self.graph
    }

    fn neighbors_of(&self, ty: usize, id: usize) -> &[(usize, usize)] {
        &self.neighbors[ty][self.offsets[ty][id]..self.offsets[ty][id + 1]]
    }

    /// Samples a batch around `seeds` (target node ids, duplicates ignored).
    ///
    /// `budgets` has one entry per node type and caps how many new nodes of
    /// that type each hop may add.
    pub fn sample(
        &self,
        seeds: &[usize],
        budgets: &[usize],
        hops: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Batch, GraphError> {
        let g = self.graph;
        let types = g.node_types();
        if seeds.is_empty() {
            return Err(GraphError::EmptySeeds);
        }
        if budgets.len() != types.len() {
            return Err(GraphError::BudgetCount {
                expected: types.len(),
                found: budgets.len(),
            });
        }
        let tt = g.target_type();
        let mut local: Vec<Vec<Option<usize>>> =
            types.iter().map(|t| vec![None; t.count]).collect();
        let mut globals: Vec<Vec<usize>> = vec![Vec::new(); types.len()];
        let mut frontier: Vec<(usize, usize)> = Vec::new();
        for &s in seeds {
            if s >= types[tt].count {
                return Err(GraphError::BadSeed {
                    seed: s,
                    count: types[tt].count,
                });
            }
            if local[tt][s].is_none() {
                local[tt][s] = Some(globals[tt].len());
                globals[tt].push(s);
                frontier.push((tt, s));
            }
        }
        let n_seeds = globals[tt].len();

        for _ in 0..hops {
            let mut candidates: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); types.len()];
            for &(ty, id) in &frontier {
                for &(nt, nid) in self.neighbors_of(ty, id) {
                    if local[nt][nid].is_none() {
                        candidates[nt].insert(nid);
                    }
                }
            }
            let mut next = Vec::new();
            for (ty, cand) in candidates.into_iter().enumerate() {
                let cand: Vec<usize> = cand.into_iter().collect();
                let take = budgets[ty].min(cand.len());
                if take == 0 {
                    continue;
                }
                let mut picked = rand::seq::index::sample(rng, cand.len(), take).into_vec();
                picked.sort_unstable();
                for i in picked {
                    let id = cand[i];
                    local[ty][id] = Some(globals[ty].len());
                    globals[ty].push(id);
                    next.push((ty, id));
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }

        let max_nodes = globals.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let nodes = types
            .iter()
            .zip(&globals)
            .enumerate()
            .map(|(ty, (t, ids))| {
                let features = t.features.as_ref().map(|f| {
                    let mut out = Array::zeros(max_nodes, f.cols());
                    for (r, &gid) in ids.iter().enumerate() {
                        out.row_mut(r).copy_from_slice(f.row(gid));
                    }
                    out
                });
                let mut valid = vec![false; max_nodes];
                valid[..ids.len()].iter_mut().for_each(|v| *v = true);
                let mut seed = vec![false; max_nodes];
                if ty == tt {
                    seed[..n_seeds].iter_mut().for_each(|v| *v = true);
                }
                BatchNodes {
                    global_ids: ids.clone(),
                    features,
                    valid,
                    seed,
                }
            })
            .collect();
        let edges = g
            .edge_types()
            .iter()
            .map(|e| {
                e.edges
                    .iter()
                    .filter_map(|&(s, d)| Some((local[e.src][s]?, local[e.dst][d]?)))
                    .collect()
            })
            .collect();
        Ok(Batch {
            max_nodes,
            target_type: tt,
            nodes,
            edges,
        })
    }
}

/// One-shot form of [`SubgraphSampler::sample`]; builds the neighbor index
/// on every call.
pub fn sample_subgraph(
    graph: &HeteroGraph,
    seeds: &[usize],
    budgets: &[usize],
    hops: usize,
    rng: &mut dyn RngCore,
) -> Result<Batch, GraphError> {
    SubgraphSampler::new(graph).sample(seeds, budgets, hops, rng)
}
