//! One-hop message passing over typed relations.
//!
//! Every edge type contributes two relations, one per direction, so both
//! endpoint types receive messages. Edge types joining a type to itself are
//! treated as undirected and yield a single relation. A message is the mean
//! of a node's neighbors along one relation; the update sums one linear map
//! per relation with a per-type self map and bias, then applies relu.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Array, SparseMatrix, Tape, Var};
use crate::graph::{Batch, GraphSchema};
use crate::math;
use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GnnError {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("relation {relation}: local id {id} outside {bound} real nodes")]
    DanglingId {
        relation: String,
        id: usize,
        bound: usize,
    },
    #[error("{what}: expected width {expected}, found {found}")]
    Width {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("batch has {found} node types, model expects {expected}")]
    TypeCount { expected: usize, found: usize },
    #[error(
        "node type {node_type} has features in the model but not in the batch, or the reverse"
    )]
    FeaturePresence { node_type: usize },
    #[error("at least one message-passing layer is required")]
    NoLayers,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Messages flow `src -> dst`.
    Forward,
    /// Messages flow `dst -> src`.
    Reverse,
    /// Same-type edge list read in both directions.
    Both,
}

/// A message channel derived from one edge type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub edge_type: usize,
    pub direction: Direction,
    /// Type sending messages.
    pub from: usize,
    /// Type receiving messages.
    pub to: usize,
}

impl Relation {
    pub fn name(&self, schema: &GraphSchema) -> String {
        let (_, rel, _) = &schema.edge_types[self.edge_type];
        match self.direction {
            Direction::Forward | Direction::Both => rel.clone(),
            Direction::Reverse => format!("rev_{rel}"),
        }
    }
}

/// Relations for every edge type, in edge-type order.
pub fn relations(schema: &GraphSchema) -> Vec<Relation> {
    let mut out = Vec::new();
    for (i, &(src, _, dst)) in schema.edge_types.iter().enumerate() {
        if src == dst {
            out.push(Relation {
                edge_type: i,
                direction: Direction::Both,
                from: src,
                to: dst,
            });
        } else {
            out.push(Relation {
                edge_type: i,
                direction: Direction::Forward,
                from: src,
                to: dst,
            });
            out.push(Relation {
                edge_type: i,
                direction: Direction::Reverse,
                from: dst,
                to: src,
            });
        }
    }
    out
}

/// Row-normalized `max_nodes x max_nodes` adjacency of `relation` inside
/// `batch`: row `i` averages the distinct neighbors of receiving node `i`.
pub fn mean_adjacency(batch: &Batch, relation: &Relation) -> Result<SparseMatrix, GnnError> {
    let pairs = &batch.edges[relation.edge_type];
    let (n_from, n_to) = (
        batch.nodes[relation.from].len(),
        batch.nodes[relation.to].len(),
    );
    let dangling = |id: usize, bound: usize| GnnError::DanglingId {
        relation: format!("edge type {}", relation.edge_type),
        id,
        bound,
    };
    let mut links: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(s, d) in pairs {
        let (to, from) = match relation.direction {
            Direction::Forward => (d, s),
            Direction::Reverse => (s, d),
            Direction::Both => (d, s),
        };
        if to >= n_to {
            return Err(dangling(to, n_to));
        }
        if from >= n_from {
            return Err(dangling(from, n_from));
        }
        links.insert((to, from));
        if relation.direction == Direction::Both {
            links.insert((from, to));
        }
    }
    let mut degree = vec![0usize; batch.max_nodes];
    for &(to, _) in &links {
        degree[to] += 1;
    }
    let triplets: Vec<(usize, usize, f64)> = links
        .iter()
        .map(|&(to, from)| (to, from, 1.0 / degree[to] as f64))
        .collect();
    Ok(SparseMatrix::from_triplets(
        batch.max_nodes,
        batch.max_nodes,
        &triplets,
    )?)
}

/// Mean of each receiving node's neighbor rows in `x_from`; nodes without
/// neighbors get zeros.
pub fn aggregate(
    tape: &mut Tape,
    batch: &Batch,
    relation: &Relation,
    x_from: Var,
) -> Result<Var, GnnError> {
    let adj = mean_adjacency(batch, relation)?;
    Ok(tape.spmm(Arc::new(adj), x_from)?)
}

/// `relu(x W_self + Σ msg_r W_r + bias)`.
///
/// `messages` pairs each message matrix with its relation weight.
pub fn sage_update(
    tape: &mut Tape,
    x_self: Var,
    w_self: Var,
    messages: &[(Var, Var)],
    bias: Var,
) -> Result<Var, GnnError> {
    let check = |what, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(GnnError::Width {
                what,
                expected,
                found,
            })
        }
    };
    check(
        "self weight rows",
        tape.value(x_self).cols(),
        tape.value(w_self).rows(),
    )?;
    let out = tape.value(w_self).cols();
    check("bias width", out, tape.value(bias).cols())?;
    let mut pre = tape.matmul(x_self, w_self)?;
    for &(msg, w) in messages {
        check(
            "relation weight rows",
            tape.value(msg).cols(),
            tape.value(w).rows(),
        )?;
        check("relation weight cols", out, tape.value(w).cols())?;
        let term = tape.matmul(msg, w)?;
        pre = tape.add(pre, term)?;
    }
    let pre = tape.add_row(pre, bias)?;
    Ok(tape.relu(pre)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    /// Per node type.
    pub self_weight: Vec<usize>,
    /// Per node type, `1 x d_model`.
    pub bias: Vec<usize>,
    /// Per relation.
    pub relation_weight: Vec<usize>,
}

/// Parameter indices of the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SageLayout {
    pub relations: Vec<Relation>,
    /// Learned input table (`count x d_model`) for featureless types.
    pub tables: Vec<Option<usize>>,
    pub layers: Vec<SageLayer>,
    pub d_model: usize,
}

impl SageLayout {
    /// Allocates encoder parameters in `params`. Weights are drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(
        schema: &GraphSchema,
        d_model: usize,
        layers: usize,
        params: &mut ParamSet,
        rng: &mut dyn RngCore,
    ) -> Result<Self, GnnError> {
        if layers == 0 {
            return Err(GnnError::NoLayers);
        }
        let relations = relations(schema);
        let bound = |fan_in: usize| 1.0 / math::sqrt(fan_in.max(1) as f64);
        let tables = schema
            .type_names
            .iter()
            .enumerate()
            .map(|(t, name)| {
                (schema.feature_dims[t] == 0).then(|| {
                    params.push_uniform(
                        format!("gnn.table.{name}"),
                        schema.counts[t],
                        d_model,
                        bound(d_model),
                        rng,
                    )
                })
            })
            .collect();
        let mut stack = Vec::with_capacity(layers);
        for l in 0..layers {
            let width = |t: usize| {
                if l == 0 && schema.feature_dims[t] > 0 {
                    schema.feature_dims[t]
                } else {
                    d_model
                }
            };
            let mut self_weight = Vec::new();
            let mut bias = Vec::new();
            for (t, name) in schema.type_names.iter().enumerate() {
                let fan_in = width(t);
                self_weight.push(params.push_uniform(
                    format!("gnn.{l}.self.{name}"),
                    fan_in,
                    d_model,
                    bound(fan_in),
                    rng,
                ));
                bias.push(params.push_uniform(
                    format!("gnn.{l}.bias.{name}"),
                    1,
                    d_model,
                    bound(fan_in),
                    rng,
                ));
            }
            let relation_weight = relations
                .iter()
                .map(|r| {
                    let fan_in = width(r.from);
                    params.push_uniform(
                        format!("gnn.{l}.rel.{}", r.name(schema)),
                        fan_in,
                        d_model,
                        bound(fan_in),
                        rng,
                    )
                })
                .collect();
            stack.push(SageLayer {
                self_weight,
                bias,
                relation_weight,
            });
        }
        Ok(Self {
            relations,
            tables,
            layers: stack,
            d_model,
        })
    }
}

/// `max_nodes x 1` column holding 1 for real rows and 0 for padding.
pub fn validity_column(valid: &[bool]) -> Array {
    Array::from_fn(valid.len(), 1, |r, _| if valid[r] { 1.0 } else { 0.0 })
}

/// Layer inputs: batch features, or rows of the learned table for
/// featureless types. Padded rows are zero.
pub fn input_embeddings(
    tape: &mut Tape,
    batch: &Batch,
    layout: &SageLayout,
    vars: &[Var],
) -> Result<Vec<Var>, GnnError> {
    if batch.nodes.len() != layout.tables.len() {
        return Err(GnnError::TypeCount {
            expected: layout.tables.len(),
            found: batch.nodes.len(),
        });
    }
    let mut out = Vec::with_capacity(batch.nodes.len());
    for (t, nodes) in batch.nodes.iter().enumerate() {
        let x = match (&nodes.features, layout.tables[t]) {
            (Some(f), None) => tape.constant(f.clone()),
            (None, Some(table)) => {
                let mut idx: Vec<Option<usize>> =
                    nodes.global_ids.iter().map(|&g| Some(g)).collect();
                idx.resize(batch.max_nodes, None);
                tape.gather_rows(vars[table], idx)?
            }
            _ => return Err(GnnError::FeaturePresence { node_type: t }),
        };
        out.push(x);
    }
    Ok(out)
}

/// Runs every layer and returns one `max_nodes x d_model` matrix per node
/// type, with padded rows zero.
pub fn encode(
    tape: &mut Tape,
    batch: &Batch,
    layout: &SageLayout,
    vars: &[Var],
) -> Result<Vec<Var>, GnnError> {
    let mut xs = input_embeddings(tape, batch, layout, vars)?;
    let masks: Vec<Var> = batch
        .nodes
        .iter()
        .map(|n| tape.constant(validity_column(&n.valid)))
        .collect();
    for layer in &layout.layers {
        let mut messages: Vec<Vec<(Var, Var)>> = vec![Vec::new(); xs.len()];
        for (r, rel) in layout.relations.iter().enumerate() {
            let msg = aggregate(tape, batch, rel, xs[rel.from])?;
            messages[rel.to].push((msg, vars[layer.relation_weight[r]]));
        }
        let mut next = Vec::with_capacity(xs.len());
        for (t, &x) in xs.iter().enumerate() {
            let h = sage_update(
                tape,
                x,
                vars[layer.self_weight[t]],
                &messages[t],
                vars[layer.bias[t]],
            )?;
            next.push(tape.mul_col(h, masks[t])?);
        }
        xs = next;
    }
    Ok(xs)
}
