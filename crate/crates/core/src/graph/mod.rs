//! Heterogeneous graphs: typed node sets, typed edge lists, and labels and
//! splits on one target node type.

mod hsbm;
mod sampler;

pub use hsbm::{generate_hsbm, HsbmSpec};
pub use sampler::{sample_subgraph, Batch, BatchNodes, SubgraphSampler};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("graph has no node types")]
    NoNodeTypes,
    #[error("node type `{0}` is declared more than once")]
    DuplicateNodeType(String),
    #[error("unknown node type `{0}`")]
    UnknownNodeType(String),
    #[error("node type `{0}` has no nodes")]
    EmptyNodeType(String),
    #[error("node type `{name}`: feature matrix has {found} rows for {expected} nodes")]
    FeatureRows {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("node type `{name}`: declared feature_dim {declared} but found {found} values")]
    FeatureDimMismatch {
        name: String,
        declared: usize,
        found: usize,
    },
    #[error("edge type `{rel}`: node id {id} out of range for `{node_type}` with {count} nodes")]
    EdgeOutOfRange {
        rel: String,
        node_type: String,
        id: usize,
        count: usize,
    },
    #[error("expected {expected} labels, found {found}")]
    LabelCount { expected: usize, found: usize },
    #[error("node {node}: label {label} outside 0..{num_classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("num_classes must be positive")]
    NoClasses,
    #[error("target node {node} has no split")]
    MissingSplit { node: usize },
    #[error("target node {node} is assigned to more than one split")]
    DuplicateSplit { node: usize },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(&'static str),
    #[error("seed set is empty")]
    EmptySeeds,
    #[error("seed {seed} is not a target node (count {count})")]
    BadSeed { seed: usize, count: usize },
    #[error("expected {expected} sampling budgets, found {found}")]
    BudgetCount { expected: usize, found: usize },
}

/// Partition of target nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One node type. `features` is `None` for types that get a learned
/// embedding table instead.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeType {
    pub name: String,
    pub count: usize,
    pub features: Option<Array>,
}

impl NodeType {
    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map_or(0, Array::cols)
    }
}

/// Directed, typed edge list `src -> dst`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeType {
    pub src: usize,
    pub rel: String,
    pub dst: usize,
    pub edges: Vec<(usize, usize)>,
}

/// Node and edge types of a graph without the data. A model built for one
/// schema only accepts graphs with an equal schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSchema {
    pub type_names: Vec<String>,
    pub counts: Vec<usize>,
    /// `0` marks a featureless type.
    pub feature_dims: Vec<usize>,
    /// `(src, relation, dst)` per edge type.
    pub edge_types: Vec<(usize, String, usize)>,
    pub target_type: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    node_types: Vec<NodeType>,
    edge_types: Vec<EdgeType>,
    target_type: usize,
    labels: Vec<usize>,
    num_classes: usize,
    splits: Vec<Split>,
}

impl HeteroGraph {
    /// Validates and assembles a graph. `labels` and `splits` are indexed by
    /// target node id.
    pub fn new(
        node_types: Vec<NodeType>,
        edge_types: Vec<EdgeType>,
        target_type: usize,
        labels: Vec<usize>,
        num_classes: usize,
        splits: Vec<Split>,
    ) -> Result<Self, GraphError> {
        if node_types.is_empty() {
            return Err(GraphError::NoNodeTypes);
        }
        for (i, t) in node_types.iter().enumerate() {
            if node_types[..i].iter().any(|o| o.name == t.name) {
                return Err(GraphError::DuplicateNodeType(t.name.clone()));
            }
            if t.count == 0 {
                return Err(GraphError::EmptyNodeType(t.name.clone()));
            }
            if let Some(f) = &t.features {
                if f.rows() != t.count {
                    return Err(GraphError::FeatureRows {
                        name: t.name.clone(),
                        expected: t.count,
                        found: f.rows(),
                    });
                }
            }
        }
        let target = node_types
            .get(target_type)
            .ok_or_else(|| GraphError::UnknownNodeType(alloc::format!("#{target_type}")))?;
        for e in &edge_types {
            for &ty in &[e.src, e.dst] {
                if ty >= node_types.len() {
                    return Err(GraphError::UnknownNodeType(alloc::format!("#{ty}")));
                }
            }
            let (s, d) = (&node_types[e.src], &node_types[e.dst]);
            for &(a, b) in &e.edges {
                if a >= s.count {
                    return Err(GraphError::EdgeOutOfRange {
                        rel: e.rel.clone(),
                        node_type: s.name.clone(),
                        id: a,
                        count: s.count,
                    });
                }
                if b >= d.count {
                    return Err(GraphError::EdgeOutOfRange {
                        rel: e.rel.clone(),
                        node_type: d.name.clone(),
                        id: b,
                        count: d.count,
                    });
                }
            }
        }
        if num_classes == 0 {
            return Err(GraphError::NoClasses);
        }
        if labels.len() != target.count {
            return Err(GraphError::LabelCount {
                expected: target.count,
                found: labels.len(),
            });
        }
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(GraphError::LabelOutOfRange {
                node,
                label,
                num_classes,
            });
        }
        if splits.len() != target.count {
            return Err(GraphError::MissingSplit {
                node: splits.len().min(target.count),
            });
        }
        Ok(Self {
            node_types,
            edge_types,
            target_type,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn target_type(&self) -> usize {
        self.target_type
    }

    pub fn target(&self) -> &NodeType {
        &self.node_types[self.target_type]
    }

    pub fn target_count(&self) -> usize {
        self.target().count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    /// Target node ids in `split`, ascending.
    pub fn split_nodes(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Structural facts a trained model depends on.
    pub fn schema(&self) -> GraphSchema {
        GraphSchema {
            type_names: self.node_types.iter().map(|t| t.name.clone()).collect(),
            counts: self.node_types.iter().map(|t| t.count).collect(),
            feature_dims: self.node_types.iter().map(NodeType::feature_dim).collect(),
            edge_types: self
                .edge_types
                .iter()
                .map(|e| (e.src, e.rel.clone(), e.dst))
                .collect(),
            target_type: self.target_type,
            num_classes: self.num_classes,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edge_types.iter().map(|e| e.edges.len()).sum()
    }

    /// Same structure with labels replaced; used to show that sampling
    /// never reads labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self, GraphError> {
        Self::new(
            self.node_types.clone(),
            self.edge_types.clone(),
            self.target_type,
            labels,
            self.num_classes,
            self.splits.clone(),
        )
    }
}
