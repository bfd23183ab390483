//! End-to-end training: message passing, transformer blocks, a linear
//! classifier and the soft clustering head, optimized jointly.
//!
//! Every epoch starts from a snapshot of full-graph target embeddings: hard
//! k-means on that snapshot fixes the centers and the target distribution
//! `P` for the epoch. Batches then compute `Q` against the frozen centers.

mod config;

pub use config::{AttentionConfig, LossConfig, SamplingConfig, TrainConfig};

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    resolve_types, transformer_block, AttentionSpec, AttnError, BlockLayout, Dropout,
};
use crate::autodiff::{adam_step, AdError, AdamState, Array, Tape, Var};
use crate::cluster::{
    hard_labels, kl_clustering_loss, kmeans_restarts, silhouette_loss, silhouette_values,
    soft_assign, target_distribution, temperature, temperature_raw, ClusterError, SoftClusterState,
};
use crate::gnn::{encode, GnnError, SageLayout};
use crate::graph::{Batch, GraphError, GraphSchema, HeteroGraph, Split, SubgraphSampler};
use crate::math;
use crate::metrics::{self, MetricError};
use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] GnnError),
    #[error(transparent)]
    Attention(#[from] AttnError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("model does not fit this graph: {0}")]
    Incompatible(String),
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        source: AdError,
        /// State after the last epoch that finished with finite losses.
        last_finite: Box<ModelState>,
    },
}

impl TrainError {
    /// Whether the failure is numeric rather than a bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            TrainError::Diverged { .. } => true,
            TrainError::Autodiff(e) => matches!(e, AdError::NonFinite { .. }),
            _ => false,
        }
    }
}

/// Parameter indices of the whole model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub encoder: SageLayout,
    pub blocks: Vec<BlockLayout>,
    /// `d_model x num_classes`.
    pub classifier: usize,
    pub classifier_bias: usize,
    /// Unconstrained `1 x 1` parameter; the temperature is its softplus.
    pub temperature: usize,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: TrainConfig,
    pub schema: GraphSchema,
    pub layout: ModelLayout,
    pub params: ParamSet,
    pub cluster: SoftClusterState,
    pub optimizer: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
}

impl ModelState {
    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn temperature(&self) -> f64 {
        math::softplus(self.params.get(self.layout.temperature).data()[0])
    }

    pub fn attention_spec(&self) -> Result<AttentionSpec, TrainError> {
        attention_spec(&self.config, &self.schema)
    }

    /// Rejects graphs whose schema differs from the one trained on.
    pub fn check_graph(&self, graph: &HeteroGraph) -> Result<(), TrainError> {
        let s = graph.schema();
        let m = &self.schema;
        let field = if s.type_names != m.type_names {
            "node types"
        } else if s.feature_dims != m.feature_dims {
            "feature widths"
        } else if s.edge_types != m.edge_types {
            "edge types"
        } else if s.target_type != m.target_type {
            "target type"
        } else if s.num_classes != m.num_classes {
            "class count"
        } else if s.counts != m.counts {
            "node counts"
        } else {
            return Ok(());
        };
        Err(TrainError::Incompatible(format!("{field} differ")))
    }
}

fn attention_spec(config: &TrainConfig, schema: &GraphSchema) -> Result<AttentionSpec, TrainError> {
    let tt = schema.target_type;
    let attends = match &config.attention.target_attends {
        Some(names) => resolve_types(&schema.type_names, names).map_err(|n| {
            TrainError::Config(format!(
                "unknown node type `{n}` in attention.target_attends"
            ))
        })?,
        None => (0..schema.type_names.len()).filter(|&t| t != tt).collect(),
    };
    let mut spec = AttentionSpec::new(
        schema.type_names.len(),
        tt,
        attends,
        config.heads,
        config.attention.cross_type_scores,
    );
    spec.scaled = config.attention.scaled;
    spec.cross_type_values = config.attention.cross_type_values;
    spec.validate(schema.type_names.len(), config.d_model)?;
    Ok(spec)
}

/// Independent random streams derived from the config seed.
#[derive(Clone, Copy)]
enum Stream {
    Init = 1,
    Sampling = 2,
    Dropout = 3,
    Inference = 4,
    KMeans = 5,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn budgets(config: &TrainConfig, schema: &GraphSchema) -> Vec<usize> {
    vec![config.sampling.budget; schema.type_names.len()]
}

/// Tape variables of one forward pass over a batch.
pub struct Forward {
    /// Seed embeddings, one row per seed in batch order.
    pub embeddings: Var,
    pub logits: Var,
    /// Soft assignments of the seeds against the frozen centers.
    pub q: Var,
    /// Global target ids of the seeds.
    pub seeds: Vec<usize>,
}

/// Runs the model on `batch` with parameters bound as `vars`.
pub fn forward(
    tape: &mut Tape,
    state: &ModelState,
    vars: &[Var],
    batch: &Batch,
    spec: &AttentionSpec,
    drop: &mut Dropout<'_>,
) -> Result<Forward, TrainError> {
    let layout = &state.layout;
    let mut xs = encode(tape, batch, &layout.encoder, vars)?;
    let valid: Vec<Vec<bool>> = batch.nodes.iter().map(|n| n.valid.clone()).collect();
    for block in &layout.blocks {
        xs = transformer_block(tape, &xs, &valid, block, vars, spec, drop)?;
    }
    let locals: Vec<Option<usize>> = batch.seed_locals().into_iter().map(Some).collect();
    let embeddings = tape.gather_rows(xs[batch.target_type], locals)?;
    let logits = tape.matmul(embeddings, vars[layout.classifier])?;
    let logits = tape.add_row(logits, vars[layout.classifier_bias])?;
    let centers = tape.constant(state.cluster.centers.clone());
    let t = temperature(tape, vars[layout.temperature])?;
    let q = soft_assign(tape, embeddings, centers, t)?;
    Ok(Forward {
        embeddings,
        logits,
        q,
        seeds: batch.seed_globals(),
    })
}

/// Mean negative log-softmax of the true class.
pub fn classification_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
) -> Result<Var, TrainError> {
    let classes = tape.value(logits).cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TrainError::LabelOutOfRange { label, classes });
    }
    let logp = tape.log_softmax(logits)?;
    let picked = tape.pick_per_row(logp, labels.to_vec())?;
    let m = tape.mean(picked)?;
    Ok(tape.neg(m)?)
}

/// Loss components of one evaluation. Disabled or inapplicable terms are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub classification: f64,
    pub clustering: f64,
    pub silhouette: f64,
}

impl LossParts {
    fn add(&mut self, other: &LossParts) {
        self.total += other.total;
        self.classification += other.classification;
        self.clustering += other.clustering;
        self.silhouette += other.silhouette;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.classification *= s;
        self.clustering *= s;
        self.silhouette *= s;
    }
}

/// Which terms enter the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossToggles {
    pub classification: bool,
    pub clustering: bool,
    pub silhouette: bool,
}

fn scalar(tape: &Tape, v: Var) -> Result<f64, TrainError> {
    tape.scalar(v).ok_or_else(|| {
        AdError::NonScalar {
            shape: tape.value(v).shape(),
        }
        .into()
    })
}

/// Unweighted sum of the enabled terms; `None` marks an absent term.
pub fn total_loss(
    tape: &mut Tape,
    classification: Option<Var>,
    clustering: Option<Var>,
    silhouette: Option<Var>,
    toggles: LossToggles,
) -> Result<(Var, LossParts), TrainError> {
    let mut parts = LossParts::default();
    let mut total: Option<Var> = None;
    let terms = [
        (
            classification,
            toggles.classification,
            &mut parts.classification,
        ),
        (clustering, toggles.clustering, &mut parts.clustering),
        (silhouette, toggles.silhouette, &mut parts.silhouette),
    ];
    for (term, on, slot) in terms {
        let Some(v) = term.filter(|_| on) else {
            continue;
        };
        *slot = scalar(tape, v)?;
        total = Some(match total {
            Some(t) => tape.add(t, v)?,
            None => v,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Array::scalar(0.0)),
    };
    parts.total = scalar(tape, total)?;
    Ok((total, parts))
}

/// Loss terms over the rows `rows` of a forward pass.
///
/// `labels[i]` is the class of row `i` when it takes part in the
/// classification loss. `targets` holds the matching rows of `P`.
pub fn objective(
    tape: &mut Tape,
    fwd: &Forward,
    labels: &[Option<usize>],
    targets: &Array,
    config: &TrainConfig,
    toggles: LossToggles,
) -> Result<(Var, LossParts), TrainError> {
    let cls = if toggles.classification {
        let (rows, ys): (Vec<usize>, Vec<usize>) = labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|y| (i, y)))
            .unzip();
        if rows.is_empty() {
            None
        } else {
            let picked = tape.gather_rows(fwd.logits, rows.into_iter().map(Some).collect())?;
            Some(classification_loss(tape, picked, &ys)?)
        }
    } else {
        None
    };
    let kl = if toggles.clustering {
        Some(kl_clustering_loss(
            tape,
            targets,
            fwd.q,
            config.eps,
            config.loss.kl_sign,
        )?)
    } else {
        None
    };
    let sil = if toggles.silhouette {
        let assigned = hard_labels(tape.value(fwd.q));
        match silhouette_values(tape, fwd.embeddings, &assigned) {
            Ok(s) => Some(silhouette_loss(tape, s)?),
            Err(ClusterError::SingleCluster) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    total_loss(tape, cls, kl, sil, toggles)
}

/// Builds the model for `graph` and checks it on one batch.
///
/// Parameters are drawn from the init stream of `config.seed`; initial
/// centers come from k-means on the batch's seed embeddings.
pub fn lazy_init(
    graph: &HeteroGraph,
    config: &TrainConfig,
    batch: &Batch,
) -> Result<ModelState, TrainError> {
    config.validate()?;
    let schema = graph.schema();
    let spec = attention_spec(config, &schema)?;
    check_batch(&schema, batch)?;
    let mut rng = rng_for(config.seed, Stream::Init);
    let d = config.d_model;
    let mut params = ParamSet::new();
    let encoder = SageLayout::init(&schema, d, config.sage_layers, &mut params, &mut rng)?;
    let blocks = (0..config.blocks)
        .map(|b| {
            BlockLayout::init(
                &format!("block{b}"),
                &schema.type_names,
                d,
                config.d_ff(),
                &mut params,
                &mut rng,
            )
        })
        .collect();
    let bound = 1.0 / math::sqrt(d as f64);
    let classifier =
        params.push_uniform("classifier.weight", d, schema.num_classes, bound, &mut rng);
    let classifier_bias =
        params.push_uniform("classifier.bias", 1, schema.num_classes, bound, &mut rng);
    let temperature = params.push(
        "cluster.temperature",
        Array::scalar(temperature_raw(config.t_init)),
    );
    let k = config.clusters(schema.num_classes);
    let mut state = ModelState {
        config: config.clone(),
        layout: ModelLayout {
            encoder,
            blocks,
            classifier,
            classifier_bias,
            temperature,
        },
        schema,
        params,
        cluster: SoftClusterState {
            centers: Array::zeros(k, d),
            eps: config.eps,
        },
        optimizer: AdamState::new(config.learning_rate, config.weight_decay),
        epoch: 0,
        best_val_loss: None,
    };
    let x = batch_embeddings(&state, batch, &spec)?;
    if x.rows() >= k {
        let mut krng = rng_for(config.seed, Stream::KMeans);
        state.cluster.centers = kmeans_restarts(&x, k, config.kmeans_restarts, &mut krng)?.centers;
    }
    Ok(state)
}

fn check_batch(schema: &GraphSchema, batch: &Batch) -> Result<(), TrainError> {
    let types = schema.type_names.len();
    let bad = |what: &str| Err(TrainError::Incompatible(format!("batch {what}")));
    if batch.nodes.len() != types || batch.edges.len() != schema.edge_types.len() {
        return bad("type counts differ from the graph");
    }
    if batch.target_type != schema.target_type {
        return bad("target type differs from the graph");
    }
    for (t, nodes) in batch.nodes.iter().enumerate() {
        let width = nodes.features.as_ref().map_or(0, Array::cols);
        if width != schema.feature_dims[t] || nodes.valid.len() != batch.max_nodes {
            return bad("node rows do not match the graph");
        }
    }
    if batch.seed_locals().is_empty() {
        return bad("has no seeds");
    }
    Ok(())
}

fn batch_embeddings(
    state: &ModelState,
    batch: &Batch,
    spec: &AttentionSpec,
) -> Result<Array, TrainError> {
    let mut tape = Tape::new();
    let vars = state.params.bind_frozen(&mut tape);
    let mut none = ChaCha8Rng::seed_from_u64(0);
    let mut drop = Dropout {
        rate: 0.0,
        training: false,
        rng: &mut none,
    };
    let fwd = forward(&mut tape, state, &vars, batch, spec, &mut drop)?;
    Ok(tape.value(fwd.embeddings).clone())
}

/// Eval-mode outputs for every target node, indexed by target id.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub embeddings: Array,
    pub logits: Array,
    /// Soft assignments against the state's centers.
    pub q: Array,
}

impl Inference {
    pub fn predictions(&self) -> Vec<usize> {
        hard_labels(&self.q)
    }

    pub fn class_predictions(&self) -> Vec<usize> {
        hard_labels(&self.logits)
    }
}

/// Full-graph inference without dropout. Target nodes are processed in
/// consecutive chunks of `sampling.batch_size`; neighborhoods are drawn
/// from a fixed stream of the config seed, so results depend only on the
/// state and the graph.
pub fn infer(state: &ModelState, graph: &HeteroGraph) -> Result<Inference, TrainError> {
    state.check_graph(graph)?;
    let sampler = SubgraphSampler::new(graph);
    infer_with(state, &sampler)
}

fn infer_with(state: &ModelState, sampler: &SubgraphSampler<'_>) -> Result<Inference, TrainError> {
    let config = &state.config;
    let spec = state.attention_spec()?;
    let n = sampler.graph().target_count();
    let (d, c, k) = (config.d_model, state.schema.num_classes, state.cluster.k());
    let mut out = Inference {
        embeddings: Array::zeros(n, d),
        logits: Array::zeros(n, c),
        q: Array::zeros(n, k),
    };
    let mut rng = rng_for(config.seed, Stream::Inference);
    let budgets = budgets(config, &state.schema);
    let ids: Vec<usize> = (0..n).collect();
    for chunk in ids.chunks(config.sampling.batch_size) {
        let batch = sampler.sample(chunk, &budgets, config.sampling.hops, &mut rng)?;
        let mut tape = Tape::new();
        let vars = state.params.bind_frozen(&mut tape);
        let mut drop = Dropout {
            rate: 0.0,
            training: false,
            rng: &mut rng,
        };
        let fwd = forward(&mut tape, state, &vars, &batch, &spec, &mut drop)?;
        for (r, &g) in fwd.seeds.iter().enumerate() {
            out.embeddings
                .row_mut(g)
                .copy_from_slice(tape.value(fwd.embeddings).row(r));
            out.logits
                .row_mut(g)
                .copy_from_slice(tape.value(fwd.logits).row(r));
            out.q.row_mut(g).copy_from_slice(tape.value(fwd.q).row(r));
        }
    }
    Ok(out)
}

/// Evaluation metrics of one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Classifier accuracy.
    pub acc: f64,
    /// Community accuracy under the best cluster-to-class matching.
    pub clustering_acc: f64,
    pub nmi: f64,
    pub ari: f64,
    /// Over all target nodes; 0 when fewer than two communities are found.
    pub silhouette: f64,
}

/// Metrics of `split` from an inference result.
pub fn report(
    inference: &Inference,
    graph: &HeteroGraph,
    split: Split,
) -> Result<MetricsReport, TrainError> {
    let nodes = graph.split_nodes(split);
    let pick = |v: &[usize]| nodes.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let truth = pick(graph.labels());
    let communities = inference.predictions();
    let pred = pick(&communities);
    let classes = pick(&inference.class_predictions());
    let silhouette = match metrics::silhouette_score(&inference.embeddings, &communities) {
        Ok(s) => s,
        Err(MetricError::SingleCluster) => 0.0,
        Err(e) => return Err(e.into()),
    };
    Ok(MetricsReport {
        acc: metrics::accuracy(&classes, &truth)?,
        clustering_acc: metrics::clustering_accuracy(&pred, &truth)?,
        nmi: metrics::nmi(&pred, &truth)?,
        ari: metrics::ari(&pred, &truth)?,
        silhouette,
    })
}

pub fn evaluate(
    state: &ModelState,
    graph: &HeteroGraph,
    split: Split,
) -> Result<MetricsReport, TrainError> {
    report(&infer(state, graph)?, graph, split)
}

/// One row of the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub train_cls: f64,
    pub train_kl: f64,
    pub train_sil: f64,
    pub val_total: f64,
    pub val_nmi: f64,
    pub val_ari: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// State with the lowest validation loss.
    pub best: ModelState,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Centers and targets of one epoch, from full-graph embeddings.
struct Snapshot {
    inference: Inference,
    targets: Array,
}

fn refresh(
    state: &mut ModelState,
    sampler: &SubgraphSampler<'_>,
    krng: &mut ChaCha8Rng,
) -> Result<Snapshot, TrainError> {
    let mut inference = infer_with(state, sampler)?;
    let k = state.cluster.k();
    let km = kmeans_restarts(&inference.embeddings, k, state.config.kmeans_restarts, krng)?;
    state.cluster.centers = km.centers;
    let mut tape = Tape::new();
    let x = tape.constant(inference.embeddings.clone());
    let c = tape.constant(state.cluster.centers.clone());
    let raw = tape.constant(state.params.get(state.layout.temperature).clone());
    let t = temperature(&mut tape, raw)?;
    let q = soft_assign(&mut tape, x, c, t)?;
    inference.q = tape.value(q).clone();
    let targets = target_distribution(&inference.q);
    Ok(Snapshot { inference, targets })
}

fn validation(
    state: &ModelState,
    snap: &Snapshot,
    graph: &HeteroGraph,
    toggles: LossToggles,
) -> Result<(LossParts, MetricsReport), TrainError> {
    let nodes = graph.split_nodes(Split::Val);
    let report = report(&snap.inference, graph, Split::Val)?;
    let mut tape = Tape::new();
    let rows = |a: &Array| a.select_rows(&nodes);
    let fwd = Forward {
        embeddings: tape.constant(rows(&snap.inference.embeddings)),
        logits: tape.constant(rows(&snap.inference.logits)),
        q: tape.constant(rows(&snap.inference.q)),
        seeds: nodes.clone(),
    };
    let labels: Vec<Option<usize>> = nodes.iter().map(|&i| Some(graph.labels()[i])).collect();
    let (_, parts) = objective(
        &mut tape,
        &fwd,
        &labels,
        &rows(&snap.targets),
        &state.config,
        toggles,
    )?;
    Ok((parts, report))
}

fn diverged(epoch: usize, err: TrainError, last: &ModelState) -> TrainError {
    match err {
        TrainError::Autodiff(source @ AdError::NonFinite { .. })
        | TrainError::Cluster(ClusterError::Autodiff(source @ AdError::NonFinite { .. }))
        | TrainError::Encoder(GnnError::Autodiff(source @ AdError::NonFinite { .. }))
        | TrainError::Attention(AttnError::Autodiff(source @ AdError::NonFinite { .. })) => {
            TrainError::Diverged {
                epoch,
                source,
                last_finite: Box::new(last.clone()),
            }
        }
        other => other,
    }
}

pub fn train(graph: &HeteroGraph, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(graph, config, &mut |_| {})
}

/// Trains from scratch, calling `observe` after every epoch.
pub fn train_with(
    graph: &HeteroGraph,
    config: &TrainConfig,
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let schema = graph.schema();
    let spec = attention_spec(config, &schema)?;
    let sampler = SubgraphSampler::new(graph);
    let budgets = budgets(config, &schema);
    let mut sample_rng = rng_for(config.seed, Stream::Sampling);
    let mut drop_rng = rng_for(config.seed, Stream::Dropout);
    let mut krng = rng_for(config.seed, Stream::KMeans);

    let n = graph.target_count();
    let mut order: Vec<usize> = (0..n).collect();
    let first = sampler.sample(
        &order[..config.sampling.batch_size.min(n)],
        &budgets,
        config.sampling.hops,
        &mut sample_rng,
    )?;
    let mut state = lazy_init(graph, config, &first)?;
    let k = state.cluster.k();
    if n < k {
        return Err(ClusterError::TooFewPoints { n, k }.into());
    }

    let train_label: Vec<Option<usize>> = graph
        .splits()
        .iter()
        .zip(graph.labels())
        .map(|(&s, &y)| (s == Split::Train).then_some(y))
        .collect();
    let full = LossToggles {
        classification: config.loss.classification,
        clustering: config.loss.clustering,
        silhouette: config.loss.silhouette,
    };

    let mut snap = refresh(&mut state, &sampler, &mut krng).map_err(|e| diverged(0, e, &state))?;
    let mut history = Vec::new();
    let mut best = state.clone();
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        let toggles = if epoch < config.loss.warmup_epochs {
            LossToggles {
                clustering: false,
                silhouette: false,
                ..full
            }
        } else {
            full
        };
        let last = state.clone();
        let mut step = || -> Result<(LossParts, Snapshot, LossParts, MetricsReport), TrainError> {
            let mut sums = LossParts::default();
            order.shuffle(&mut sample_rng);
            let chunks: Vec<&[usize]> = order.chunks(config.sampling.batch_size).collect();
            for seeds in &chunks {
                let batch =
                    sampler.sample(seeds, &budgets, config.sampling.hops, &mut sample_rng)?;
                let mut tape = Tape::new();
                let vars = state.params.bind(&mut tape);
                let mut drop = Dropout {
                    rate: config.dropout,
                    training: true,
                    rng: &mut drop_rng,
                };
                let fwd = forward(&mut tape, &state, &vars, &batch, &spec, &mut drop)?;
                let labels: Vec<Option<usize>> =
                    fwd.seeds.iter().map(|&g| train_label[g]).collect();
                let targets = snap.targets.select_rows(&fwd.seeds);
                let (loss, parts) = objective(&mut tape, &fwd, &labels, &targets, config, toggles)?;
                let grads = tape.backward(loss)?;
                let grads = state.params.gradients(&vars, &grads);
                adam_step(state.params.values_mut(), &grads, &mut state.optimizer)?;
                sums.add(&parts);
            }
            sums.scale(1.0 / chunks.len() as f64);
            let next = refresh(&mut state, &sampler, &mut krng)?;
            let (val, report) = validation(&state, &next, graph, full)?;
            Ok((sums, next, val, report))
        };
        let (train_parts, next, val, report) = step().map_err(|e| diverged(epoch, e, &last))?;
        snap = next;
        state.epoch = epoch + 1;
        let record = EpochRecord {
            epoch,
            train_total: train_parts.total,
            train_cls: train_parts.classification,
            train_kl: train_parts.clustering,
            train_sil: train_parts.silhouette,
            val_total: val.total,
            val_nmi: report.nmi,
            val_ari: report.ari,
            val_acc: report.acc,
        };
        observe(&record);
        history.push(record);
        if state.best_val_loss.is_none_or(|b| val.total < b) {
            state.best_val_loss = Some(val.total);
            best = state.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        history,
        stopped_early,
    })
}
