use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Report, VerifyOptions};
use crate::attention::Dropout;
use crate::autodiff::{finite_diff_check, AdError, Array, SparseMatrix, Tape, Var};
use crate::cluster::{
    kl_clustering_loss, silhouette_loss, silhouette_values, soft_assign, temperature,
};
use crate::graph::{generate_hsbm, HsbmSpec, SubgraphSampler};
use crate::train::{self, LossToggles, SamplingConfig, TrainConfig, TrainError};

/// Central-difference step.
const STEP: f64 = 1e-6;
/// Largest accepted relative gradient error.
pub const GRADIENT_TOL: f64 = 1e-4;
const TRIALS: usize = 3;

type OpFn = fn(&mut Tape, &[Var]) -> Result<Var, AdError>;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array {
    Array::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn positive(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array {
    Array::from_fn(rows, cols, |_, _| rng.random_range(0.5..1.5))
}

/// `sum(w * op(inputs))` with a fixed random `w`, so every output entry
/// gets its own weight.
fn weighted_check(op: OpFn, inputs: &[Array], rng: &mut ChaCha8Rng) -> Result<f64, AdError> {
    let mut probe = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|a| probe.leaf(a.clone())).collect();
    let out = op(&mut probe, &leaves)?;
    let [r, c] = probe.value(out).shape();
    let w = random(r, c, rng);
    finite_diff_check(
        |t, v| {
            let y = op(t, v)?;
            let wy = t.mul_const(y, w.clone())?;
            t.sum(wy)
        },
        inputs,
        STEP,
    )
}

fn op_checks(report: &mut Report, rng: &mut ChaCha8Rng) {
    // Input shapes: `a` is 4 x 3, `b` 3 x 5, `row` 1 x 3, `col` 4 x 1.
    let ops: [(&str, OpFn, &[&str]); 32] = [
        ("matmul", |t, v| t.matmul(v[0], v[1]), &["a", "b"]),
        ("matmul_nt", |t, v| t.matmul_nt(v[0], v[1]), &["a", "a"]),
        ("transpose", |t, v| t.transpose(v[0]), &["a"]),
        ("add", |t, v| t.add(v[0], v[1]), &["a", "a"]),
        ("sub", |t, v| t.sub(v[0], v[1]), &["a", "a"]),
        ("mul", |t, v| t.mul(v[0], v[1]), &["a", "a"]),
        ("div", |t, v| t.div(v[0], v[1]), &["a", "pos"]),
        ("add_row", |t, v| t.add_row(v[0], v[1]), &["a", "row"]),
        ("mul_row", |t, v| t.mul_row(v[0], v[1]), &["a", "row"]),
        ("mul_col", |t, v| t.mul_col(v[0], v[1]), &["a", "col"]),
        ("div_col", |t, v| t.div_col(v[0], v[1]), &["a", "col"]),
        (
            "mul_scalar",
            |t, v| t.mul_scalar(v[0], v[1]),
            &["a", "scalar"],
        ),
        ("scale", |t, v| t.scale(v[0], -1.7), &["a"]),
        ("neg", |t, v| t.neg(v[0]), &["a"]),
        ("add_const", |t, v| t.add_const(v[0], 0.3), &["a"]),
        ("relu", |t, v| t.relu(v[0]), &["a"]),
        ("exp", |t, v| t.exp(v[0]), &["a"]),
        ("ln", |t, v| t.ln(v[0]), &["pos"]),
        ("recip", |t, v| t.recip(v[0]), &["pos"]),
        ("softplus", |t, v| t.softplus(v[0]), &["a"]),
        ("row_softmax", |t, v| t.row_softmax(v[0]), &["a"]),
        ("log_softmax", |t, v| t.log_softmax(v[0]), &["a"]),
        (
            "masked_fill",
            |t, v| t.masked_fill(v[0], (0..12).map(|i| i % 5 == 0).collect(), -3.0),
            &["a"],
        ),
        ("layer_norm", |t, v| t.layer_norm(v[0], 1e-5), &["a"]),
        (
            "concat_cols",
            |t, v| t.concat_cols(&[v[0], v[1]]),
            &["a", "a"],
        ),
        ("slice_cols", |t, v| t.slice_cols(v[0], 1, 2), &["a"]),
        (
            "gather_rows",
            |t, v| t.gather_rows(v[0], vec![Some(2), None, Some(0), Some(2)]),
            &["a"],
        ),
        (
            "pick_per_row",
            |t, v| t.pick_per_row(v[0], vec![0, 2, 1, 1]),
            &["a"],
        ),
        (
            "sum_mean_row_sum",
            |t, v| {
                let s = t.row_sum(v[0])?;
                let m = t.mean(v[0])?;
                let ms = t.mul_scalar(s, m)?;
                t.sum(ms)
            },
            &["a"],
        ),
        ("sq_dist", |t, v| t.sq_dist(v[0], v[1]), &["a", "a"]),
        (
            "spmm",
            |t, v| {
                let m =
                    SparseMatrix::from_triplets(2, 4, &[(0, 1, 0.5), (0, 3, 0.5), (1, 2, 1.0)])?;
                t.spmm(Arc::new(m), v[0])
            },
            &["a"],
        ),
        (
            "silhouette",
            |t, v| t.silhouette(v[0], &[0, 0, 1, 1]),
            &["a"],
        ),
    ];
    for (name, op, shapes) in ops {
        let mut worst: Result<f64, AdError> = Ok(0.0);
        for _ in 0..TRIALS {
            let inputs: Vec<Array> = shapes
                .iter()
                .map(|&s| match s {
                    "a" => random(4, 3, rng),
                    "b" => random(3, 5, rng),
                    "pos" => positive(4, 3, rng),
                    "row" => random(1, 3, rng),
                    "col" => positive(4, 1, rng),
                    _ => random(1, 1, rng),
                })
                .collect();
            worst = match (worst, weighted_check(op, &inputs, rng)) {
                (Ok(a), Ok(b)) => Ok(a.max(b)),
                (Err(e), _) | (_, Err(e)) => Err(e),
            };
        }
        report.record("autodiff", name, GRADIENT_TOL, worst);
    }
}

fn clustering_check(report: &mut Report, options: &VerifyOptions, rng: &mut ChaCha8Rng) {
    let mut worst: Result<f64, AdError> = Ok(0.0);
    for _ in 0..TRIALS {
        let x = random(8, 3, rng);
        let centers = random(3, 3, rng);
        let p = Array::from_fn(8, 3, |_, _| rng.random_range(0.1..1.0));
        let labels: Vec<usize> = (0..8).map(|i| i % 3).collect();
        let raw = Array::scalar(rng.random_range(-0.5..1.0));
        let sign = options.kl_sign;
        let e = finite_diff_check(
            |t, v| {
                let c = t.constant(centers.clone());
                let temp = temperature(t, v[1])?;
                let lift = |e: crate::cluster::ClusterError| match e {
                    crate::cluster::ClusterError::Autodiff(a) => a,
                    _ => AdError::InvalidArgument {
                        op: "clustering loss",
                        reason: "invalid input",
                    },
                };
                let q = soft_assign(t, v[0], c, temp).map_err(lift)?;
                let kl = kl_clustering_loss(t, &p, q, 1e-8, sign).map_err(lift)?;
                let s = silhouette_values(t, v[0], &labels).map_err(lift)?;
                let sil = silhouette_loss(t, s).map_err(lift)?;
                t.add(kl, sil)
            },
            &[x, raw],
            STEP,
        );
        worst = match (worst, e) {
            (Ok(a), Ok(b)) => Ok(a.max(b)),
            (Err(e), _) | (_, Err(e)) => Err(e),
        };
    }
    report.record(
        "cluster",
        "kl + silhouette loss gradient",
        GRADIENT_TOL,
        worst,
    );
}

fn lift(e: TrainError) -> AdError {
    match e {
        TrainError::Autodiff(a) => a,
        _ => AdError::InvalidArgument {
            op: "model forward",
            reason: "forward pass failed",
        },
    }
}

/// Gradient of the total loss with respect to every model parameter, on a
/// small graph with dropout off.
fn pipeline_check(report: &mut Report, options: &VerifyOptions, blocks: usize, name: &str) {
    let result = (|| -> Result<f64, TrainError> {
        let mut spec = HsbmSpec::new(16, 2, 8, 2);
        spec.p_in = 0.4;
        spec.p_out = 0.1;
        spec.feature_dim = 3;
        spec.seed = options.seed;
        let graph = generate_hsbm(&spec)?;
        let mut config = TrainConfig {
            d_model: 4,
            heads: 2,
            blocks,
            ffn_ratio: 2,
            dropout: 0.0,
            sampling: SamplingConfig {
                batch_size: 6,
                budget: 4,
                hops: 2,
            },
            kmeans_restarts: 1,
            seed: options.seed,
            ..TrainConfig::default()
        };
        config.attention.cross_type_values = blocks > 1;
        config.loss.kl_sign = options.kl_sign;
        let budgets = vec![config.sampling.budget; 3];
        let seeds: Vec<usize> = (0..config.sampling.batch_size).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let batch = SubgraphSampler::new(&graph).sample(&seeds, &budgets, 2, &mut rng)?;
        let state = train::lazy_init(&graph, &config, &batch)?;
        let attn = state.attention_spec()?;
        let labels: Vec<Option<usize>> = batch
            .seed_globals()
            .iter()
            .enumerate()
            .map(|(i, &g)| (i % 2 == 0).then_some(graph.labels()[g]))
            .collect();
        let k = state.cluster.k();
        let targets = Array::from_fn(seeds.len(), k, |r, c| {
            if (r + c) % k == 0 {
                0.7
            } else {
                0.3 / (k - 1) as f64
            }
        });
        let toggles = LossToggles {
            classification: true,
            clustering: true,
            silhouette: true,
        };
        let err = finite_diff_check(
            |t, v| {
                let mut none = ChaCha8Rng::seed_from_u64(0);
                let mut drop = Dropout {
                    rate: 0.0,
                    training: false,
                    rng: &mut none,
                };
                let fwd = train::forward(t, &state, v, &batch, &attn, &mut drop).map_err(lift)?;
                let (loss, _) =
                    train::objective(t, &fwd, &labels, &targets, &state.config, toggles)
                        .map_err(lift)?;
                Ok(loss)
            },
            state.params.values(),
            STEP,
        )?;
        Ok(err)
    })();
    report.record("train", name, GRADIENT_TOL, result);
}

pub(super) fn run(report: &mut Report, options: &VerifyOptions) {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    op_checks(report, &mut rng);
    clustering_check(report, options, &mut rng);
    pipeline_check(report, options, 0, "encoder -> losses gradient");
    pipeline_check(
        report,
        options,
        2,
        "encoder -> attention -> losses gradient",
    );
}
