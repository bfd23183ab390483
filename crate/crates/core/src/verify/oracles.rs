use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Report, VerifyOptions};
use crate::attention::{
    multi_head_attention, project_qkv, type_scores, AttentionSpec, BlockLayout, Dropout, Qkv,
};
use crate::autodiff::{Array, Tape, Var};
use crate::cluster::{
    kl_clustering_loss, kmeans, silhouette_values, soft_assign, target_distribution, ClusterError,
};
use crate::graph::{generate_hsbm, HsbmSpec, SubgraphSampler};
use crate::math;
use crate::metrics;
use crate::params::ParamSet;
use crate::train::{self, SamplingConfig, TrainConfig, TrainError};

const EXAMPLE_TOL: f64 = 1e-6;
const ORACLE_TOL: f64 = 1e-12;
const INVARIANCE_TOL: f64 = 1e-10;

fn q_of(x: &Array, c: &Array, t: f64) -> Result<Array, ClusterError> {
    let mut tape = Tape::new();
    let (xv, cv, tv) = (
        tape.constant(x.clone()),
        tape.constant(c.clone()),
        tape.constant(Array::scalar(t)),
    );
    let q = soft_assign(&mut tape, xv, cv, tv)?;
    Ok(tape.value(q).clone())
}

fn rows(data: &[&[f64]]) -> Array {
    Array::from_rows(data).unwrap_or_else(|_| Array::zeros(0, 0))
}

fn cluster_examples(report: &mut Report, options: &VerifyOptions) {
    let c = rows(&[&[0.0, 0.0], &[1.0, 0.0]]);
    let q = q_of(&rows(&[&[0.0, 0.0]]), &c, 1.0).map(|q| {
        (q.get(0, 0) - 2.0 / 3.0)
            .abs()
            .max((q.get(0, 1) - 1.0 / 3.0).abs())
    });
    report.record("cluster", "soft assignment [2/3, 1/3]", EXAMPLE_TOL, q);

    let single = rows(&[&[0.8, 0.2]]);
    report.record::<ClusterError>(
        "cluster",
        "target distribution fixed point",
        EXAMPLE_TOL,
        Ok(target_distribution(&single).max_abs_diff(&single)),
    );
    let p = target_distribution(&rows(&[&[0.8, 0.2], &[0.6, 0.4]]));
    report.value(
        "cluster",
        "target distribution sharpening 0.8727",
        p.get(0, 0),
        0.872_727_272_727_272_8,
        EXAMPLE_TOL,
    );

    let kl = (|| -> Result<f64, ClusterError> {
        let mut tape = Tape::new();
        let q = tape.constant(rows(&[&[0.5, 0.5]]));
        let l = kl_clustering_loss(&mut tape, &rows(&[&[1.0, 0.0]]), q, 1e-15, options.kl_sign)?;
        Ok((tape.value(l).data()[0] - core::f64::consts::LN_2).abs())
    })();
    report.record("cluster", "kl divergence ln 2", EXAMPLE_TOL, kl);
    let kl_zero = (|| -> Result<f64, ClusterError> {
        let p = rows(&[&[0.7, 0.2, 0.1], &[0.1, 0.1, 0.8]]);
        let mut tape = Tape::new();
        let q = tape.constant(rows(&[&[0.3, 0.3, 0.4], &[0.2, 0.5, 0.3]]));
        let l = kl_clustering_loss(&mut tape, &p, q, 1e-15, options.kl_sign)?;
        // The divergence of any pair is non-negative.
        Ok((-tape.value(l).data()[0]).max(0.0))
    })();
    report.record(
        "cluster",
        "kl divergence non-negative",
        EXAMPLE_TOL,
        kl_zero,
    );

    let sil = (|| -> Result<f64, ClusterError> {
        let mut tape = Tape::new();
        let x = tape.constant(rows(&[&[0.0], &[1.0], &[5.0]]));
        let s = silhouette_values(&mut tape, x, &[0, 0, 1])?;
        let got = tape.value(s).data();
        Ok([0.8, 0.75, 0.0]
            .iter()
            .zip(got)
            .map(|(w, g)| (w - g).abs())
            .fold(0.0, f64::max))
    })();
    report.record("cluster", "silhouette {0.8, 0.75, 0}", EXAMPLE_TOL, sil);

    let km = (|| -> Result<f64, ClusterError> {
        let x = rows(&[&[0.0], &[0.1], &[10.0], &[10.1]]);
        let k = kmeans(&x, 2, &mut ChaCha8Rng::seed_from_u64(options.seed))?;
        let mut c = [k.centers.get(0, 0), k.centers.get(1, 0)];
        c.sort_by(f64::total_cmp);
        let split =
            k.labels[0] == k.labels[1] && k.labels[2] == k.labels[3] && k.labels[0] != k.labels[2];
        Ok(if split {
            (c[0] - 0.05).abs().max((c[1] - 10.05).abs())
        } else {
            f64::INFINITY
        })
    })();
    report.record("cluster", "k-means centers {0.05, 10.05}", EXAMPLE_TOL, km);
}

fn attention_example(report: &mut Report) {
    let r = (|| -> Result<f64, crate::attention::AttnError> {
        let mut tape = Tape::new();
        let q = tape.constant(Array::identity(2));
        let s = type_scores(&mut tape, q, q, true)?;
        let want = [math::sqrt(0.5), 0.0, 0.0, math::sqrt(0.5)];
        Ok(want
            .iter()
            .zip(tape.value(s).data())
            .map(|(w, g)| (w - g).abs())
            .fold(0.0, f64::max))
    })();
    report.record("attention", "identity scores 0.7071", EXAMPLE_TOL, r);
}

/// Entropies and mutual information from item-level frequencies.
fn definitional_nmi(p: &[usize], t: &[usize]) -> f64 {
    let n = p.len() as f64;
    let ids = |v: &[usize]| {
        let mut u = v.to_vec();
        u.sort_unstable();
        u.dedup();
        u
    };
    let (pi, ti) = (ids(p), ids(t));
    let freq = |f: &dyn Fn(usize) -> bool| (0..p.len()).filter(|&i| f(i)).count() as f64 / n;
    let h = |labels: &[usize], v: &[usize]| -> f64 {
        labels
            .iter()
            .map(|&l| {
                let q = freq(&|i| v[i] == l);
                -q * math::ln(q)
            })
            .sum()
    };
    let (hp, ht) = (h(&pi, p), h(&ti, t));
    if hp == 0.0 || ht == 0.0 {
        return if hp == ht { 1.0 } else { 0.0 };
    }
    let mut mi = 0.0;
    for &a in &pi {
        for &b in &ti {
            let joint = freq(&|i| p[i] == a && t[i] == b);
            if joint > 0.0 {
                mi += joint * math::ln(joint / (freq(&|i| p[i] == a) * freq(&|i| t[i] == b)));
            }
        }
    }
    mi / ((hp + ht) / 2.0)
}

/// Adjusted Rand index by counting item pairs.
fn pair_counting_ari(p: &[usize], t: &[usize]) -> f64 {
    let n = p.len();
    let (mut both, mut in_p, mut in_t, mut total) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let (sp, st) = (p[i] == p[j], t[i] == t[j]);
            total += 1.0;
            in_p += f64::from(u8::from(sp));
            in_t += f64::from(u8::from(st));
            both += f64::from(u8::from(sp && st));
        }
    }
    let expected = in_p * in_t / total;
    let max = (in_p + in_t) / 2.0;
    if max == expected {
        1.0
    } else {
        (both - expected) / (max - expected)
    }
}

fn labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..k).map(move |c| {
                    let mut w = v.clone();
                    w.push(c);
                    w
                })
            })
            .collect();
    }
    out
}

fn metric_oracles(report: &mut Report, rng: &mut ChaCha8Rng) {
    let (mut nmi_err, mut ari_err) = (Ok(0.0f64), Ok(0.0f64));
    for n in 2..=6 {
        let parts = labelings(n, 3);
        for p in &parts {
            for t in &parts {
                nmi_err = nmi_err
                    .and_then(|e| Ok(e.max((metrics::nmi(p, t)? - definitional_nmi(p, t)).abs())));
                ari_err = ari_err
                    .and_then(|e| Ok(e.max((metrics::ari(p, t)? - pair_counting_ari(p, t)).abs())));
            }
        }
    }
    report.record::<metrics::MetricError>(
        "metrics",
        "nmi vs definition, all partitions n <= 6",
        ORACLE_TOL,
        nmi_err,
    );
    report.record::<metrics::MetricError>(
        "metrics",
        "ari vs pair counting, all partitions n <= 6",
        ORACLE_TOL,
        ari_err,
    );

    let mut acc_err = Ok(0.0f64);
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let n = rng.random_range(1..20);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let best = permutations(k)
            .iter()
            .map(|perm| {
                pred.iter()
                    .zip(&truth)
                    .filter(|&(&p, &t)| perm[p] == t)
                    .count()
            })
            .max()
            .unwrap_or(0);
        acc_err =
            acc_err.and_then(|e| {
                Ok(e.max(
                    (metrics::clustering_accuracy(&pred, &truth)? - best as f64 / n as f64).abs(),
                ))
            });
    }
    report.record::<metrics::MetricError>(
        "metrics",
        "matched accuracy vs permutation search",
        ORACLE_TOL,
        acc_err,
    );

    let s = metrics::silhouette_samples(&rows(&[&[0.0], &[1.0], &[5.0]]), &[0, 0, 1]).map(|s| {
        [0.8, 0.75, 0.0]
            .iter()
            .zip(&s)
            .map(|(w, g)| (w - g).abs())
            .fold(0.0, f64::max)
    });
    report.record("metrics", "silhouette score {0.8, 0.75, 0}", EXAMPLE_TOL, s);
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Masked scaled dot-product self-attention written out loop by loop.
fn reference_self_attention(x: &Array, valid: &[bool], w: [&Array; 4], heads: usize) -> Array {
    let (n, d) = (x.rows(), x.cols());
    let dh = d / heads;
    let proj =
        |m: &Array| Array::from_fn(n, d, |i, j| (0..d).map(|p| x.get(i, p) * m.get(p, j)).sum());
    let (q, k, v) = (proj(w[0]), proj(w[1]), proj(w[2]));
    let mut cat = Array::zeros(n, d);
    for h in 0..heads {
        for i in (0..n).filter(|&i| valid[i]) {
            let scores: Vec<Option<f64>> = (0..n)
                .map(|j| {
                    valid[j].then(|| {
                        (0..dh)
                            .map(|p| q.get(i, h * dh + p) * k.get(j, h * dh + p))
                            .sum::<f64>()
                            / math::sqrt(dh as f64)
                    })
                })
                .collect();
            let m = scores
                .iter()
                .flatten()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let e: Vec<f64> = scores
                .iter()
                .map(|s| s.map_or(0.0, |s| math::exp(s - m)))
                .collect();
            let z: f64 = e.iter().sum();
            for p in 0..dh {
                cat.set(
                    i,
                    h * dh + p,
                    (0..n).map(|j| e[j] / z * v.get(j, h * dh + p)).sum(),
                );
            }
        }
    }
    Array::from_fn(n, d, |i, j| {
        (0..d).map(|p| cat.get(i, p) * w[3].get(p, j)).sum()
    })
}

fn reduction_check(report: &mut Report, rng: &mut ChaCha8Rng) {
    let r = (|| -> Result<f64, crate::attention::AttnError> {
        let (types, d, heads, max_nodes) = (3, 8, 2, 7);
        let names: Vec<alloc::string::String> =
            (0..types).map(|i| alloc::format!("t{i}")).collect();
        let mut params = ParamSet::new();
        let layout = BlockLayout::init("b", &names, d, 2 * d, &mut params, rng);
        let spec = AttentionSpec::new(types, 0, Vec::new(), heads, false);
        let counts = [5, 7, 2];
        let valid: Vec<Vec<bool>> = counts
            .iter()
            .map(|&c| (0..max_nodes).map(|r| r < c).collect())
            .collect();
        let xs: Vec<Array> = counts
            .iter()
            .map(|&c| {
                Array::from_fn(max_nodes, d, |r, _| {
                    if r < c {
                        rng.random_range(-1.0..1.0)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let x: Vec<Var> = xs.iter().map(|a| tape.constant(a.clone())).collect();
        let mut qkv: Vec<Vec<Qkv>> = Vec::new();
        for t in 0..types {
            let maps = [
                vars[layout.query[t]],
                vars[layout.key[t]],
                vars[layout.value[t]],
            ];
            qkv.push(
                (0..heads)
                    .map(|h| project_qkv(&mut tape, x[t], maps, h, heads))
                    .collect::<Result<_, _>>()?,
            );
        }
        let got = multi_head_attention(&mut tape, &qkv, 0, &valid[0], vars[layout.output], &spec)?;
        let w = [
            params.get(layout.query[0]),
            params.get(layout.key[0]),
            params.get(layout.value[0]),
            params.get(layout.output),
        ];
        Ok(tape
            .value(got)
            .max_abs_diff(&reference_self_attention(&xs[0], &valid[0], w, heads)))
    })();
    report.record(
        "attention",
        "no attended types equals self-attention",
        INVARIANCE_TOL,
        r,
    );
}

/// Seed embeddings of the whole model before and after padding every type
/// to 1.5 times the batch width.
fn padding_check(report: &mut Report, options: &VerifyOptions) {
    let r = (|| -> Result<f64, TrainError> {
        let mut spec = HsbmSpec::new(30, 2, 15, 3);
        spec.p_in = 0.3;
        spec.feature_dim = 4;
        spec.seed = options.seed;
        let graph = generate_hsbm(&spec)?;
        let config = TrainConfig {
            d_model: 8,
            heads: 2,
            blocks: 2,
            sampling: SamplingConfig {
                batch_size: 8,
                budget: 5,
                hops: 2,
            },
            seed: options.seed,
            ..TrainConfig::default()
        };
        let seeds: Vec<usize> = (0..8).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let batch = SubgraphSampler::new(&graph).sample(&seeds, &[5, 5, 5], 2, &mut rng)?;
        let state = train::lazy_init(&graph, &config, &batch)?;
        let attn = state.attention_spec()?;
        let embed = |b: &crate::graph::Batch| -> Result<Array, TrainError> {
            let mut tape = Tape::new();
            let vars = state.params.bind_frozen(&mut tape);
            let mut none = ChaCha8Rng::seed_from_u64(0);
            let mut drop = Dropout {
                rate: 0.0,
                training: false,
                rng: &mut none,
            };
            let fwd = train::forward(&mut tape, &state, &vars, b, &attn, &mut drop)?;
            Ok(tape.value(fwd.embeddings).clone())
        };
        let wide = batch.with_max_nodes(batch.max_nodes + batch.max_nodes.div_ceil(2));
        Ok(embed(&batch)?.max_abs_diff(&embed(&wide)?))
    })();
    report.record("attention", "padding to 1.5x max_nodes", INVARIANCE_TOL, r);
}

fn equidistant_check(report: &mut Report) {
    let centers = rows(&[&[0.0, 0.0], &[1.0, 0.0]]);
    let q = q_of(&rows(&[&[0.5, 3.0]]), &centers, 0.7).map(|q| (q.get(0, 0) - 0.5).abs());
    report.record("cluster", "equidistant point splits evenly", EXAMPLE_TOL, q);
}

pub(super) fn run(report: &mut Report, options: &VerifyOptions) {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(1));
    cluster_examples(report, options);
    equidistant_check(report);
    attention_example(report);
    reduction_check(report, &mut rng);
    padding_check(report, options);
    metric_oracles(report, &mut rng);
}
