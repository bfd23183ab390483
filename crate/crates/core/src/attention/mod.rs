//! Node-type-aware multi-head attention and post-norm transformer blocks.
//!
//! Every node type owns its query, key and value maps. For a receiving type
//! `v`, the score matrix of one head is its own `Q_v K_vᵀ` plus `Q_v K_uᵀ`
//! for each attended type `u`. All per-type matrices are padded to the
//! batch's `max_nodes`, so the sum is positional. Columns and rows of padded
//! `v` nodes are masked before the row softmax, and the weights multiply
//! `v`'s own values.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{dropout, AdError, Array, Tape, Var, MASK_SENTINEL};
use crate::gnn::validity_column;
use crate::math;
use crate::params::ParamSet;

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttnError {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("{heads} heads do not divide d_model {d_model}")]
    HeadsDivide { d_model: usize, heads: usize },
    #[error("expected {expected} heads, found {found}")]
    HeadCount { expected: usize, found: usize },
    #[error("score matrix is {found:?}, expected {expected} x {expected}")]
    MaxNodes { expected: usize, found: [usize; 2] },
    #[error("node type {0} may not attend to itself as a cross type")]
    AttendsSelf(usize),
    #[error("attended node type {0} does not exist")]
    UnknownType(usize),
    #[error("expected {expected} node types, found {found}")]
    TypeCount { expected: usize, found: usize },
}

/// Which types each receiving type attends to, and the attention variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub heads: usize,
    /// Divide scores by `sqrt(d_head)`.
    pub scaled: bool,
    /// Weight the sum of `v`'s and all attended types' values instead of
    /// `v`'s values alone.
    pub cross_type_values: bool,
    /// `attended[v]`: cross types whose keys add to `v`'s scores.
    pub attended: Vec<Vec<usize>>,
}

impl AttentionSpec {
    /// The target attends to `target_attends`; every other type attends to
    /// all types but itself. With `cross_scores == false` no type has cross
    /// scores.
    pub fn new(
        num_types: usize,
        target: usize,
        target_attends: Vec<usize>,
        heads: usize,
        cross_scores: bool,
    ) -> Self {
        let attended = (0..num_types)
            .map(|t| {
                if !cross_scores {
                    Vec::new()
                } else if t == target {
                    target_attends.clone()
                } else {
                    (0..num_types).filter(|&u| u != t).collect()
                }
            })
            .collect();
        Self {
            heads,
            scaled: true,
            cross_type_values: false,
            attended,
        }
    }

    pub fn validate(&self, num_types: usize, d_model: usize) -> Result<(), AttnError> {
        if self.heads == 0 || !d_model.is_multiple_of(self.heads) {
            return Err(AttnError::HeadsDivide {
                d_model,
                heads: self.heads,
            });
        }
        if self.attended.len() != num_types {
            return Err(AttnError::TypeCount {
                expected: num_types,
                found: self.attended.len(),
            });
        }
        for (t, set) in self.attended.iter().enumerate() {
            for &u in set {
                if u == t {
                    return Err(AttnError::AttendsSelf(t));
                }
                if u >= num_types {
                    return Err(AttnError::UnknownType(u));
                }
            }
        }
        Ok(())
    }
}

/// Parameter indices of one transformer block. Query, key and value maps
/// are `d_model x d_model` per node type; head `h` uses columns
/// `h * d_head .. (h + 1) * d_head`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub query: Vec<usize>,
    pub key: Vec<usize>,
    pub value: Vec<usize>,
    pub output: usize,
    pub ffn_in: usize,
    pub ffn_in_bias: usize,
    pub ffn_out: usize,
    pub ffn_out_bias: usize,
    pub norm1_gain: usize,
    pub norm1_bias: usize,
    pub norm2_gain: usize,
    pub norm2_bias: usize,
}

impl BlockLayout {
    pub fn init(
        name: &str,
        type_names: &[String],
        d_model: usize,
        d_ff: usize,
        params: &mut ParamSet,
        rng: &mut dyn RngCore,
    ) -> Self {
        let b = |fan_in: usize| 1.0 / math::sqrt(fan_in as f64);
        let per_type = |what: &str, params: &mut ParamSet, rng: &mut dyn RngCore| -> Vec<usize> {
            type_names
                .iter()
                .map(|t| {
                    params.push_uniform(
                        format!("{name}.{what}.{t}"),
                        d_model,
                        d_model,
                        b(d_model),
                        rng,
                    )
                })
                .collect()
        };
        let query = per_type("query", params, rng);
        let key = per_type("key", params, rng);
        let value = per_type("value", params, rng);
        let output =
            params.push_uniform(format!("{name}.output"), d_model, d_model, b(d_model), rng);
        let ffn_in = params.push_uniform(format!("{name}.ffn_in"), d_model, d_ff, b(d_model), rng);
        let ffn_in_bias =
            params.push_uniform(format!("{name}.ffn_in_bias"), 1, d_ff, b(d_model), rng);
        let ffn_out = params.push_uniform(format!("{name}.ffn_out"), d_ff, d_model, b(d_ff), rng);
        let ffn_out_bias =
            params.push_uniform(format!("{name}.ffn_out_bias"), 1, d_model, b(d_ff), rng);
        let mut norm = |what: &str, v: f64| {
            params.push(format!("{name}.{what}"), Array::filled(1, d_model, v))
        };
        Self {
            query,
            key,
            value,
            output,
            ffn_in,
            ffn_in_bias,
            ffn_out,
            ffn_out_bias,
            norm1_gain: norm("norm1_gain", 1.0),
            norm1_bias: norm("norm1_bias", 0.0),
            norm2_gain: norm("norm2_gain", 1.0),
            norm2_bias: norm("norm2_bias", 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Qkv {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

/// Query, key and value of one head: `x` times the head's column slice of
/// each full map. No biases.
pub fn project_qkv(
    tape: &mut Tape,
    x: Var,
    maps: [Var; 3],
    head: usize,
    heads: usize,
) -> Result<Qkv, AttnError> {
    let d_model = tape.value(maps[0]).cols();
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(AttnError::HeadsDivide { d_model, heads });
    }
    if head >= heads {
        return Err(AttnError::HeadCount {
            expected: heads,
            found: head + 1,
        });
    }
    let d_head = d_model / heads;
    let mut out = [x; 3];
    for (o, &w) in out.iter_mut().zip(&maps) {
        let slice = tape.slice_cols(w, head * d_head, d_head)?;
        *o = tape.matmul(x, slice)?;
    }
    Ok(Qkv {
        query: out[0],
        key: out[1],
        value: out[2],
    })
}

/// `Q Kᵀ`, divided by `sqrt(d_head)` when `scaled`.
pub fn type_scores(tape: &mut Tape, query: Var, key: Var, scaled: bool) -> Result<Var, AttnError> {
    let s = tape.matmul_nt(query, key)?;
    if scaled {
        let d_head = tape.value(query).cols() as f64;
        Ok(tape.scale(s, 1.0 / math::sqrt(d_head))?)
    } else {
        Ok(s)
    }
}

/// Positional sum of the receiving type's own scores and its cross-type
/// scores, then the sentinel at every column of an invalid node and across
/// every row of an invalid node.
pub fn combine_and_mask(
    tape: &mut Tape,
    own: Var,
    cross: &[Var],
    valid: &[bool],
) -> Result<Var, AttnError> {
    let m = valid.len();
    let mut s = own;
    for &c in core::iter::once(&own).chain(cross) {
        let shape = tape.value(c).shape();
        if shape != [m, m] {
            return Err(AttnError::MaxNodes {
                expected: m,
                found: shape,
            });
        }
    }
    for &c in cross {
        s = tape.add(s, c)?;
    }
    let mask: Vec<bool> = (0..m * m).map(|i| !valid[i / m] || !valid[i % m]).collect();
    Ok(tape.masked_fill(s, mask, MASK_SENTINEL)?)
}

/// Row softmax of masked scores. Rows with no valid entry become zero rows.
pub fn attention_weights(tape: &mut Tape, scores: Var) -> Result<Var, AttnError> {
    let sv = tape.value(scores);
    let live: Vec<bool> = (0..sv.rows())
        .map(|r| sv.row(r).iter().any(|&x| x > MASK_SENTINEL * 0.5))
        .collect();
    let alpha = tape.row_softmax(scores)?;
    if live.iter().all(|&l| l) {
        return Ok(alpha);
    }
    let keep = tape.constant(validity_column(&live));
    Ok(tape.mul_col(alpha, keep)?)
}

/// `α_h V_h` for every head, concatenated and passed through the output map.
pub fn aggregate_heads(
    tape: &mut Tape,
    alphas: &[Var],
    values: &[Var],
    output: Var,
) -> Result<Var, AttnError> {
    if alphas.len() != values.len() || alphas.is_empty() {
        return Err(AttnError::HeadCount {
            expected: alphas.len(),
            found: values.len(),
        });
    }
    let mut parts = Vec::with_capacity(alphas.len());
    for (&a, &v) in alphas.iter().zip(values) {
        parts.push(tape.matmul(a, v)?);
    }
    let cat = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat_cols(&parts)?
    };
    Ok(tape.matmul(cat, output)?)
}

/// Drops padded rows: one output row per real node, in local order.
pub fn trim(tape: &mut Tape, x: Var, valid: &[bool]) -> Result<Var, AttnError> {
    let idx: Vec<Option<usize>> = (0..valid.len()).filter(|&i| valid[i]).map(Some).collect();
    if idx.is_empty() {
        return Err(AttnError::Autodiff(AdError::InvalidArgument {
            op: "trim",
            reason: "no valid rows",
        }));
    }
    Ok(tape.gather_rows(x, idx)?)
}

/// Multi-head attention output for receiving type `t`, padded rows zero.
pub fn multi_head_attention(
    tape: &mut Tape,
    qkv: &[Vec<Qkv>],
    t: usize,
    valid: &[bool],
    output: Var,
    spec: &AttentionSpec,
) -> Result<Var, AttnError> {
    let mut alphas = Vec::with_capacity(spec.heads);
    let mut values = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let own = type_scores(tape, qkv[t][h].query, qkv[t][h].key, spec.scaled)?;
        let mut cross = Vec::with_capacity(spec.attended[t].len());
        for &u in &spec.attended[t] {
            cross.push(type_scores(
                tape,
                qkv[t][h].query,
                qkv[u][h].key,
                spec.scaled,
            )?);
        }
        let s = combine_and_mask(tape, own, &cross, valid)?;
        alphas.push(attention_weights(tape, s)?);
        let mut v = qkv[t][h].value;
        if spec.cross_type_values {
            for &u in &spec.attended[t] {
                v = tape.add(v, qkv[u][h].value)?;
            }
        }
        values.push(v);
    }
    aggregate_heads(tape, &alphas, &values, output)
}

/// Dropout settings threaded through the blocks.
pub struct Dropout<'a> {
    pub rate: f64,
    pub training: bool,
    pub rng: &'a mut dyn RngCore,
}

impl Dropout<'_> {
    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var, AdError> {
        dropout(tape, x, self.rate, self.rng, self.training)
    }
}

fn affine_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var, mask: Var) -> Result<Var, AdError> {
    let n = tape.layer_norm(x, LN_EPS)?;
    let g = tape.mul_row(n, gain)?;
    let b = tape.add_row(g, bias)?;
    tape.mul_col(b, mask)
}

/// One post-norm block over every node type:
/// `x1 = LN(x + Drop(Attn(x)))`, `x2 = LN(x1 + Drop(FFN(x1)))`.
/// Output projection, feed-forward network and norms are shared by all
/// types; padded rows stay zero.
pub fn transformer_block(
    tape: &mut Tape,
    xs: &[Var],
    valid: &[Vec<bool>],
    layout: &BlockLayout,
    vars: &[Var],
    spec: &AttentionSpec,
    drop: &mut Dropout<'_>,
) -> Result<Vec<Var>, AttnError> {
    let types = xs.len();
    if valid.len() != types || layout.query.len() != types || spec.attended.len() != types {
        return Err(AttnError::TypeCount {
            expected: layout.query.len(),
            found: types,
        });
    }
    let mut qkv = Vec::with_capacity(types);
    for t in 0..types {
        let maps = [
            vars[layout.query[t]],
            vars[layout.key[t]],
            vars[layout.value[t]],
        ];
        let heads = (0..spec.heads)
            .map(|h| project_qkv(tape, xs[t], maps, h, spec.heads))
            .collect::<Result<Vec<_>, _>>()?;
        qkv.push(heads);
    }
    let mut out = Vec::with_capacity(types);
    for t in 0..types {
        let mask = tape.constant(validity_column(&valid[t]));
        let attn = multi_head_attention(tape, &qkv, t, &valid[t], vars[layout.output], spec)?;
        let attn = drop.apply(tape, attn)?;
        let r1 = tape.add(xs[t], attn)?;
        let x1 = affine_norm(
            tape,
            r1,
            vars[layout.norm1_gain],
            vars[layout.norm1_bias],
            mask,
        )?;
        let hidden = tape.matmul(x1, vars[layout.ffn_in])?;
        let hidden = tape.add_row(hidden, vars[layout.ffn_in_bias])?;
        let hidden = tape.relu(hidden)?;
        let ffn = tape.matmul(hidden, vars[layout.ffn_out])?;
        let ffn = tape.add_row(ffn, vars[layout.ffn_out_bias])?;
        let ffn = drop.apply(tape, ffn)?;
        let r2 = tape.add(x1, ffn)?;
        out.push(affine_norm(
            tape,
            r2,
            vars[layout.norm2_gain],
            vars[layout.norm2_bias],
            mask,
        )?);
    }
    Ok(out)
}

/// Indices of `wanted` in `names`; the error is the first unknown name.
pub fn resolve_types(names: &[String], wanted: &[String]) -> Result<Vec<usize>, String> {
    wanted
        .iter()
        .map(|w| names.iter().position(|n| n == w).ok_or_else(|| w.clone()))
        .collect()
}
