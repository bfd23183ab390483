//! Partition agreement metrics and the evaluation silhouette score.
//!
//! Partitions are slices of arbitrary non-negative ids. NMI normalizes
//! mutual information by the arithmetic mean of the two entropies.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{sq_dist, Array};
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("partitions have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("metric needs at least {needed} items, found {found}")]
    TooFew { needed: usize, found: usize },
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
}

/// Contingency counts between two partitions, with both id spaces
/// compressed to `0..r` and `0..c` in first-appearance order.
#[derive(Clone, Debug, PartialEq)]
pub struct Contingency {
    pub table: Vec<Vec<usize>>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub n: usize,
}

fn compress(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let mut order = Vec::with_capacity(ids.len());
    for &id in ids {
        let next = map.len();
        order.push(*map.entry(id).or_insert(next));
    }
    (order, map.len())
}

pub fn contingency(pred: &[usize], truth: &[usize]) -> Result<Contingency, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let (p, r) = compress(pred);
    let (t, c) = compress(truth);
    let mut table = vec![vec![0usize; c]; r];
    let mut rows = vec![0usize; r];
    let mut cols = vec![0usize; c];
    for (&i, &j) in p.iter().zip(&t) {
        table[i][j] += 1;
        rows[i] += 1;
        cols[j] += 1;
    }
    Ok(Contingency {
        table,
        rows,
        cols,
        n: pred.len(),
    })
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * math::ln(p)
        })
        .sum()
}

/// Normalized mutual information in `[0, 1]`.
///
/// Two single-cluster partitions score 1; exactly one single-cluster
/// partition scores 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    let ct = contingency(pred, truth)?;
    if ct.n == 0 {
        return Err(MetricError::TooFew {
            needed: 1,
            found: 0,
        });
    }
    let n = ct.n as f64;
    let (hp, ht) = (entropy(&ct.rows, n), entropy(&ct.cols, n));
    match (hp == 0.0, ht == 0.0) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut mi = 0.0;
    for (i, row) in ct.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * math::ln(n * nij / (ct.rows[i] as f64 * ct.cols[j] as f64));
            }
        }
    }
    Ok((mi / (0.5 * (hp + ht))).clamp(0.0, 1.0))
}

fn pairs(c: usize) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Adjusted Rand index in `[-1, 1]`. Two partitions that are both all one
/// cluster, or both all singletons, score 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    let ct = contingency(pred, truth)?;
    if ct.n < 2 {
        return Err(MetricError::TooFew {
            needed: 2,
            found: ct.n,
        });
    }
    let index: f64 = ct.table.iter().flatten().map(|&v| pairs(v)).sum();
    let a: f64 = ct.rows.iter().map(|&v| pairs(v)).sum();
    let b: f64 = ct.cols.iter().map(|&v| pairs(v)).sum();
    let expected = a * b / pairs(ct.n);
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Minimum-cost perfect matching on a square cost matrix; `result[row] = col`.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    // Potentials and matching over 1-based indices; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}

/// Fraction of items correctly labeled under the best one-to-one mapping of
/// predicted clusters to true classes.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    let ct = contingency(pred, truth)?;
    if ct.n == 0 {
        return Err(MetricError::TooFew {
            needed: 1,
            found: 0,
        });
    }
    let size = ct.rows.len().max(ct.cols.len());
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    let c = ct.table.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0);
                    -(c as f64)
                })
                .collect()
        })
        .collect();
    let matched: usize = hungarian(&cost)
        .iter()
        .enumerate()
        .map(|(i, &j)| ct.table.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0))
        .sum();
    Ok(matched as f64 / ct.n as f64)
}

/// Plain label accuracy.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::TooFew {
            needed: 1,
            found: 0,
        });
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Per-point silhouette values with Euclidean distances. Points in
/// singleton clusters, and points with `a = b = 0`, get 0.
pub fn silhouette_samples(x: &Array, labels: &[usize]) -> Result<Vec<f64>, MetricError> {
    let n = x.rows();
    if labels.len() != n {
        return Err(MetricError::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    let (ids, k) = compress(labels);
    if k < 2 {
        return Err(MetricError::SingleCluster);
    }
    let mut size = vec![0usize; k];
    for &c in &ids {
        size[c] += 1;
    }
    let mut out = Vec::with_capacity(n);
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[ids[j]] += math::sqrt(sq_dist(x.row(i), x.row(j)));
            }
        }
        let own = ids[i];
        if size[own] == 1 {
            out.push(0.0);
            continue;
        }
        let a = sums[own] / (size[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / size[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        out.push(if m == 0.0 { 0.0 } else { (b - a) / m });
    }
    Ok(out)
}

/// Mean silhouette value.
pub fn silhouette_score(x: &Array, labels: &[usize]) -> Result<f64, MetricError> {
    let s = silhouette_samples(x, labels)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[cfg(test)]
mod tests;
