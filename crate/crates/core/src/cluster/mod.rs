//! Self-optimizing clustering head.
//!
//! Hard k-means fixes the centers; a Student-t style kernel with a trainable
//! temperature turns distances into soft assignments `Q`; the sharpened
//! target distribution `P` and a KL term pull `Q` toward confident
//! assignments; a silhouette term rewards cohesive, separated clusters.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sq_dist, AdError, Array, Tape, Var};
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("{n} points cannot form {k} clusters")]
    TooFewPoints { n: usize, k: usize },
    #[error("cluster count must be positive")]
    NoClusters,
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("{what}: expected {expected}, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Lloyd stops once centers move less than this, relative to their norm.
pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centers: Array,
    pub labels: Vec<usize>,
    /// Sum of squared distances after every assignment step.
    pub objective: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        self.objective.last().copied().unwrap_or(0.0)
    }
}

/// Nearest center of every row (first on ties) and the total squared
/// distance.
pub fn assign(x: &Array, centers: &Array) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let labels = (0..x.rows())
        .map(|i| {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for c in 0..centers.rows() {
                let d = sq_dist(x.row(i), centers.row(c));
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            total += best_d;
            best
        })
        .collect();
    (labels, total)
}

fn plus_plus(x: &Array, k: usize, rng: &mut dyn RngCore) -> Array {
    let n = x.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(x.row(i), x.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    x.select_rows(&chosen)
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Stops when the Frobenius norm of the center update falls below
/// [`KMEANS_TOL`] times the center norm, or after [`KMEANS_MAX_ITER`]
/// iterations. A cluster left empty is moved onto the point farthest from
/// its current center.
pub fn kmeans(x: &Array, k: usize, rng: &mut dyn RngCore) -> Result<KMeans, ClusterError> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 {
        return Err(ClusterError::NoClusters);
    }
    if n < k {
        return Err(ClusterError::TooFewPoints { n, k });
    }
    let mut centers = plus_plus(x, k, rng);
    let mut objective = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let (labels, obj) = assign(x, &centers);
        objective.push(obj);
        let mut sums = Array::zeros(k, d);
        let mut sizes = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            sizes[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut next = centers.clone();
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if sizes[c] > 0 {
                let inv = 1.0 / sizes[c] as f64;
                for (o, s) in next.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *o = s * inv;
                }
            }
        }
        for c in 0..k {
            if sizes[c] == 0 {
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .map(|i| (i, sq_dist(x.row(i), next.row(labels[i]))))
                    .fold(
                        (0, -1.0),
                        |acc, (i, dd)| if dd > acc.1 { (i, dd) } else { acc },
                    );
                taken.push(far.0);
                next.row_mut(c).copy_from_slice(x.row(far.0));
            }
        }
        let moved = math::sqrt(
            next.data()
                .iter()
                .zip(centers.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        );
        let norm = math::sqrt(centers.data().iter().map(|v| v * v).sum());
        centers = next;
        if moved <= KMEANS_TOL * norm.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let (l, obj) = assign(x, &centers);
    if objective.last() != Some(&obj) {
        objective.push(obj);
    }
    Ok(KMeans {
        centers,
        labels: l,
        objective,
    })
}

/// Best of `restarts` independent runs by final objective.
pub fn kmeans_restarts(
    x: &Array,
    k: usize,
    restarts: usize,
    rng: &mut dyn RngCore,
) -> Result<KMeans, ClusterError> {
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans(x, k, rng)?;
        if best.as_ref().is_none_or(|b| run.inertia() < b.inertia()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Centers and stability constant of the soft assignment. The temperature
/// lives with the trainable parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftClusterState {
    pub centers: Array,
    pub eps: f64,
}

impl SoftClusterState {
    pub fn k(&self) -> usize {
        self.centers.rows()
    }
}

/// Temperature from its unconstrained parameter: `softplus(raw)`.
pub fn temperature(tape: &mut Tape, raw: Var) -> Result<Var, AdError> {
    tape.softplus(raw)
}

/// Unconstrained parameter giving temperature `t`.
pub fn temperature_raw(t: f64) -> f64 {
    math::softplus_inv(t)
}

/// `q_ij ∝ 1 / (1 + |x_i - c_j|² / t)`, rows normalized to one.
pub fn soft_assign(tape: &mut Tape, x: Var, centers: Var, t: Var) -> Result<Var, ClusterError> {
    let d = tape.sq_dist(x, centers)?;
    let inv_t = tape.recip(t)?;
    let scaled = tape.mul_scalar(d, inv_t)?;
    let denom = tape.add_const(scaled, 1.0)?;
    let q = tape.recip(denom)?;
    let z = tape.row_sum(q)?;
    Ok(tape.div_col(q, z)?)
}

/// Sharpened targets `P_ij ∝ Q_ij² / f_j` with `f_j = Σ_i Q_ij`. Clusters
/// with `f_j = 0` contribute nothing.
pub fn target_distribution(q: &Array) -> Array {
    let (n, k) = (q.rows(), q.cols());
    let mut f = vec![0.0; k];
    for i in 0..n {
        for (fj, v) in f.iter_mut().zip(q.row(i)) {
            *fj += v;
        }
    }
    let mut p = Array::zeros(n, k);
    for i in 0..n {
        let row = p.row_mut(i);
        for j in 0..k {
            let qij = q.get(i, j);
            row[j] = if f[j] > 0.0 { qij * qij / f[j] } else { 0.0 };
        }
        let z: f64 = row.iter().sum();
        if z > 0.0 {
            row.iter_mut().for_each(|v| *v /= z);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / k as f64);
        }
    }
    p
}

/// Sign convention of the clustering loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlSign {
    /// `(1/N) Σ P log(P / (Q + ε))`, the divergence itself.
    #[default]
    Corrected,
    /// `(1/N) Σ P log((Q + ε) / P)`, its negative.
    Verbatim,
}

/// KL divergence of `q` from the constant targets `p`, averaged over rows.
/// Entries with `P_ij = 0` contribute nothing.
pub fn kl_clustering_loss(
    tape: &mut Tape,
    p: &Array,
    q: Var,
    eps: f64,
    sign: KlSign,
) -> Result<Var, ClusterError> {
    let qv = tape.value(q);
    if qv.shape() != p.shape() {
        return Err(AdError::ShapeMismatch {
            op: "kl_clustering_loss",
            left: p.shape(),
            right: qv.shape(),
        }
        .into());
    }
    let n = p.rows() as f64;
    let entropy_part: f64 = p
        .data()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * math::ln(v))
        .sum();
    let shifted = tape.add_const(q, eps)?;
    let logs = tape.ln(shifted)?;
    let weighted = tape.mul_const(logs, p.clone())?;
    let cross = tape.sum(weighted)?;
    let loss = tape.scale(cross, -1.0 / n)?;
    let loss = tape.add_const(loss, entropy_part / n)?;
    Ok(match sign {
        KlSign::Corrected => loss,
        KlSign::Verbatim => tape.neg(loss)?,
    })
}

/// Per-point silhouette values as an `n x 1` column; labels are constants.
pub fn silhouette_values(tape: &mut Tape, x: Var, labels: &[usize]) -> Result<Var, ClusterError> {
    tape.silhouette(x, labels).map_err(|e| match e {
        AdError::InvalidArgument { reason, .. } if reason.starts_with("at least two") => {
            ClusterError::SingleCluster
        }
        other => other.into(),
    })
}

/// Negative mean silhouette value.
pub fn silhouette_loss(tape: &mut Tape, s: Var) -> Result<Var, ClusterError> {
    let m = tape.mean(s)?;
    Ok(tape.neg(m)?)
}

/// Index of the largest entry of every row, first on ties.
pub fn hard_labels(q: &Array) -> Vec<usize> {
    (0..q.rows())
        .map(|i| {
            let row = q.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests;
