use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::finite_diff_check;
use crate::metrics;

fn rand_array(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array {
    Array::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn q_of(x: &Array, c: &Array, t: f64) -> Array {
    let mut tape = Tape::new();
    let (xv, cv, tv) = (
        tape.constant(x.clone()),
        tape.constant(c.clone()),
        tape.constant(Array::scalar(t)),
    );
    let q = soft_assign(&mut tape, xv, cv, tv).unwrap();
    tape.value(q).clone()
}

#[test]
fn kmeans_matches_exhaustive_assignment_oracle() {
    let pts = [0.0, 0.1, 10.0, 10.1];
    let x = Array::from_fn(4, 1, |r, _| pts[r]);
    // Best of all 2^4 labelings by within-cluster squared error.
    let mut best = (f64::INFINITY, 0u32);
    for mask in 0..16u32 {
        let mut sse = 0.0;
        for side in [0, 1] {
            let members: Vec<f64> = (0..4)
                .filter(|&i| (mask >> i) & 1 == side)
                .map(|i| pts[i])
                .collect();
            if members.is_empty() {
                continue;
            }
            let m = members.iter().sum::<f64>() / members.len() as f64;
            sse += members.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        if sse < best.0 {
            best = (sse, mask);
        }
    }
    let km = kmeans(&x, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((km.inertia() - best.0).abs() < 1e-12);
    let mut centers = [km.centers.get(0, 0), km.centers.get(1, 0)];
    centers.sort_by(f64::total_cmp);
    assert!((centers[0] - 0.05).abs() < 1e-12 && (centers[1] - 10.05).abs() < 1e-12);
    assert_eq!(km.labels[0], km.labels[1]);
    assert_eq!(km.labels[2], km.labels[3]);
    assert_ne!(km.labels[0], km.labels[2]);
}

#[test]
fn single_cluster_center_is_column_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_array(9, 3, &mut rng);
    let km = kmeans(&x, 1, &mut rng).unwrap();
    for c in 0..3 {
        let mean = (0..9).map(|r| x.get(r, c)).sum::<f64>() / 9.0;
        assert!((km.centers.get(0, c) - mean).abs() < 1e-12);
    }
}

#[test]
fn lloyd_objective_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let x = rand_array(60, 4, &mut rng);
        let km = kmeans(&x, 5, &mut rng).unwrap();
        for w in km.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", km.objective);
        }
    }
}

#[test]
fn kmeans_needs_enough_points() {
    let x = Array::zeros(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(
        kmeans(&x, 3, &mut rng),
        Err(ClusterError::TooFewPoints { n: 2, k: 3 })
    );
    assert_eq!(kmeans(&x, 0, &mut rng), Err(ClusterError::NoClusters));
}

#[test]
fn duplicate_points_still_fill_every_cluster() {
    let x = Array::from_rows(&[[0.0], [0.0], [0.0], [1.0]]).unwrap();
    let km = kmeans(&x, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(km.centers.rows(), 3);
    assert!(km.centers.is_finite());
}

#[test]
fn soft_assignment_examples() {
    let c = Array::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
    let q = q_of(&Array::from_rows(&[[0.0, 0.0]]).unwrap(), &c, 1.0);
    // Unnormalized 1 and 1/2.
    assert!((q.get(0, 0) - 2.0 / 3.0).abs() < 1e-15 && (q.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    let q = q_of(&Array::from_rows(&[[0.5, 3.0]]).unwrap(), &c, 0.7);
    assert!((q.get(0, 0) - 0.5).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = q_of(
        &rand_array(5, 2, &mut rng),
        &rand_array(4, 2, &mut rng),
        1e9,
    );
    assert!(q.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
}

#[test]
fn soft_assignment_rows_are_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in [0.1, 1.0, 10.0] {
        let q = q_of(&rand_array(20, 3, &mut rng), &rand_array(4, 3, &mut rng), t);
        for r in 0..20 {
            assert!((q.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(q.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn target_distribution_examples() {
    let uniform = Array::filled(3, 4, 0.25);
    assert!(target_distribution(&uniform).max_abs_diff(&uniform) < 1e-15);
    let single = Array::from_rows(&[[0.8, 0.2]]).unwrap();
    assert!(target_distribution(&single).max_abs_diff(&single) < 1e-15);
    let q = Array::from_rows(&[[0.8, 0.2], [0.6, 0.4]]).unwrap();
    let p = target_distribution(&q);
    // f = [1.4, 0.6]; row 0 weights 0.64 / 1.4 and 0.04 / 0.6.
    let (w0, w1) = (0.64 / 1.4, 0.04 / 0.6);
    assert!((p.get(0, 0) - w0 / (w0 + w1)).abs() < 1e-15);
    assert!((p.get(0, 0) - 0.8727).abs() < 1e-4 && (p.get(0, 1) - 0.1273).abs() < 1e-4);
    let empty = Array::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
    assert_eq!(target_distribution(&empty).data(), &[1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn target_distribution_keeps_argmax_under_equal_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        // Cyclic shifts of one random row give every column the same total.
        let k = rng.random_range(2..6);
        let mut base: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let z: f64 = base.iter().sum();
        base.iter_mut().for_each(|v| *v /= z);
        let q = Array::from_fn(k, k, |r, c| base[(c + k - r) % k]);
        let p = target_distribution(&q);
        assert_eq!(hard_labels(&p), hard_labels(&q));
        for r in 0..k {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

fn kl(p: &Array, q: &Array, eps: f64, sign: KlSign) -> f64 {
    let mut tape = Tape::new();
    let qv = tape.constant(q.clone());
    let l = kl_clustering_loss(&mut tape, p, qv, eps, sign).unwrap();
    tape.scalar(l).unwrap()
}

fn random_stochastic(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Array {
    let mut a = Array::from_fn(n, k, |_, _| rng.random_range(0.0..1.0));
    for r in 0..n {
        let z: f64 = a.row(r).iter().sum();
        a.row_mut(r).iter_mut().for_each(|v| *v /= z);
    }
    a
}

#[test]
fn kl_examples_and_sign_modes() {
    let p = Array::from_rows(&[[1.0, 0.0]]).unwrap();
    let q = Array::from_rows(&[[0.5, 0.5]]).unwrap();
    assert!((kl(&p, &q, 1e-15, KlSign::Corrected) - core::f64::consts::LN_2).abs() < 1e-12);
    assert!((kl(&p, &q, 1e-15, KlSign::Verbatim) + core::f64::consts::LN_2).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pq = random_stochastic(4, 3, &mut rng);
    assert!(kl(&pq, &pq, 1e-15, KlSign::Corrected).abs() < 1e-12);
}

#[test]
fn kl_is_bounded_below_and_shrinks_toward_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let eps = 1e-8;
    for _ in 0..100 {
        let k = rng.random_range(2..6);
        let p = random_stochastic(5, k, &mut rng);
        let q = random_stochastic(5, k, &mut rng);
        assert!(kl(&p, &q, eps, KlSign::Corrected) >= -(k as f64) * eps);
        let mut last = f64::INFINITY;
        for step in 0..=10 {
            let w = step as f64 / 10.0;
            let mix = Array::from_fn(5, k, |r, c| (1.0 - w) * q.get(r, c) + w * p.get(r, c));
            let v = kl(&p, &mix, eps, KlSign::Corrected);
            assert!(v <= last + 1e-12);
            last = v;
        }
        assert!(last.abs() < 1e-6);
    }
}

fn sil(x: &Array, labels: &[usize]) -> (Vec<f64>, f64) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let s = silhouette_values(&mut tape, xv, labels).unwrap();
    let l = silhouette_loss(&mut tape, s).unwrap();
    (tape.value(s).data().to_vec(), tape.scalar(l).unwrap())
}

#[test]
fn silhouette_examples() {
    let x = Array::from_rows(&[[0.0], [1.0], [5.0]]).unwrap();
    let (s, loss) = sil(&x, &[0, 0, 1]);
    assert!((s[0] - 0.8).abs() < 1e-15 && (s[1] - 0.75).abs() < 1e-15 && s[2] == 0.0);
    assert!((loss + 0.516_666_666_666_666_7).abs() < 1e-12);
    let sep = Array::from_rows(&[[0.0, 0.0], [0.0, 0.0], [3.0, 4.0], [3.0, 4.0]]).unwrap();
    let (s, loss) = sil(&sep, &[0, 0, 1, 1]);
    assert!(s.iter().all(|&v| v == 1.0));
    assert_eq!(loss, -1.0);
    let (s, _) = sil(&Array::zeros(4, 2), &[0, 1, 1, 0]);
    assert!(s.iter().all(|&v| v == 0.0));
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    assert_eq!(
        silhouette_values(&mut tape, xv, &[4, 4, 4]),
        Err(ClusterError::SingleCluster)
    );
}

#[test]
fn silhouette_agrees_with_metrics_module() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(3..30);
        let x = rand_array(n, 3, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let Ok(score) = metrics::silhouette_score(&x, &labels) else {
            continue;
        };
        let (s, loss) = sil(&x, &labels);
        let reference = metrics::silhouette_samples(&x, &labels).unwrap();
        for (a, b) in s.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(score, -loss);
        assert!((-1.0..=1.0).contains(&loss));
    }
}

#[test]
fn clustering_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let x = rand_array(8, 3, &mut rng);
        let centers = rand_array(3, 3, &mut rng);
        let p = random_stochastic(8, 3, &mut rng);
        let labels = hard_labels(&q_of(&x, &centers, 1.0));
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        if silhouette_values(&mut tape, xv, &labels).is_err() {
            continue;
        }
        let raw = Array::scalar(temperature_raw(1.3));
        let err = finite_diff_check(
            |tape, v| {
                let c = tape.constant(centers.clone());
                let t = temperature(tape, v[1])?;
                let q = soft_assign(tape, v[0], c, t)
                    .map_err(|_| AdError::NonFinite { op: "soft_assign" })?;
                let k = kl_clustering_loss(tape, &p, q, 1e-8, KlSign::Corrected)
                    .map_err(|_| AdError::NonFinite { op: "kl" })?;
                let s = silhouette_values(tape, v[0], &labels)
                    .map_err(|_| AdError::NonFinite { op: "sil" })?;
                let l = silhouette_loss(tape, s).map_err(|_| AdError::NonFinite { op: "sil" })?;
                tape.add(k, l)
            },
            &[x, raw],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn temperature_round_trips_through_softplus() {
    let mut tape = Tape::new();
    let raw = tape.constant(Array::scalar(temperature_raw(1.0)));
    let t = temperature(&mut tape, raw).unwrap();
    assert!((tape.scalar(t).unwrap() - 1.0).abs() < 1e-15);
}
