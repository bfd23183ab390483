use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Entropy and mutual information straight from item-level frequencies.
fn brute_nmi(p: &[usize], t: &[usize]) -> f64 {
    let n = p.len() as f64;
    let freq = |f: &dyn Fn(usize) -> bool| (0..p.len()).filter(|&i| f(i)).count() as f64 / n;
    let ids = |v: &[usize]| {
        let mut u = v.to_vec();
        u.sort_unstable();
        u.dedup();
        u
    };
    let (pi, ti) = (ids(p), ids(t));
    let h = |labels: &[usize], v: &[usize]| -> f64 {
        labels
            .iter()
            .map(|&l| {
                let q = freq(&|i| v[i] == l);
                -q * q.ln()
            })
            .sum()
    };
    let (hp, ht) = (h(&pi, p), h(&ti, t));
    if hp == 0.0 && ht == 0.0 {
        return 1.0;
    }
    if hp == 0.0 || ht == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for &a in &pi {
        for &b in &ti {
            let joint = freq(&|i| p[i] == a && t[i] == b);
            if joint > 0.0 {
                mi += joint * (joint / (freq(&|i| p[i] == a) * freq(&|i| t[i] == b))).ln();
            }
        }
    }
    mi / ((hp + ht) / 2.0)
}

/// Pair counting over all `n (n - 1) / 2` item pairs.
fn brute_ari(p: &[usize], t: &[usize]) -> f64 {
    let n = p.len();
    let (mut both, mut in_p, mut in_t, mut total) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let sp = p[i] == p[j];
            let st = t[i] == t[j];
            total += 1.0;
            if sp {
                in_p += 1.0;
            }
            if st {
                in_t += 1.0;
            }
            if sp && st {
                both += 1.0;
            }
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

/// Every labeling of `n` items with ids below `k`.
fn all_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
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

#[test]
fn nmi_and_ari_match_brute_force_exhaustively() {
    for n in 2..=6 {
        let parts = all_labelings(n, 3);
        for p in &parts {
            for t in &parts {
                let (a, b) = (nmi(p, t).unwrap(), brute_nmi(p, t));
                assert!((a - b).abs() < 1e-12, "nmi {p:?} {t:?}: {a} vs {b}");
                let (a, b) = (ari(p, t).unwrap(), brute_ari(p, t));
                assert!((a - b).abs() < 1e-12, "ari {p:?} {t:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn identical_and_relabeled_partitions_score_one() {
    let t = [0, 0, 1, 1, 2, 2, 2];
    let r = [5, 5, 9, 9, 1, 1, 1];
    for p in [&t, &r] {
        assert_eq!(nmi(p, &t).unwrap(), 1.0);
        assert!((ari(p, &t).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(clustering_accuracy(p, &t).unwrap(), 1.0);
    }
}

#[test]
fn single_cluster_conventions() {
    assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
    assert_eq!(nmi(&[0, 1, 1, 0], &[4, 4, 4, 4]).unwrap(), 0.0);
    assert_eq!(nmi(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
    assert_eq!(ari(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
}

#[test]
fn length_mismatch_is_an_error() {
    let e = MetricError::LengthMismatch { left: 2, right: 3 };
    assert_eq!(nmi(&[0, 1], &[0, 1, 1]).unwrap_err(), e);
    assert_eq!(ari(&[0, 1], &[0, 1, 1]).unwrap_err(), e);
    assert_eq!(clustering_accuracy(&[0, 1], &[0, 1, 1]).unwrap_err(), e);
    assert!(matches!(
        ari(&[0], &[0]),
        Err(MetricError::TooFew { needed: 2, .. })
    ));
}

#[test]
fn matched_accuracy_of_known_confusion() {
    // Confusion [[3, 1], [0, 4]]: cluster 0 holds 3 of class 0 and 1 of
    // class 1; cluster 1 holds 4 of class 1.
    let pred = [0, 0, 0, 0, 1, 1, 1, 1];
    let truth = [0, 0, 0, 1, 1, 1, 1, 1];
    // Both bijections: identity matches 3 + 4, swap matches 1 + 0.
    let identity = 7.0 / 8.0;
    let swap = 1.0 / 8.0;
    assert_eq!(
        clustering_accuracy(&pred, &truth).unwrap(),
        f64::max(identity, swap)
    );
    let swapped: Vec<usize> = pred.iter().map(|&p| 1 - p).collect();
    assert_eq!(clustering_accuracy(&swapped, &truth).unwrap(), 7.0 / 8.0);
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
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

#[test]
fn matched_accuracy_equals_permutation_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let k = rng.random_range(1..=5);
        let c = rng.random_range(1..=k);
        let n = rng.random_range(1..30);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let best = permutations(k)
            .iter()
            .map(|perm| {
                pred.iter()
                    .zip(&truth)
                    .filter(|&(&p, &t)| perm[p] == t)
                    .count()
            })
            .max()
            .unwrap();
        let got = clustering_accuracy(&pred, &truth).unwrap();
        assert!(
            (got - best as f64 / n as f64).abs() < 1e-15,
            "{pred:?} {truth:?}"
        );
    }
}

fn relabel(v: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut map: Vec<usize> = (0..10).map(|i| i * 3 + 7).collect();
    map.shuffle(rng);
    v.iter().map(|&x| map[x]).collect()
}

#[test]
fn metrics_are_relabeling_invariant_and_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(4..40);
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let x = Array::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let (pr, tr) = (relabel(&p, &mut rng), relabel(&t, &mut rng));
        assert!((nmi(&p, &t).unwrap() - nmi(&pr, &tr).unwrap()).abs() < 1e-12);
        assert!((ari(&p, &t).unwrap() - ari(&pr, &tr).unwrap()).abs() < 1e-12);
        assert!(
            (clustering_accuracy(&p, &t).unwrap() - clustering_accuracy(&pr, &tr).unwrap()).abs()
                < 1e-12
        );
        if let Ok(s) = silhouette_score(&x, &p) {
            assert!((s - silhouette_score(&x, &pr).unwrap()).abs() < 1e-12);
        }
        assert!((nmi(&p, &t).unwrap() - nmi(&t, &p).unwrap()).abs() < 1e-12);
        assert!((ari(&p, &t).unwrap() - ari(&t, &p).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn silhouette_examples() {
    let sep = Array::from_rows(&[[0.0], [0.0], [5.0], [5.0]]).unwrap();
    assert_eq!(silhouette_score(&sep, &[1, 1, 2, 2]).unwrap(), 1.0);
    let x = Array::from_rows(&[[0.0], [1.0], [5.0]]).unwrap();
    let s = silhouette_samples(&x, &[0, 0, 1]).unwrap();
    // a = 1 for both A points; b = 5 and 4.
    assert!((s[0] - 0.8).abs() < 1e-15 && (s[1] - 0.75).abs() < 1e-15 && s[2] == 0.0);
    assert!((silhouette_score(&x, &[0, 0, 1]).unwrap() - 1.55 / 3.0).abs() < 1e-15);
    let same = Array::zeros(4, 2);
    assert_eq!(silhouette_score(&same, &[0, 1, 0, 1]).unwrap(), 0.0);
    assert_eq!(
        silhouette_score(&x, &[2, 2, 2]),
        Err(MetricError::SingleCluster)
    );
}

#[test]
fn accuracy_counts_matches() {
    assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 1, 2]).unwrap(), 0.75);
}
