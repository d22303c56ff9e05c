use std::collections::BTreeMap;

use gcm::learning::{e_step_pose, normalize_template};
use gcm::metrics::{
    adjusted_rand_index, scene_accuracy, segmentation_accuracy, variation_of_information, Partition,
};
use gcm::model::{transform_template, Pose, Template};
use gcm::ransac::solve_pose_from_pair;
use gcm::sinkhorn::{sinkhorn_knopp, AssignmentMatrix};
use proptest::prelude::*;

mod common;
use common::{oracle_ari, oracle_sa, oracle_scene_acc, oracle_vi};

fn positive_matrix(max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec(0.01f64..10.0, n * n)))
}

/// A sparse pattern with a guaranteed full-support permutation so that a
/// doubly stochastic scaling exists.
fn patterned_matrix() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2usize..=6)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(0.1f64..5.0, n * n),
                prop::collection::vec(any::<bool>(), n * n),
                Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            )
        })
        .prop_map(|(n, vals, keep, perm)| {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                m[i * n + perm[i]] = vals[i * n + perm[i]];
                // a second diagonal keeps the support pattern total
                let j = perm[(i + 1) % n];
                m[i * n + j] = vals[i * n + j];
            }
            for idx in 0..n * n {
                if keep[idx] {
                    m[idx] = vals[idx];
                }
            }
            (n, m)
        })
}

fn pose() -> impl Strategy<Value = Pose> {
    (-3.0f64..3.0, -3.0f64..3.0, 0.2f64..3.0, -std::f64::consts::PI..std::f64::consts::PI)
        .prop_map(|(tx, ty, s, a)| Pose::from_params(tx, ty, s, a))
}

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..=k, n)
}

fn partition_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..=8).prop_flat_map(|n| (labels(n, 3), labels(n, 3)))
}

fn relabel(l: &[usize], perm: &[usize]) -> Vec<usize> {
    l.iter().map(|&x| if x == 0 { 0 } else { perm[x - 1] + 1 }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sinkhorn_output_is_doubly_stochastic((n, data) in positive_matrix(8)) {
        let m = AssignmentMatrix::new(n, n, data).unwrap();
        let out = sinkhorn_knopp(&m, 1e-10, 10_000).unwrap();
        for s in out.matrix.row_sums().into_iter().chain(out.matrix.col_sums()) {
            prop_assert!((s - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn sinkhorn_is_idempotent((n, data) in positive_matrix(6)) {
        let m = AssignmentMatrix::new(n, n, data).unwrap();
        let once = sinkhorn_knopp(&m, 1e-12, 10_000).unwrap().matrix;
        let twice = sinkhorn_knopp(&once, 1e-12, 10_000).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.matrix.as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sinkhorn_preserves_zero_pattern((n, data) in patterned_matrix()) {
        let m = AssignmentMatrix::new(n, n, data.clone()).unwrap();
        let out = sinkhorn_knopp(&m, 1e-9, 100_000).unwrap();
        for (before, after) in data.iter().zip(out.matrix.as_slice()) {
            prop_assert_eq!(*before == 0.0, *after == 0.0);
        }
    }

    #[test]
    fn pair_solve_inverts_transform(y in pose(), n1 in 0usize..3, shift in 1usize..3) {
        let tri = Template::from_points("t", &[[-1.0, -1.0], [1.0, -1.0], [0.0, 1.0]]).unwrap();
        let n2 = (n1 + shift) % 3;
        let x = transform_template(&tri, &y);
        let back = solve_pose_from_pair(&tri, n1, n2, x[n1], x[n2]).unwrap();
        prop_assert!(back.max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn transpose_is_scaled_inverse(y in pose()) {
        // T̂ = [[c, s], [−s, c]]
        let t = [[y.sc, y.ss], [-y.ss, y.sc]];
        let s2 = y.sc * y.sc + y.ss * y.ss;
        let det = t[0][0] * t[1][1] - t[0][1] * t[1][0];
        let inv = [[t[1][1] / det, -t[0][1] / det], [-t[1][0] / det, t[0][0] / det]];
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((t[j][i] - s2 * inv[i][j]).abs() < 1e-12 * s2.max(1.0));
            }
        }
    }

    #[test]
    fn pose_precision_is_scalar(raw in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 3..7),
                                 beta in 0.01f64..1.0, lambda in 1.0f64..1e4, alpha in 0.1f64..10.0) {
        let pts: Vec<[f64; 2]> = raw.iter().map(|&(x, y)| [x, y]).collect();
        prop_assume!(pts.iter().any(|p| (p[0] - pts[0][0]).hypot(p[1] - pts[0][1]) > 1e-3));
        let tmpl = normalize_template(&pts).unwrap();
        let n = tmpl.len();
        let r: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let q = e_step_pose(&tmpl, &tmpl, &r, beta, lambda, alpha);
        let want = alpha + beta * lambda * n as f64;
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { want } else { 0.0 };
                prop_assert!((q.precision[(i, j)] - e).abs() < 1e-12 * want);
            }
        }
    }

    #[test]
    fn metric_axioms((a, b) in partition_pair(), perm in Just(vec![0usize, 1, 2]).prop_shuffle()) {
        let pa = Partition::new(a.clone());
        let pb = Partition::new(b.clone());
        prop_assert!(variation_of_information(&pa, &pa).unwrap().abs() < 1e-12);
        prop_assert!((adjusted_rand_index(&pa, &pa).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((segmentation_accuracy(&pa, &pa).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(scene_accuracy(&pa, &pa).unwrap());

        let vi = variation_of_information(&pa, &pb).unwrap();
        prop_assert!(vi >= -1e-12);
        prop_assert!((vi - variation_of_information(&pb, &pa).unwrap()).abs() < 1e-12);
        prop_assert_eq!(vi.abs() < 1e-12, {
            // VI is zero iff the partitions agree up to relabeling
            let mut m: BTreeMap<usize, usize> = BTreeMap::new();
            let mut inv: BTreeMap<usize, usize> = BTreeMap::new();
            a.iter().zip(&b).all(|(x, y)| *m.entry(*x).or_insert(*y) == *y && *inv.entry(*y).or_insert(*x) == *x)
        });

        let rb = Partition::new(relabel(&b, &perm));
        prop_assert!((variation_of_information(&pa, &rb).unwrap() - vi).abs() < 1e-12);
        prop_assert!((adjusted_rand_index(&pa, &rb).unwrap() - adjusted_rand_index(&pa, &pb).unwrap()).abs() < 1e-12);
        prop_assert!((segmentation_accuracy(&pa, &rb).unwrap() - segmentation_accuracy(&pa, &pb).unwrap()).abs() < 1e-12);
        prop_assert_eq!(scene_accuracy(&pa, &rb).unwrap(), scene_accuracy(&pa, &pb).unwrap());
    }

    #[test]
    fn metrics_match_brute_force((a, b) in partition_pair()) {
        let pa = Partition::new(a.clone());
        let pb = Partition::new(b.clone());
        prop_assert!((variation_of_information(&pa, &pb).unwrap() - oracle_vi(&a, &b)).abs() < 1e-12);
        prop_assert!((adjusted_rand_index(&pa, &pb).unwrap() - oracle_ari(&a, &b)).abs() < 1e-9);
        prop_assert!((segmentation_accuracy(&pa, &pb).unwrap() - oracle_sa(&a, &b)).abs() < 1e-12);
        prop_assert_eq!(scene_accuracy(&pa, &pb).unwrap(), oracle_scene_acc(&a, &b));
    }
}

#[test]
fn vi_of_crossed_halves() {
    let a = Partition::new(vec![1, 1, 2, 2]);
    let b = Partition::new(vec![1, 2, 1, 2]);
    assert!((variation_of_information(&a, &b).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
}
