//! Feasibility and structural constraints on randomized inputs.

use pointclu_core::clustering::{
    cluster_scores, pool_centers, sinkhorn_assign, ClusterHead, SinkhornConfig,
};
use pointclu_core::graph::build_graph;
use pointclu_core::nn::{uniform, Bound, ParamStore};
use pointclu_core::pointcloud::knn;
use pointclu_core::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-spread..spread)))
        .collect()
}

#[test]
fn converged_plans_meet_both_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut converged = 0;
    for trial in 0..60 {
        let n = rng.random_range(2..=64);
        let k = rng.random_range(2..=n.min(12));
        let eps = [5e-4, 1e-3, 1e-2, 0.1][trial % 4];
        let cfg = SinkhornConfig {
            epsilon: eps,
            max_iters: 3000,
            ..SinkhornConfig::default()
        };
        let spread = [1.0, 0.05][trial % 2];
        let r = sinkhorn_assign(&points(&mut rng, n, 1.0), &points(&mut rng, k, spread), &cfg).unwrap();
        assert!(r.plan.data().iter().all(|&v| v >= 0.0));
        if !r.converged {
            continue;
        }
        converged += 1;
        for s in r.plan.row_sums() {
            assert!((s - 1.0 / n as f64).abs() < 1e-6, "trial {trial}");
        }
        for s in r.plan.col_sums() {
            assert!((s - 1.0 / k as f64).abs() < 1e-6, "trial {trial}");
        }
    }
    assert!(converged >= 30, "only {converged} of 60 solves converged");
}

#[test]
fn score_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..50 {
        let n = rng.random_range(1..=32);
        let d = rng.random_range(1..=16);
        let k = rng.random_range(2..=8);
        let tau = rng.random_range(0.05..5.0);
        let mut store = ParamStore::new();
        let head = ClusterHead::new(&mut store, &mut rng, "h", d, d, k, tau).unwrap();
        let x = uniform(&mut rng, &[n, d], 3.0);
        let tape = Tape::new();
        let p = Bound::new(&tape, &store);
        let s = cluster_scores(&p, &tape.constant(x), &head).unwrap();
        let s = s.value();
        for (i, sum) in s.row_sums().into_iter().enumerate() {
            assert!((sum - 1.0).abs() < 1e-10, "trial {trial}, row {i}");
        }
        assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn pooled_centers_stay_in_the_bounding_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let centers = points(&mut rng, 8, 1.0);
        let tape = Tape::new();
        let s = tape.constant(uniform(&mut rng, &[8, 3], 4.0)).softmax(1.0).unwrap();
        let pooled = pool_centers(&s, &centers).unwrap().value().to_points().unwrap();
        for q in pooled {
            for d in 0..3 {
                let lo = centers.iter().map(|c| c[d]).fold(f64::INFINITY, f64::min);
                let hi = centers.iter().map(|c| c[d]).fold(f64::NEG_INFINITY, f64::max);
                assert!(q[d] >= lo - 1e-12 && q[d] <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn affinity_graph_invariants_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..100 {
        let n = rng.random_range(2..=24);
        let k = rng.random_range(1..n);
        let d = rng.random_range(1..=8);
        let centers = points(&mut rng, n, 1.0);
        let tape = Tape::new();
        let f = tape.constant(uniform(&mut rng, &[n, d], 1.0));
        let w = build_graph(&centers, &f, k).unwrap().weights.value();
        let neighbors = knn(&centers, &centers, k + 1).unwrap();
        let linked = |i: usize, j: usize| neighbors[i].iter().filter(|&&x| x != i).take(k).any(|&x| x == j);
        for i in 0..n {
            assert_eq!(w.at(i, i), 0.0, "trial {trial}");
            for j in 0..n {
                assert_eq!(w.at(i, j), w.at(j, i), "trial {trial}");
                assert!(w.at(i, j) >= 0.0);
                if i != j && !linked(i, j) && !linked(j, i) {
                    assert_eq!(w.at(i, j), 0.0, "trial {trial}: ({i}, {j}) outside the kNN union");
                }
            }
        }
    }
}
