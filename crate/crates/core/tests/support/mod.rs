//! Brute-force oracles shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Random cloud; every third trial snaps to a coarse grid so ties and
/// duplicates actually occur.
pub fn cloud(rng: &mut ChaCha8Rng, h: usize, trial: usize) -> Vec<[f64; 3]> {
    (0..h)
        .map(|_| {
            let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            if trial % 3 == 0 {
                p.map(|v| (v * 2.0).round() / 2.0)
            } else {
                p
            }
        })
        .collect()
}

/// O(H²·n) maximin: recompute every candidate's distance to the whole
/// selected set at each step.
pub fn brute_fps(points: &[[f64; 3]], n: usize, first: usize) -> Vec<usize> {
    let mut chosen = vec![first];
    while chosen.len() < n {
        let mut best = None;
        let mut best_d = -1.0;
        for i in 0..points.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| dist(&points[i], &points[c]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

/// Mean over `from` of the squared distance to the nearest row of `to`,
/// accumulated in row order.
pub fn brute_directed(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let mut total = 0.0;
    for a in from {
        let mut best = f64::INFINITY;
        for b in to {
            let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
            best = best.min(dx * dx + dy * dy + dz * dz);
        }
        total += best;
    }
    total * (1.0 / from.len() as f64)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exact balanced assignment for N = K: the LP's vertices are scaled
/// permutation matrices, so the optimum is the cheapest permutation.
pub fn lp_assignment(points: &[[f64; 3]], targets: &[[f64; 3]]) -> Vec<usize> {
    let cost = |i: usize, j: usize| dist(&points[i], &targets[j]).powi(2);
    permutations(points.len())
        .into_iter()
        .min_by(|a, b| {
            let ca: f64 = a.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
            let cb: f64 = b.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
            ca.partial_cmp(&cb).unwrap()
        })
        .unwrap()
}

/// First `k` reference indices of a full sort by (distance, index).
pub fn sorted_neighbors(q: &[f64; 3], reference: &[[f64; 3]], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = reference.iter().enumerate().map(|(j, r)| (dist(q, r), j)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all[..k].iter().map(|x| x.1).collect()
}
