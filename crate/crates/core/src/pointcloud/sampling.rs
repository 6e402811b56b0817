use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cloud::sq_dist;
use crate::error::{Error, Result};

/// Greedy farthest-point sampling.
///
/// The first index is drawn uniformly from a generator seeded with `seed`.
/// Every later pick maximizes the distance to the nearest already-selected
/// point, ties going to the lowest index.
pub fn farthest_point_sample(points: &[[f64; 3]], n: usize, seed: u64) -> Result<Vec<usize>> {
    let h = points.len();
    if n > h {
        return Err(Error::Size(format!("cannot sample {n} of {h} points")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..h);
    farthest_point_sample_from(points, n, first)
}

/// Farthest-point sampling with a fixed first index.
pub fn farthest_point_sample_from(
    points: &[[f64; 3]],
    n: usize,
    first: usize,
) -> Result<Vec<usize>> {
    let h = points.len();
    if n > h {
        return Err(Error::Size(format!("cannot sample {n} of {h} points")));
    }
    if first >= h {
        return Err(Error::Size(format!("start index {first} out of range")));
    }
    let mut selected = Vec::with_capacity(n);
    if n == 0 {
        return Ok(selected);
    }
    let mut nearest = vec![f64::INFINITY; h];
    let mut taken = vec![false; h];
    let mut current = first;
    taken[current] = true;
    selected.push(current);
    while selected.len() < n {
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, &c);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if !taken[i] && nearest[i] > best_d {
                best_d = nearest[i];
                best = i;
            }
        }
        current = best;
        taken[current] = true;
        selected.push(current);
    }
    Ok(selected)
}

/// For every query, the `k` nearest reference indices ordered by distance,
/// ties by lowest index.
pub fn knn(queries: &[[f64; 3]], reference: &[[f64; 3]], k: usize) -> Result<Vec<Vec<usize>>> {
    let h = reference.len();
    if k > h {
        return Err(Error::Size(format!("k = {k} exceeds {h} reference points")));
    }
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(h);
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    Ok(queries
        .iter()
        .map(|q| {
            scratch.clear();
            scratch.extend(reference.iter().enumerate().map(|(i, r)| (sq_dist(q, r), i)));
            if k == 0 {
                return Vec::new();
            }
            if k < h {
                scratch.select_nth_unstable_by(k - 1, cmp);
                scratch.truncate(k);
            }
            scratch.sort_unstable_by(cmp);
            scratch.iter().map(|&(_, i)| i).collect()
        })
        .collect())
}
