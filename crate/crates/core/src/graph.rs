//! Geo-semantic affinity graph over patch centers.
//!
//! Each center links to its `k` nearest other centers. A link is weighted
//! by the cosine similarity of the two patches' reconstructed features
//! (shifted into `[0, 2]`) times a distance factor
//! `exp(clamp(mean_i(Dis) - Dis_ij, -30, 30))`, where `mean_i(Dis)` is the
//! mean distance from center `i` to all centers. The result is symmetrized
//! as `(W + Wᵀ)/2` and has a zero diagonal.
//!
//! Only the cosine factor is differentiable. Distances, the neighbor
//! pattern and the distance factor depend on centers alone and enter the
//! tape as constants.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::pointcloud::{knn, sq_dist};
use crate::tensor::Tensor;

/// Bound on the distance-weight exponent.
pub const EXPONENT_CLAMP: f64 = 30.0;

/// Symmetric nonnegative affinity matrix with zero diagonal.
#[derive(Clone, Debug)]
pub struct AffinityGraph<'t> {
    pub weights: Var<'t>,
    pub k_graph: usize,
}

/// Constant part of the affinity: neighbor mask times distance factor.
/// Row `i` is nonzero exactly at the `k` nearest other centers of `i`.
pub fn distance_weights(centers: &[[f64; 3]], k_graph: usize) -> Result<Tensor> {
    let n = centers.len();
    if k_graph == 0 || k_graph >= n {
        return Err(Error::Parameter(format!(
            "graph neighbor count {k_graph} must be in 1..{n}"
        )));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = sq_dist(&centers[i], &centers[j]).sqrt();
        }
    }
    // k+1 nearest including self; self is dropped below. Self always sorts
    // first unless another center coincides with it, so filter by index.
    let neighbors = knn(centers, centers, k_graph + 1)?;
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        for &j in neighbors[i].iter().filter(|&&j| j != i).take(k_graph) {
            let e = (mean - row[j]).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
            w[i * n + j] = e.exp();
        }
    }
    Tensor::matrix(n, n, w)
}

/// Builds the affinity graph from centers and an `N×D` feature matrix.
pub fn build_graph<'t>(
    centers: &[[f64; 3]],
    features: &Var<'t>,
    k_graph: usize,
) -> Result<AffinityGraph<'t>> {
    let n = centers.len();
    if features.rows() != n {
        return Err(Error::Shape {
            op: "build_graph",
            left: vec![n, 3],
            right: features.shape(),
        });
    }
    let fv = features.value();
    if !fv.is_finite() {
        return Err(Error::Domain {
            op: "build_graph",
            detail: "non-finite features".into(),
        });
    }
    let tape = features.tape();
    let mask = tape.constant(distance_weights(centers, k_graph)?);
    let norms = features.square().sum_rows();
    if norms.value().data().contains(&0.0) {
        return Err(Error::Domain {
            op: "build_graph",
            detail: "zero feature row cannot be normalized".into(),
        });
    }
    let unit = features.div(&norms.sqrt()?)?;
    let cosine = unit.matmul(&unit.t()?)?.add_scalar(1.0);
    let directed = cosine.mul(&mask)?;
    let weights = directed.add(&directed.t()?)?.scale(0.5);
    Ok(AffinityGraph { weights, k_graph })
}
