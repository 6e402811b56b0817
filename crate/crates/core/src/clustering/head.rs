use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::graph::AffinityGraph;
use crate::nn::{glorot, Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Learnable weights of the clustering head.
#[derive(Clone, Debug)]
pub struct ClusterHead {
    /// Mixing weights applied before propagation over the graph, `D×D`.
    pub w_mix: ParamId,
    /// Skip-connection weights, `D×D`.
    pub w_skip: ParamId,
    /// First projection, `D×D_h`.
    pub w_proj1: ParamId,
    /// Projection into cluster logits, `D_h×K`.
    pub w_proj2: ParamId,
    pub tau: f64,
    pub clusters: usize,
    pub dim: usize,
}

impl ClusterHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        hidden: usize,
        clusters: usize,
        tau: f64,
    ) -> Result<Self> {
        if clusters < 2 {
            return Err(Error::Config(format!("need at least 2 clusters, got {clusters}")));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self {
            w_mix: store.add(format!("{name}.w_mix"), glorot(rng, dim, dim)),
            w_skip: store.add(format!("{name}.w_skip"), glorot(rng, dim, dim)),
            w_proj1: store.add(format!("{name}.w_proj1"), glorot(rng, dim, hidden)),
            w_proj2: store.add(format!("{name}.w_proj2"), glorot(rng, hidden, clusters)),
            tau,
            clusters,
            dim,
        })
    }
}

/// One round of graph propagation: `relu(W·(F·W_mix)) + F·W_skip`.
pub fn message_pass<'t>(
    p: &Bound<'t>,
    graph: &AffinityGraph<'t>,
    features: &Var<'t>,
    head: &ClusterHead,
) -> Result<Var<'t>> {
    let n = features.rows();
    if graph.weights.shape() != [n, n] || features.cols() != head.dim {
        return Err(Error::Config(format!(
            "message passing over graph {:?} with features {:?} (head width {})",
            graph.weights.shape(),
            features.shape(),
            head.dim
        )));
    }
    let mixed = graph
        .weights
        .matmul(&features.matmul(&p.var(head.w_mix))?)?
        .relu();
    mixed.add(&features.matmul(&p.var(head.w_skip))?)
}

/// Pre-softmax cluster logits `relu(H·W_1)·W_2`.
pub fn cluster_logits<'t>(p: &Bound<'t>, hidden: &Var<'t>, head: &ClusterHead) -> Result<Var<'t>> {
    hidden
        .matmul(&p.var(head.w_proj1))?
        .relu()
        .matmul(&p.var(head.w_proj2))
}

/// Row-stochastic `N×K` score matrix `softmax(logits / τ)`.
pub fn cluster_scores<'t>(p: &Bound<'t>, hidden: &Var<'t>, head: &ClusterHead) -> Result<Var<'t>> {
    cluster_logits(p, hidden, head)?.softmax(head.tau)
}

/// Score-weighted mean of the centers for every cluster, `K×3`.
pub fn pool_centers<'t>(scores: &Var<'t>, centers: &[[f64; 3]]) -> Result<Var<'t>> {
    if scores.rows() != centers.len() {
        return Err(Error::Shape {
            op: "pool_centers",
            left: scores.shape(),
            right: vec![centers.len(), 3],
        });
    }
    let c = scores.tape().constant(Tensor::from_points(centers));
    let weighted = scores.t()?.matmul(&c)?;
    let mass = scores.sum_cols().t()?;
    weighted.div(&mass)
}
