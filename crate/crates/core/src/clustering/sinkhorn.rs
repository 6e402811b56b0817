//! Balanced entropic transport between points and cluster centers.
//!
//! Solves `min ⟨C, Γ⟩ − ε·H(Γ)` subject to row sums `1/N` and column sums
//! `1/K`, with `C_ij = ‖p_i − t_j‖²`, by alternating dual updates in the
//! log domain:
//!
//! ```text
//! f_i ← ε·(log(1/N) − LSE_j((g_j − C_ij)/ε))
//! g_j ← ε·(log(1/K) − LSE_i((f_i − C_ij)/ε))
//! Γ_ij = exp((f_i + g_j − C_ij)/ε)
//! ```
//!
//! After each `g` update the column marginals are exact up to rounding; the
//! loop stops once the largest marginal violation drops below the
//! tolerance. With small ε these iterations need thousands of steps from a
//! cold start, so by default ε starts at the largest cost and shrinks
//! geometrically to its target while the duals carry over (ε-scaling).
//! The fixed point is the same; only iterations at the target ε count
//! toward convergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::sq_dist;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub marginal_tol: f64,
    /// Geometric factor of the ε-scaling warm start; `None` iterates at
    /// the target ε from the first step.
    #[serde(default)]
    pub anneal: Option<f64>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 5e-4,
            max_iters: 200,
            marginal_tol: 1e-6,
            anneal: Some(0.9),
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Parameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        if !(self.marginal_tol > 0.0) {
            return Err(Error::Parameter("marginal tolerance must be positive".into()));
        }
        if let Some(f) = self.anneal {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Parameter(format!("anneal factor must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornResult {
    /// Transport plan, `N×K`.
    pub plan: Tensor,
    pub iterations: usize,
    /// Largest absolute deviation of any row or column sum from its target.
    pub marginal_error: f64,
    pub converged: bool,
    /// L1 row-marginal error after each iteration.
    pub l1_history: Vec<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn sinkhorn_assign(
    points: &[[f64; 3]],
    targets: &[[f64; 3]],
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    cfg.validate()?;
    let (n, k) = (points.len(), targets.len());
    if k < 2 || n < k {
        return Err(Error::Parameter(format!(
            "balanced assignment needs N >= K >= 2, got N = {n}, K = {k}"
        )));
    }
    if points.iter().chain(targets).any(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::Domain {
            op: "sinkhorn",
            detail: "non-finite coordinates".into(),
        });
    }
    let cost: Vec<f64> = points
        .iter()
        .flat_map(|p| targets.iter().map(move |t| sq_dist(p, t)))
        .collect();
    let (log_a, log_b) = (-(n as f64).ln(), -(k as f64).ln());
    let (a, b) = (1.0 / n as f64, 1.0 / k as f64);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; k];
    let mut history = Vec::new();
    let mut plan = vec![0.0; n * k];
    let mut error = f64::INFINITY;
    let mut iterations = 0;

    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let mut eps = match cfg.anneal {
        Some(_) => max_cost.max(cfg.epsilon),
        None => cfg.epsilon,
    };

    while iterations < cfg.max_iters {
        iterations += 1;
        for i in 0..n {
            let row = &cost[i * k..(i + 1) * k];
            f[i] = eps * (log_a - log_sum_exp(g.iter().zip(row).map(|(gj, c)| (gj - c) / eps)));
        }
        for j in 0..k {
            let col = (0..n).map(|i| (f[i] - cost[i * k + j]) / eps);
            g[j] = eps * (log_b - log_sum_exp(col));
        }
        for i in 0..n {
            for j in 0..k {
                plan[i * k + j] = ((f[i] + g[j] - cost[i * k + j]) / eps).exp();
            }
        }
        let (row_l1, row_max) = (0..n).fold((0.0, 0.0f64), |(l1, mx), i| {
            let d = (plan[i * k..(i + 1) * k].iter().sum::<f64>() - a).abs();
            (l1 + d, mx.max(d))
        });
        let col_max = (0..k).fold(0.0f64, |mx, j| {
            let s: f64 = (0..n).map(|i| plan[i * k + j]).sum();
            mx.max((s - b).abs())
        });
        history.push(row_l1);
        error = row_max.max(col_max);
        if eps == cfg.epsilon && error < cfg.marginal_tol {
            break;
        }
        if let Some(factor) = cfg.anneal {
            eps = (eps * factor).max(cfg.epsilon);
        }
    }
    Ok(SinkhornResult {
        plan: Tensor::matrix(n, k, plan)?,
        iterations,
        marginal_error: error,
        converged: eps == cfg.epsilon && error < cfg.marginal_tol,
        l1_history: history,
    })
}
