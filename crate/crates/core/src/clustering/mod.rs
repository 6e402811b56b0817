//! Differentiable clustering over the affinity graph, balanced transport
//! targets, and the two clustering objectives.

mod head;
mod losses;
mod sinkhorn;

pub use head::{cluster_logits, cluster_scores, message_pass, pool_centers, ClusterHead};
pub use losses::{assignment_loss, center_loss, chamfer};
pub use sinkhorn::{sinkhorn_assign, SinkhornConfig, SinkhornResult};
