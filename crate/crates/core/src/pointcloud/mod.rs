//! Point-cloud geometry and patch tokenization.

mod cloud;
mod encoder;
mod patches;
mod sampling;

pub use cloud::{
    format_xyz, parse_xyz, read_xyz, sq_dist, write_labeled_xyz, write_xyz, PointCloud, XyzRecord,
};
pub use encoder::{embed_patches, MiniPointNet, STAGE1, STAGE2_HIDDEN};
pub use patches::{build_patches, PatchSet};
pub use sampling::{farthest_point_sample, farthest_point_sample_from, knn};
