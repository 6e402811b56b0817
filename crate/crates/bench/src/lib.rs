//! Benchmark inputs shared by the criterion targets.

use pointclu_core::harness::{generate_shape, Generator};
use pointclu_core::pointcloud::PointCloud;

/// A noisy unit-radius cylinder surface of `points` points.
pub fn sample_cloud(points: usize, seed: u64) -> PointCloud {
    generate_shape(Generator::Cylinder, points, 0.01, seed)
        .expect("generator")
        .cloud
}
