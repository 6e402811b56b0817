use super::cloud::PointCloud;
use super::sampling::{farthest_point_sample, knn};
use crate::error::{Error, Result};

/// A cloud split into `n` local neighborhoods around sampled centers.
///
/// `neighborhoods` is flattened patch-major: rows `i*k_patch..(i+1)*k_patch`
/// hold the `k_patch` nearest cloud points of center `i`, expressed relative
/// to that center.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub centers: Vec<[f64; 3]>,
    pub center_indices: Vec<usize>,
    pub neighborhoods: Vec<[f64; 3]>,
    pub k_patch: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[[f64; 3]] {
        &self.neighborhoods[i * self.k_patch..(i + 1) * self.k_patch]
    }
}

/// Samples `n` centers by farthest-point sampling and gathers the `k_patch`
/// nearest points of each, shifted to be center-relative.
pub fn build_patches(cloud: &PointCloud, n: usize, k_patch: usize, seed: u64) -> Result<PatchSet> {
    if n == 0 || k_patch == 0 {
        return Err(Error::Size("patch count and patch size must be positive".into()));
    }
    let pts = cloud.points();
    let center_indices = farthest_point_sample(pts, n, seed)?;
    let centers: Vec<[f64; 3]> = center_indices.iter().map(|&i| pts[i]).collect();
    let groups = knn(&centers, pts, k_patch)?;
    let mut neighborhoods = Vec::with_capacity(n * k_patch);
    for (c, group) in centers.iter().zip(&groups) {
        neighborhoods.extend(
            group
                .iter()
                .map(|&j| [pts[j][0] - c[0], pts[j][1] - c[1], pts[j][2] - c[2]]),
        );
    }
    Ok(PatchSet {
        centers,
        center_indices,
        neighborhoods,
        k_patch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_patch_covers_cloud() {
        let pts: Vec<[f64; 3]> = (0..6).map(|i| [i as f64, 0.0, 1.0]).collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let ps = build_patches(&cloud, 1, 6, 4).unwrap();
        let c = ps.centers[0];
        let mut got: Vec<[f64; 3]> = ps
            .patch(0)
            .iter()
            .map(|q| [q[0] + c[0], q[1] + c[1], q[2] + c[2]])
            .collect();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, pts);
    }

    #[test]
    fn cube_patches_contain_own_center() {
        let mut pts = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        let ps = build_patches(&cloud, 2, 4, 0).unwrap();
        for i in 0..2 {
            assert_eq!(ps.patch(i)[0], [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn size_errors_propagate() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 4]).unwrap();
        assert!(build_patches(&cloud, 5, 2, 0).is_err());
        assert!(build_patches(&cloud, 2, 5, 0).is_err());
    }
}
