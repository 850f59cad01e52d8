use std::collections::HashSet;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::canny::valid_depth;
use crate::metrics::image::check_depth_pair;
use crate::types::{CameraRig, ImageGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloudMetrics {
    pub chamfer: f64,
    /// Percent.
    pub fscore: f64,
    /// Percent.
    pub iou: f64,
    pub pred_points: usize,
    pub gt_points: usize,
}

/// Back-project every valid depth sample through the rig intrinsics.
pub fn back_project(depth: &ImageGrid, rig: &CameraRig) -> Vec<[f64; 3]> {
    let mut pts = Vec::new();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let z = depth.at(x, y, 0);
            if valid_depth(z) {
                let r = rig.ray(x as f64, y as f64);
                pts.push([r[0] * z, r[1] * z, z]);
            }
        }
    }
    pts
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Distance from each query point to its nearest neighbor in `cloud`.
pub fn nearest_distances(queries: &[[f64; 3]], cloud: &[[f64; 3]]) -> Vec<f64> {
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(cloud);
    queries
        .iter()
        .map(|q| {
            let nn = tree.nearest_one::<SquaredEuclidean>(q);
            dist(q, &cloud[nn.item as usize])
        })
        .collect()
}

fn voxels(pts: &[[f64; 3]], size: f64) -> HashSet<[i64; 3]> {
    pts.iter()
        .map(|p| p.map(|c| (c / size).floor() as i64))
        .collect()
}

/// Chamfer distance (mean of the two directional mean nearest-neighbor
/// distances), F-score at `threshold` and voxel IoU at `voxel` size.
pub fn cloud_metrics(
    pred: &[[f64; 3]],
    gt: &[[f64; 3]],
    threshold: f64,
    voxel: f64,
) -> Result<PointCloudMetrics> {
    if pred.is_empty() {
        return Err(Error::EmptyPointSet("prediction"));
    }
    if gt.is_empty() {
        return Err(Error::EmptyPointSet("ground truth"));
    }
    if !(threshold > 0.0 && voxel > 0.0) {
        return Err(Error::invalid("threshold and voxel size must be positive"));
    }
    let to_gt = nearest_distances(pred, gt);
    let to_pred = nearest_distances(gt, pred);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let chamfer = 0.5 * (mean(&to_gt) + mean(&to_pred));
    let precision = to_gt.iter().filter(|&&d| d < threshold).count() as f64 / pred.len() as f64;
    let recall = to_pred.iter().filter(|&&d| d < threshold).count() as f64 / gt.len() as f64;
    let fscore = if precision + recall > 0.0 {
        200.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let (vp, vg) = (voxels(pred, voxel), voxels(gt, voxel));
    let inter = vp.intersection(&vg).count() as f64;
    let union = vp.union(&vg).count() as f64;
    Ok(PointCloudMetrics {
        chamfer,
        fscore,
        iou: 100.0 * inter / union,
        pred_points: pred.len(),
        gt_points: gt.len(),
    })
}

pub fn pointcloud_metrics(
    pred: &ImageGrid,
    gt: &ImageGrid,
    rig: &CameraRig,
    threshold: f64,
    voxel: f64,
) -> Result<PointCloudMetrics> {
    check_depth_pair(pred, gt)?;
    // only pixels with ground truth take part
    let masked = ImageGrid::new(
        pred.width(),
        pred.height(),
        1,
        pred.data()
            .iter()
            .zip(gt.data())
            .map(|(&p, &g)| if valid_depth(g) { p } else { 0.0 })
            .collect(),
    )?;
    cloud_metrics(
        &back_project(&masked, rig),
        &back_project(gt, rig),
        threshold,
        voxel,
    )
}

/// Number of valid depth samples strictly inside `(near, far)`.
pub fn count_in_depth_interval(depth: &ImageGrid, near: f64, far: f64) -> usize {
    depth
        .data()
        .iter()
        .filter(|&&d| valid_depth(d) && d > near && d < far)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        let dir = |p: &[[f64; 3]], q: &[[f64; 3]]| {
            p.iter()
                .map(|x| q.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / p.len() as f64
        };
        0.5 * (dir(a, b) + dir(b, a))
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [1usize, 7, 60, 250, 500] {
            let mut cloud = |m: usize| -> Vec<[f64; 3]> {
                (0..m)
                    .map(|_| {
                        [
                            rng.random_range(-2.0..2.0),
                            rng.random_range(-2.0..2.0),
                            rng.random_range(1.0..5.0),
                        ]
                    })
                    .collect()
            };
            let a = cloud(n);
            let b = cloud(n / 2 + 1);
            let m = cloud_metrics(&a, &b, 0.1, 0.2).unwrap();
            assert_eq!(m.chamfer, brute_chamfer(&a, &b));
            assert_eq!(m.chamfer, cloud_metrics(&b, &a, 0.1, 0.2).unwrap().chamfer);
        }
    }

    #[test]
    fn identical_and_separated_clouds() {
        let a = vec![[0.0, 0.0, 1.0], [0.5, 0.2, 2.0], [1.0, 1.0, 3.0]];
        let m = cloud_metrics(&a, &a, 0.1, 0.2).unwrap();
        assert_eq!((m.chamfer, m.fscore, m.iou), (0.0, 100.0, 100.0));
        let m = cloud_metrics(&[[0.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0]], 0.5, 0.2).unwrap();
        assert_eq!((m.chamfer, m.fscore), (1.0, 0.0));
    }

    #[test]
    fn depth_maps_back_project_through_intrinsics() {
        let rig = CameraRig::identity(10.0, 10.0, 2.0, 1.0).unwrap();
        let d = ImageGrid::filled(4, 3, 1, 2.0);
        let pts = back_project(&d, &rig);
        assert_eq!(pts.len(), 12);
        assert_eq!(pts[0], [-0.4, -0.2, 2.0]);
        let m = pointcloud_metrics(&d, &d, &rig, 0.1, 0.2).unwrap();
        assert_eq!(m.chamfer, 0.0);
        assert!(matches!(
            pointcloud_metrics(&ImageGrid::filled(4, 3, 1, 0.0), &d, &rig, 0.1, 0.2),
            Err(Error::EmptyPointSet(_))
        ));
    }

    #[test]
    fn interval_counts() {
        let d = ImageGrid::new(4, 1, 1, vec![5.0, 6.0, 8.0, 10.0]).unwrap();
        assert_eq!(count_in_depth_interval(&d, 6.0, 10.0), 1);
    }
}
