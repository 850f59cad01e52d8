//! Evaluation suite: boundary sharpness, edge completeness, dense depth
//! errors and point-cloud errors.

mod canny;
mod edges;
mod image;
mod pointcloud;

use serde::{Deserialize, Serialize};

pub use canny::{canny_log_depth, valid_depth, CannyConfig, EdgeMap};
pub use edges::{
    bernoulli_entropy, distance_transform, edge_completeness, edge_entropy, mean_bernoulli_entropy,
    neighborhood_entropy, score_edges, EdgeEntropy, EdgeScore,
};
pub use image::{image_metrics, valid_mask, ImageMetrics};
pub use pointcloud::{
    back_project, cloud_metrics, count_in_depth_interval, nearest_distances, pointcloud_metrics,
    PointCloudMetrics,
};

use crate::error::{Error, Result};
use crate::types::{CameraRig, ImageGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub canny: CannyConfig,
    pub fscore_threshold: f64,
    pub voxel_size: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            canny: CannyConfig::default(),
            fscore_threshold: 0.1,
            voxel_size: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    /// `null` when the prediction has no edges.
    pub edge_entropy: Option<f64>,
    /// Sharpness of the ground truth itself, for reference.
    pub gt_edge_entropy: Option<f64>,
    /// `null` when either edge set is empty.
    pub edge_completeness: Option<f64>,
    pub pred_edge_count: usize,
    pub gt_edge_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: MetricsConfig,
    pub image: ImageMetrics,
    pub pointcloud: PointCloudMetrics,
    pub edges: EdgeReport,
}

/// Every metric of a predicted depth map against ground truth.
pub fn evaluate(
    pred: &ImageGrid,
    gt: &ImageGrid,
    rig: &CameraRig,
    cfg: &MetricsConfig,
) -> Result<MetricsReport> {
    cfg.canny.validate()?;
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let image = image_metrics(pred, gt, &valid_mask(gt))?;
    let pointcloud = pointcloud_metrics(pred, gt, rig, cfg.fscore_threshold, cfg.voxel_size)?;
    let pred_edges = canny_log_depth(pred, &cfg.canny)?;
    let gt_edges = canny_log_depth(gt, &cfg.canny)?;
    let edge_completeness = if gt_edges.is_empty() {
        log::warn!("ground truth has no edges; edge completeness is undefined");
        None
    } else {
        edges::completeness_of_edges(&pred_edges, &gt_edges, gt)?
    };
    let report = MetricsReport {
        config: *cfg,
        image,
        pointcloud,
        edges: EdgeReport {
            edge_entropy: score_edges(pred, &pred_edges).mean,
            gt_edge_entropy: score_edges(gt, &gt_edges).mean,
            edge_completeness,
            pred_edge_count: pred_edges.count(),
            gt_edge_count: gt_edges.count(),
        },
    };
    Ok(report)
}
