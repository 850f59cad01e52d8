use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::canny::valid_depth;
use crate::types::ImageGrid;

/// Dense depth errors over the valid pixels. AbsRel and LogSI are percentages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub absrel: f64,
    pub logsi: f64,
    pub valid_pixel_count: usize,
}

/// Pixels whose ground-truth depth is usable.
pub fn valid_mask(gt: &ImageGrid) -> Vec<bool> {
    gt.data().iter().map(|&d| valid_depth(d)).collect()
}

pub(crate) fn check_depth_pair(pred: &ImageGrid, gt: &ImageGrid) -> Result<()> {
    if !pred.same_shape(gt) || pred.channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{}x{} vs ground truth {}x{}x{}",
            pred.width(),
            pred.height(),
            pred.channels(),
            gt.width(),
            gt.height(),
            gt.channels()
        )));
    }
    Ok(())
}

pub fn image_metrics(pred: &ImageGrid, gt: &ImageGrid, mask: &[bool]) -> Result<ImageMetrics> {
    check_depth_pair(pred, gt)?;
    if mask.len() != gt.len_pixels() {
        return Err(Error::DimensionMismatch(
            "mask does not match the depth maps".into(),
        ));
    }
    let (mut abs, mut sq, mut rel, mut dl, mut dl2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut n = 0usize;
    for ((&p, &g), _) in pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask)
        .filter(|(_, &m)| m)
    {
        if !valid_depth(p) || !valid_depth(g) {
            return Err(Error::invalid(format!(
                "masked-in depths must be positive (pred {p}, gt {g})"
            )));
        }
        let r = p - g;
        abs += r.abs();
        sq += r * r;
        rel += r.abs() / g;
        let d = p.ln() - g.ln();
        dl += d;
        dl2 += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let nf = n as f64;
    let mean_d = dl / nf;
    Ok(ImageMetrics {
        mae: abs / nf,
        rmse: (sq / nf).sqrt(),
        absrel: 100.0 * rel / nf,
        logsi: 100.0 * (dl2 / nf - mean_d * mean_d).max(0.0).sqrt(),
        valid_pixel_count: n,
    })
}
