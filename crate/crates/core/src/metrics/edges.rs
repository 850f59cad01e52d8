//! Boundary sharpness (edge entropy) and edge completeness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::canny::{canny_log_depth, valid_depth, CannyConfig, EdgeMap};
use crate::types::ImageGrid;

/// Per-edge-pixel sharpness score `S_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeEntropy {
    /// Mean of the per-pixel scores; `None` when no edges were found.
    pub mean: Option<f64>,
    pub scores: Vec<EdgeScore>,
}

/// Bernoulli entropy in bits with `0 log 0 = 0`.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    (h(p) + h(1.0 - p)).clamp(0.0, 1.0)
}

/// Mean Bernoulli entropy of already normalized probabilities.
pub fn mean_bernoulli_entropy(probs: &[f64]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    probs.iter().map(|&p| bernoulli_entropy(p)).sum::<f64>() / probs.len() as f64
}

/// Average Bernoulli entropy of a min-max normalized neighborhood.
/// Constant neighborhoods score 0.
pub fn neighborhood_entropy(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || hi <= lo {
        return 0.0;
    }
    let probs: Vec<f64> = values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect();
    mean_bernoulli_entropy(&probs)
}

/// Score every edge pixel of `edges` on the 3x3 neighborhood of `depth`.
/// Invalid depth samples are left out of the neighborhood.
pub fn score_edges(depth: &ImageGrid, edges: &EdgeMap) -> EdgeEntropy {
    let (w, h) = (depth.width() as i64, depth.height() as i64);
    let mut hood = Vec::with_capacity(9);
    let scores: Vec<EdgeScore> = edges
        .pixels()
        .map(|(x, y)| {
            hood.clear();
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h {
                        let d = depth.at(nx as usize, ny as usize, 0);
                        if valid_depth(d) {
                            hood.push(d);
                        }
                    }
                }
            }
            EdgeScore {
                x,
                y,
                score: neighborhood_entropy(&hood),
            }
        })
        .collect();
    let mean = (!scores.is_empty())
        .then(|| scores.iter().map(|s| s.score).sum::<f64>() / scores.len() as f64);
    EdgeEntropy { mean, scores }
}

pub fn edge_entropy(depth: &ImageGrid, cfg: &CannyConfig) -> Result<EdgeEntropy> {
    let edges = canny_log_depth(depth, cfg)?;
    Ok(score_edges(depth, &edges))
}

/// 1D squared distance transform (Felzenszwalb and Huttenlocher) over the
/// lower envelope of parabolas rooted at the finite samples.
fn dt_1d(f: &[f64], out: &mut [f64]) {
    let roots: Vec<usize> = (0..f.len()).filter(|&q| f[q].is_finite()).collect();
    if roots.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let meet = |p: usize, q: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut v: Vec<usize> = vec![roots[0]];
    let mut z: Vec<f64> = vec![f64::NEG_INFINITY, f64::INFINITY];
    for &q in &roots[1..] {
        let mut s = meet(*v.last().unwrap(), q);
        while s <= z[v.len() - 1] {
            v.pop();
            z.pop();
            if v.is_empty() {
                break;
            }
            s = meet(*v.last().unwrap(), q);
        }
        if v.is_empty() {
            v.push(q);
            z = vec![f64::NEG_INFINITY, f64::INFINITY];
        } else {
            *z.last_mut().unwrap() = s;
            v.push(q);
            z.push(f64::INFINITY);
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from every pixel to the nearest set flag.
/// All distances are infinite when no flag is set.
pub fn distance_transform(width: usize, height: usize, flags: &[bool]) -> Vec<f64> {
    let mut g: Vec<f64> = flags
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = g[y * width + x];
        }
        dt_1d(&col, &mut col_out);
        for y in 0..height {
            g[y * width + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; width];
    for y in 0..height {
        dt_1d(&g[y * width..(y + 1) * width], &mut row_out);
        g[y * width..(y + 1) * width].copy_from_slice(&row_out);
    }
    g.into_iter().map(f64::sqrt).collect()
}

/// Mean distance from predicted edges to ground-truth edges, in pixels.
/// `Ok(None)` when the prediction has no edges. Predicted edges with an
/// invalid ground-truth sample in their 3x3 neighborhood are skipped.
pub fn edge_completeness(
    pred_depth: &ImageGrid,
    gt_depth: &ImageGrid,
    cfg: &CannyConfig,
) -> Result<Option<f64>> {
    if !pred_depth.same_shape(gt_depth) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred_depth.width(),
            pred_depth.height(),
            gt_depth.width(),
            gt_depth.height()
        )));
    }
    let gt_edges = canny_log_depth(gt_depth, cfg)?;
    if gt_edges.is_empty() {
        return Err(Error::EmptyEdgeSet("ground truth"));
    }
    let pred_edges = canny_log_depth(pred_depth, cfg)?;
    completeness_of_edges(&pred_edges, &gt_edges, gt_depth)
}

pub(crate) fn completeness_of_edges(
    pred: &EdgeMap,
    gt: &EdgeMap,
    gt_depth: &ImageGrid,
) -> Result<Option<f64>> {
    let (w, h) = (gt.width(), gt.height());
    let dt = distance_transform(w, h, gt.flags());
    let near_invalid = |x: usize, y: usize| {
        (y.saturating_sub(1)..=(y + 1).min(h - 1)).any(|yy| {
            (x.saturating_sub(1)..=(x + 1).min(w - 1))
                .any(|xx| !valid_depth(gt_depth.at(xx, yy, 0)))
        })
    };
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in pred.pixels() {
        if near_invalid(x, y) {
            continue;
        }
        sum += dt[y * w + x];
        n += 1;
    }
    Ok((n > 0).then(|| sum / n as f64))
}
