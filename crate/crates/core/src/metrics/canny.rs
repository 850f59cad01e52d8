//! Canny edges on log depth.
//!
//! Pipeline: log depth, min-max normalized to [0,1] over valid pixels ->
//! Gaussian smoothing -> Sobel gradients (scaled to per-pixel units) ->
//! non-maximum suppression -> hysteresis on the gradient magnitude.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ImageGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyConfig {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            low: 0.05,
            high: 0.15,
        }
    }
}

impl CannyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.low >= 0.0 && self.low <= self.high && self.high.is_finite())
        {
            return Err(Error::invalid(format!(
                "invalid Canny configuration {self:?}"
            )));
        }
        Ok(())
    }
}

/// Binary edge map with the dimensions of the depth map it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    edges: Vec<bool>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, edges: Vec<bool>) -> Result<Self> {
        if edges.len() != width * height {
            return Err(Error::DimensionMismatch(
                "edge flags do not match dimensions".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            edges,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.edges[y * self.width + x]
    }
    pub fn flags(&self) -> &[bool] {
        &self.edges
    }
    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }
    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Edge pixel coordinates in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &e)| e)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }
}

/// A depth sample is usable when it is finite and positive.
pub fn valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn convolve_separable(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * src[y * w + clamp(x as i64 + i as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[clamp(y as i64 + i as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Log depth scaled to [0,1]; invalid samples take the mean of the valid ones.
/// Returns `None` when the valid samples are constant or absent.
fn normalized_log_depth(depth: &ImageGrid) -> Option<Vec<f64>> {
    let logs: Vec<Option<f64>> = depth
        .data()
        .iter()
        .map(|&d| valid_depth(d).then(|| d.ln()))
        .collect();
    let valid: Vec<f64> = logs.iter().flatten().copied().collect();
    if valid.is_empty() {
        return None;
    }
    let lo = valid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return None;
    }
    let fill = valid.iter().sum::<f64>() / valid.len() as f64;
    Some(
        logs.iter()
            .map(|l| (l.unwrap_or(fill) - lo) / (hi - lo))
            .collect(),
    )
}

pub fn canny_log_depth(depth: &ImageGrid, cfg: &CannyConfig) -> Result<EdgeMap> {
    cfg.validate()?;
    if depth.channels() != 1 {
        return Err(Error::invalid("depth maps have one channel"));
    }
    let (w, h) = (depth.width(), depth.height());
    let Some(norm) = normalized_log_depth(depth) else {
        return EdgeMap::new(w, h, vec![false; w * h]);
    };
    if w < 3 || h < 3 {
        return EdgeMap::new(w, h, vec![false; w * h]);
    }
    let s = convolve_separable(&norm, w, h, &gaussian_kernel(cfg.sigma));
    let at = |x: usize, y: usize| s[y * w + x];
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1))
                / 8.0;
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1))
                / 8.0;
            mag[y * w + x] = gx.hypot(gy);
            // 0: horizontal gradient, 1: 45 deg, 2: vertical, 3: 135 deg
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[y * w + x] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }
    let mut thin = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m < cfg.low || m == 0.0 {
                continue;
            }
            let (before, after) = match dir[i] {
                0 => (mag[i - 1], mag[i + 1]),
                1 => (mag[i - w - 1], mag[i + w + 1]),
                2 => (mag[i - w], mag[i + w]),
                _ => (mag[i - w + 1], mag[i + w - 1]),
            };
            // plateaus keep their first pixel along the gradient direction
            if m > before && m >= after {
                thin[i] = m;
            }
        }
    }
    let mut edges = vec![false; w * h];
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..w * h {
        if thin[i] >= cfg.high && !edges[i] {
            edges[i] = true;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (x, y) = ((j % w) as i64, (j / w) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let k = ny as usize * w + nx as usize;
                        if !edges[k] && thin[k] >= cfg.low {
                            edges[k] = true;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    EdgeMap::new(w, h, edges)
}
