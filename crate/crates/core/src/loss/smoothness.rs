//! Edge-aware first-order smoothness on a mean-normalized disparity map:
//! `mean_x |dx d'| exp(-|dx I|) + mean_y |dy d'| exp(-|dy I|)` with
//! `d' = d / (mean(d) + 1e-7)` and image gradients averaged over channels.

use crate::error::{Error, Result};
use crate::types::ImageGrid;

const MEAN_EPS: f64 = 1e-7;

/// Image-derived weights, computed once per target image.
#[derive(Clone, Debug)]
pub(crate) struct EdgeWeights {
    width: usize,
    height: usize,
    /// `(w - 1) x h`, row-major
    wx: Vec<f64>,
    /// `w x (h - 1)`, row-major
    wy: Vec<f64>,
}

impl EdgeWeights {
    pub fn new(image: &ImageGrid) -> Self {
        let (w, h, ch) = (image.width(), image.height(), image.channels());
        let grad = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / ch as f64
        };
        let mut wx = Vec::with_capacity(w.saturating_sub(1) * h);
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                wx.push((-grad(image.pixel(x + 1, y), image.pixel(x, y))).exp());
            }
        }
        let mut wy = Vec::with_capacity(w * h.saturating_sub(1));
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                wy.push((-grad(image.pixel(x, y + 1), image.pixel(x, y))).exp());
            }
        }
        Self {
            width: w,
            height: h,
            wx,
            wy,
        }
    }

    /// Loss and its gradient with respect to every disparity sample.
    pub fn loss_and_grad(&self, d: &[f64]) -> (f64, Vec<f64>) {
        let (w, h) = (self.width, self.height);
        let n = d.len() as f64;
        let m = d.iter().sum::<f64>() / n + MEAN_EPS;
        let mut grad = vec![0.0; d.len()];
        let mut sx = 0.0;
        if w > 1 {
            let nx = ((w - 1) * h) as f64;
            for y in 0..h {
                for x in 0..w - 1 {
                    let i = y * w + x;
                    let diff = d[i + 1] - d[i];
                    let wt = self.wx[y * (w - 1) + x];
                    sx += diff.abs() * wt;
                    let g = diff.signum() * wt / nx;
                    if diff != 0.0 {
                        grad[i + 1] += g;
                        grad[i] -= g;
                    }
                }
            }
            sx /= nx;
        }
        let mut sy = 0.0;
        if h > 1 {
            let ny = (w * (h - 1)) as f64;
            for y in 0..h - 1 {
                for x in 0..w {
                    let i = y * w + x;
                    let diff = d[i + w] - d[i];
                    let wt = self.wy[y * w + x];
                    sy += diff.abs() * wt;
                    let g = diff.signum() * wt / ny;
                    if diff != 0.0 {
                        grad[i + w] += g;
                        grad[i] -= g;
                    }
                }
            }
            sy /= ny;
        }
        let s = sx + sy;
        // L = S / m with m = mean(d) + eps
        let common = s / (m * m * n);
        for g in grad.iter_mut() {
            *g = *g / m - common;
        }
        (s / m, grad)
    }
}

pub fn smoothness(mu_map: &ImageGrid, image: &ImageGrid) -> Result<f64> {
    if mu_map.width() != image.width() || mu_map.height() != image.height() {
        return Err(Error::DimensionMismatch(format!(
            "disparity {}x{} vs image {}x{}",
            mu_map.width(),
            mu_map.height(),
            image.width(),
            image.height()
        )));
    }
    if mu_map.channels() != 1 {
        return Err(Error::invalid("disparity map must have one channel"));
    }
    Ok(EdgeWeights::new(image).loss_and_grad(mu_map.data()).0)
}
