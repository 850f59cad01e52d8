//! First-order propagation of a Gaussian disparity component through
//! reprojection and bilinear color lookup.
//!
//! For `s(d) = C(f_reproj(d))` the color distribution is
//! `N(s(mu), (grad C . f_reproj'(mu))^2 var)` per channel; channels are
//! treated as independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{warp, PixelCoord};
use crate::real::Real;
use crate::sampling::{sample_generic, Texel};
use crate::types::{CameraRig, DepthConvention, GaussianRV, ImageGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct ColorDistribution {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// The warped mean fell outside the source image.
    pub out_of_bounds: bool,
}

impl ColorDistribution {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Push `rv` through a differentiable map with value `f_value` and slope
/// `f_deriv` at the mean. Exact for affine maps.
pub fn push_through(f_value: f64, f_deriv: f64, rv: GaussianRV) -> GaussianRV {
    GaussianRV {
        mean: f_value,
        var: f_deriv * f_deriv * rv.var,
    }
}

/// Per-channel warped color and its propagated variance, generic so the
/// trainer can differentiate it.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ColorMoment<T> {
    pub mean: T,
    pub var: T,
    /// `ds/dd`: color change per unit disparity.
    pub slope: T,
}

pub(crate) fn color_moments<T: Real>(
    p: PixelCoord,
    mean: T,
    var: T,
    rig: &CameraRig,
    conv: &DepthConvention,
    src: &ImageGrid,
    out: &mut [ColorMoment<T>],
) -> Result<bool> {
    let w = warp(p, mean, rig, conv)?;
    let zero = T::cst(0.0);
    let mut texels = [Texel {
        value: zero,
        gx: zero,
        gy: zero,
    }; 4];
    let ch = src.channels();
    let texels = &mut texels[..ch.min(4)];
    let oob = sample_generic(src, w.x, w.y, texels);
    for (o, t) in out.iter_mut().zip(texels.iter()) {
        let slope = t.gx * w.dx_dd + t.gy * w.dy_dd;
        *o = ColorMoment {
            mean: t.value,
            var: slope * slope * var,
            slope,
        };
    }
    Ok(oob)
}

pub fn propagate_color(
    component: GaussianRV,
    p: PixelCoord,
    rig: &CameraRig,
    conv: &DepthConvention,
    src: &ImageGrid,
) -> Result<ColorDistribution> {
    if !(component.mean > 0.0 && component.mean < 1.0) {
        return Err(Error::invalid(format!(
            "component mean must lie in (0,1), got {}",
            component.mean
        )));
    }
    if src.channels() > 4 {
        return Err(Error::invalid("source images have at most 4 channels"));
    }
    let mut m = vec![
        ColorMoment {
            mean: 0.0,
            var: 0.0,
            slope: 0.0
        };
        src.channels()
    ];
    let out_of_bounds = color_moments(p, component.mean, component.var, rig, conv, src, &mut m)?;
    Ok(ColorDistribution {
        mean: m.iter().map(|c| c.mean).collect(),
        var: m.iter().map(|c| c.var).collect(),
        out_of_bounds,
    })
}

/// Empirical mean and variance of the warped color over `n_samples` draws of
/// the disparity component. Draws are clipped into `(1e-6, 1 - 1e-6)`.
pub fn mc_color_oracle(
    component: GaussianRV,
    p: PixelCoord,
    rig: &CameraRig,
    conv: &DepthConvention,
    src: &ImageGrid,
    n_samples: usize,
    seed: u64,
) -> Result<ColorDistribution> {
    if n_samples < 1000 {
        return Err(Error::invalid(format!(
            "need at least 1000 samples, got {n_samples}"
        )));
    }
    let ch = src.channels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal =
        Normal::new(component.mean, component.std()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut texels = vec![
        Texel {
            value: 0.0,
            gx: 0.0,
            gy: 0.0
        };
        ch
    ];
    let mut sum = vec![0.0; ch];
    let mut sum_sq = vec![0.0; ch];
    let mut out_of_bounds = false;
    // shift by the first sample for a numerically stable single pass
    let mut pivot: Option<Vec<f64>> = None;
    for _ in 0..n_samples {
        let d = normal.sample(&mut rng).clamp(1e-6, 1.0 - 1e-6);
        let w = warp(p, d, rig, conv)?;
        out_of_bounds |= sample_generic(src, w.x, w.y, &mut texels);
        let k = pivot.get_or_insert_with(|| texels.iter().map(|t| t.value).collect());
        for c in 0..ch {
            let v = texels[c].value - k[c];
            sum[c] += v;
            sum_sq[c] += v * v;
        }
    }
    let n = n_samples as f64;
    let pivot = pivot.unwrap_or_else(|| vec![0.0; ch]);
    let mean = (0..ch).map(|c| pivot[c] + sum[c] / n).collect();
    let var = (0..ch)
        .map(|c| ((sum_sq[c] - sum[c] * sum[c] / n) / (n - 1.0)).max(0.0))
        .collect();
    Ok(ColorDistribution {
        mean,
        var,
        out_of_bounds,
    })
}
