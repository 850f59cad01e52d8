//! Photometric error distributions, competitive component weights and the
//! loss terms built on them.

mod competitive;
mod photometric;
mod smoothness;

use serde::{Deserialize, Serialize};

pub use competitive::{
    alpha_cross_entropy, argmin_source, competitive_weights, loss_terms, min_over_sources,
    normal_cdf, static_pixel_mask, CompetitiveWeights, PixelTerms, ALPHA_EPS,
};
pub use photometric::{
    mc_error_oracle, photometric_error, photometric_error_gradient, ErrorDistribution, Patch3,
    PhotometricConfig, CENTER, SSIM_C1, SSIM_C2,
};
pub use smoothness::smoothness;

pub(crate) use photometric::error_moments;
pub(crate) use smoothness::EdgeWeights;

/// Loss weights. `lambda_alpha` and `lambda_s` default to 0.1 and 1e-3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    #[serde(flatten)]
    pub photometric: PhotometricConfig,
    pub lambda_alpha: f64,
    pub lambda_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            photometric: PhotometricConfig::default(),
            lambda_alpha: 0.1,
            lambda_s: 1e-3,
        }
    }
}

/// How the per-pixel disparity variances are parameterized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// One predicted variance per pixel and component.
    #[default]
    #[serde(alias = "per_pixel")]
    PerPixel,
    /// A single learned variance shared by both components and all pixels.
    #[serde(alias = "one_constant")]
    OneConstant,
    /// One learned variance per component, shared by all pixels.
    #[serde(alias = "two_constants")]
    TwoConstants,
}

impl std::str::FromStr for VarianceMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "per-pixel" | "per_pixel" => Ok(Self::PerPixel),
            "one-constant" | "one_constant" => Ok(Self::OneConstant),
            "two-constants" | "two_constants" => Ok(Self::TwoConstants),
            other => Err(format!("unknown variance mode `{other}`")),
        }
    }
}

/// Averaged loss terms over the valid pixels of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_mu: f64,
    pub l_sigma: f64,
    pub l_alpha: f64,
    pub l_smooth: f64,
    pub total: f64,
    pub valid_pixel_count: usize,
    /// Evaluations that had no valid pixel and therefore contributed zero.
    pub empty_warnings: usize,
}

impl LossBreakdown {
    /// Combine averaged terms; `total = l_mu + l_sigma + la l_alpha + ls l_smooth`.
    pub fn compose(
        l_mu: f64,
        l_sigma: f64,
        l_alpha: f64,
        l_smooth: f64,
        valid_pixel_count: usize,
        w: &LossWeights,
    ) -> Self {
        Self {
            l_mu,
            l_sigma,
            l_alpha,
            l_smooth,
            total: l_mu + l_sigma + w.lambda_alpha * l_alpha + w.lambda_s * l_smooth,
            valid_pixel_count,
            empty_warnings: usize::from(valid_pixel_count == 0),
        }
    }
}

/// Average per-pixel terms over the pixels that are not fully masked.
pub fn average_terms(
    terms: &[Option<PixelTerms>],
    l_smooth: f64,
    w: &LossWeights,
) -> LossBreakdown {
    let (mut mu, mut sigma, mut alpha, mut n) = (0.0, 0.0, 0.0, 0usize);
    for t in terms.iter().flatten() {
        mu += t.l_mu;
        sigma += t.l_sigma;
        alpha += t.l_alpha;
        n += 1;
    }
    if n == 0 {
        return LossBreakdown::compose(0.0, 0.0, 0.0, l_smooth, 0, w);
    }
    let inv = 1.0 / n as f64;
    LossBreakdown::compose(mu * inv, sigma * inv, alpha * inv, l_smooth, n, w)
}
