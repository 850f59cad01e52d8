use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::photometric::ErrorDistribution;

/// Lower clamp for the mixture weight inside the log of the cross-entropy.
pub const ALPHA_EPS: f64 = 1e-7;

/// Probability that each component has the lower photometric error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompetitiveWeights {
    pub w1: f64,
    pub w2: f64,
}

impl CompetitiveWeights {
    fn from_w1(w1: f64) -> Self {
        Self { w1, w2: 1.0 - w1 }
    }

    /// `round(w_k)` as a component index; `w = 0.5` selects component 2.
    pub fn selected(&self) -> usize {
        if self.w1 > 0.5 {
            0
        } else {
            1
        }
    }

    pub fn rounded(&self) -> [f64; 2] {
        match self.selected() {
            0 => [1.0, 0.0],
            _ => [0.0, 1.0],
        }
    }

    pub fn get(&self, k: usize) -> f64 {
        if k == 0 {
            self.w1
        } else {
            self.w2
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `w1 = Phi((mu_E2 - mu_E1) / sqrt(var_E1 + var_E2))`, `w2 = 1 - w1`.
pub fn competitive_weights(
    e1: &ErrorDistribution,
    e2: &ErrorDistribution,
) -> Result<CompetitiveWeights> {
    match (e1.masked, e2.masked) {
        (true, true) => return Err(Error::invalid("both components are masked")),
        (false, true) => return Ok(CompetitiveWeights::from_w1(1.0)),
        (true, false) => return Ok(CompetitiveWeights::from_w1(0.0)),
        _ => {}
    }
    let spread = (e1.var + e2.var).sqrt();
    let gap = e2.mu - e1.mu;
    let w1 = if spread > 0.0 {
        normal_cdf(gap / spread)
    } else if gap > 0.0 {
        1.0
    } else if gap == 0.0 {
        0.5
    } else {
        0.0
    };
    Ok(CompetitiveWeights::from_w1(w1))
}

/// Per-pixel loss terms before averaging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PixelTerms {
    pub l_mu: f64,
    pub l_sigma: f64,
    pub l_alpha: f64,
}

/// Cross-entropy of the mixture weight against the competitive weights,
/// `-(w1 ln(1 - alpha) + w2 ln(alpha))` with alpha clamped to
/// `[ALPHA_EPS, 1 - ALPHA_EPS]`.
pub fn alpha_cross_entropy(w: &CompetitiveWeights, alpha: f64) -> f64 {
    let a = alpha.clamp(ALPHA_EPS, 1.0 - ALPHA_EPS);
    -(w.w1 * (1.0 - a).ln() + w.w2 * a.ln())
}

/// `l_mu = sum_k round(w_k) mu_Ek`, `l_sigma = sum_k round(w_k) (sigma_Ek - mu_Ek)^2`
/// and the mixture-weight cross-entropy. Masked pixels contribute zero.
pub fn loss_terms(
    e1: &ErrorDistribution,
    e2: &ErrorDistribution,
    w: &CompetitiveWeights,
    alpha: f64,
) -> PixelTerms {
    if e1.masked && e2.masked {
        return PixelTerms::default();
    }
    let e = if w.selected() == 0 { e1 } else { e2 };
    PixelTerms {
        l_mu: e.mu,
        l_sigma: (e.std() - e.mu).powi(2),
        l_alpha: alpha_cross_entropy(w, alpha),
    }
}

/// The source with the smallest expected error; masked if every source is.
pub fn min_over_sources(errors: &[ErrorDistribution]) -> Result<ErrorDistribution> {
    if errors.is_empty() {
        return Err(Error::invalid("need at least one source"));
    }
    Ok(argmin_source(errors)
        .map(|i| errors[i])
        .unwrap_or_else(ErrorDistribution::masked))
}

/// Index of the unmasked source with minimal `mu`; first wins on ties.
pub fn argmin_source(errors: &[ErrorDistribution]) -> Option<usize> {
    errors
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.masked)
        .fold(None, |best: Option<(usize, f64)>, (i, e)| match best {
            Some((_, m)) if m <= e.mu => best,
            _ => Some((i, e.mu)),
        })
        .map(|(i, _)| i)
}

/// Keep a pixel iff its warped error is strictly below the error of the
/// unwarped source.
pub fn static_pixel_mask(warped_error: &[f64], identity_error: &[f64]) -> Result<Vec<bool>> {
    if warped_error.len() != identity_error.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} warped errors vs {} identity errors",
            warped_error.len(),
            identity_error.len()
        )));
    }
    Ok(warped_error
        .iter()
        .zip(identity_error)
        .map(|(w, i)| w < i)
        .collect())
}
