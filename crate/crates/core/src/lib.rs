//! Mixture-of-Gaussians disparity with analytic uncertainty propagation
//! through view synthesis.
//!
//! Each pixel carries two Gaussian disparity hypotheses and a mixture
//! weight. Both hypotheses are pushed through reprojection and bilinear
//! color lookup with the delta method, turned into Gaussian photometric
//! error distributions, and compared through the normal CDF so that each
//! component specializes on the side of a depth edge it explains best.
//! Inference picks one mean per pixel, which keeps depth boundaries sharp.
//!
//! Modules, bottom-up:
//!
//! - [`types`]: validated domain types and the disparity/depth convention
//! - [`geometry`]: reprojection and its derivative with respect to disparity
//! - [`sampling`]: bilinear interpolation with exact spatial gradients
//! - [`propagation`]: first-order color distributions and a Monte Carlo oracle
//! - [`loss`]: error distributions, competitive weights, loss terms
//! - [`metrics`]: edge entropy, edge completeness, image and point-cloud metrics
//! - [`synth`]: synthetic two-view scenes with exact ground truth
//! - [`trainer`]: per-pixel mixture tables fitted by gradient descent
//! - [`gradcheck`]: finite-difference checks of every analytic derivative
//! - [`validation`]: analytic-vs-Monte-Carlo checks behind `check-prop`
//! - [`diagnostics`]: edge localization, row profiles and floaters on box scenes
//! - [`run`]: the reproducible commands behind the `mixdepth` binary

pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod propagation;
pub mod real;
pub mod run;
pub mod sampling;
pub mod synth;
pub mod trainer;
pub mod types;
pub mod validation;

pub use error::{Error, Result};
pub use geometry::{reproject, reproject_jacobian, PixelCoord, ReprojJacobian};
pub use propagation::{mc_color_oracle, propagate_color, push_through, ColorDistribution};
pub use sampling::{bilinear_sample, ColorSample};
pub use types::{
    disparity_to_depth, mode_select, CameraRig, DepthConvention, GaussianRV, ImageGrid,
    MixtureDisparity,
};
