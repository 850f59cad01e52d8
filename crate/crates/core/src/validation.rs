//! Analytic-vs-Monte-Carlo checks for color propagation, photometric error
//! variances and competitive weights.
//!
//! Color and error cases are drawn on a rendered scene at random pixels and
//! random component means. Only cases where the warped color is close to
//! linear over the `±3 sigma` disparity footprint decide the outcome:
//!
//! - a footprint touching more than one source surface sits on a depth edge;
//! - a channel whose slope along the warp path changes by more than
//!   `linearity` (relative) over the footprint is curved, as near texture
//!   extrema where the slope vanishes;
//! - an error case whose predicted color lies within `3 sigma` of the target
//!   in some channel straddles the L1 kink. The error oracle draws colors
//!   from the propagated Gaussian, so texture curvature plays no part there.
//!
//! Such cases are reported separately.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reproject, reproject_jacobian, PixelCoord};
use crate::loss::{
    competitive_weights, mc_error_oracle, photometric_error, ErrorDistribution, Patch3,
    PhotometricConfig,
};
use crate::propagation::{mc_color_oracle, propagate_color};
use crate::sampling::bilinear_sample;
use crate::synth::{render, RenderedScene, SceneSpec};
use crate::types::{CameraRig, DepthConvention, GaussianRV, ImageGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropCheckConfig {
    pub scene: SceneSpec,
    /// Disparity standard deviations to test.
    pub sigmas: Vec<f64>,
    /// Random cases per standard deviation.
    pub cases: usize,
    /// Monte Carlo draws per color or error case.
    pub samples: usize,
    /// Relative tolerance on standard deviations.
    pub tolerance: f64,
    /// Allowed deviation in Monte Carlo standard errors for exact cases.
    pub se_factor: f64,
    /// Largest relative change of a channel's slope over the footprint for
    /// the channel to count as smooth.
    pub linearity: f64,
    pub photometric: PhotometricConfig,
    pub weight_pairs: usize,
    pub weight_draws: usize,
    pub seed: u64,
}

impl Default for PropCheckConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default_box(),
            sigmas: vec![0.001, 0.01, 0.05],
            cases: 200,
            samples: 100_000,
            tolerance: 0.05,
            se_factor: 3.0,
            linearity: 0.05,
            photometric: PhotometricConfig::default(),
            weight_pairs: 50,
            weight_draws: 1_000_000,
            seed: 0,
        }
    }
}

impl PropCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.sigmas.iter().any(|&s| !(s > 0.0 && s < 0.5)) {
            return Err(Error::invalid(
                "sigmas must be non-empty and lie in (0, 0.5)",
            ));
        }
        if self.cases == 0
            || self.samples < 1000
            || self.weight_pairs == 0
            || self.weight_draws < 1000
        {
            return Err(Error::invalid(
                "need at least one case and 1000 Monte Carlo draws",
            ));
        }
        if !(self.tolerance > 0.0) || !(self.se_factor > 0.0) || !(self.linearity > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        self.photometric.validate()?;
        self.scene.validate()
    }
}

/// Relative deviations over a set of cases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub cases: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
}

impl DeviationStats {
    fn from(devs: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut max, mut sum) = (0, 0.0f64, 0.0);
        for d in devs {
            n += 1;
            max = max.max(d);
            sum += d;
        }
        Self {
            cases: n,
            max_rel: max,
            mean_rel: if n > 0 { sum / n as f64 } else { 0.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    pub sigma: f64,
    /// Per-channel color standard deviations on smooth texture.
    pub color: DeviationStats,
    /// Color cases whose footprint crosses a depth edge.
    pub color_edge: DeviationStats,
    /// Channels whose slope varies by more than `linearity` over the footprint.
    pub color_curved: DeviationStats,
    pub error: DeviationStats,
    /// Error cases at the L1 kink.
    pub error_excluded: DeviationStats,
    /// Cases skipped for out-of-bounds warps or zero analytic variance.
    pub skipped: usize,
    pub pass: bool,
}

/// Deviations measured in Monte Carlo standard errors on pipelines that are
/// affine in the disparity, where first-order propagation is exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineReport {
    pub cases: usize,
    pub max_mean_z: f64,
    pub max_std_z: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub pairs: usize,
    pub draws: usize,
    /// Largest `|freq - w1|` in binomial standard errors.
    pub max_z: f64,
    pub sums_to_one: bool,
    pub scaling_invariant: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropReport {
    pub config: PropCheckConfig,
    pub sigmas: Vec<SigmaReport>,
    pub affine: AffineReport,
    pub weights: WeightReport,
    pub pass: bool,
}

/// Derive an independent seed for `(label, index)` from one top-level seed.
pub fn sub_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    h ^= seed.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn rel(mc: f64, analytic: f64) -> f64 {
    (mc - analytic).abs() / analytic
}

/// True if the source pixels around the warped footprint of `[lo, hi]`
/// disparities all belong to one surface.
fn single_surface(scene: &RenderedScene, p: PixelCoord, lo: f64, hi: f64) -> Result<bool> {
    let spec = &scene.spec;
    let a = reproject(p, lo, &spec.rig, &spec.convention)?;
    let b = reproject(p, hi, &spec.rig, &spec.convention)?;
    let (w, h) = (spec.width as i64, spec.height as i64);
    let x0 = a.x.min(b.x).floor() as i64;
    let x1 = a.x.max(b.x).floor() as i64 + 1;
    let y0 = a.y.min(b.y).floor() as i64;
    let y1 = a.y.max(b.y).floor() as i64 + 1;
    if x0 < 0 || y0 < 0 || x1 >= w || y1 >= h {
        return Ok(false);
    }
    let surface = &scene.source.surface;
    let first = surface[(y0 * w + x0) as usize];
    Ok((y0..=y1).all(|y| (x0..=x1).all(|x| surface[(y * w + x) as usize] == first)))
}

/// Per channel, the largest relative deviation of the slope `dC/dd` over
/// `[lo, hi]` from its value at `mean`.
fn slope_variation(
    scene: &RenderedScene,
    p: PixelCoord,
    mean: f64,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>> {
    let spec = &scene.spec;
    let slope = |d: f64| -> Result<Vec<f64>> {
        let q = reproject(p, d, &spec.rig, &spec.convention)?;
        let j = reproject_jacobian(p, d, &spec.rig, &spec.convention)?;
        let s = bilinear_sample(&scene.source.color, q);
        Ok(s.grad_x
            .iter()
            .zip(&s.grad_y)
            .map(|(gx, gy)| gx * j.dx_dd + gy * j.dy_dd)
            .collect())
    };
    let center = slope(mean)?;
    let mut worst = vec![0.0f64; center.len()];
    // dense enough to visit every interpolation cell of a footprint a few pixels wide
    let n = 64;
    for i in 0..=n {
        let s = slope(lo + (hi - lo) * i as f64 / n as f64)?;
        for c in 0..center.len() {
            worst[c] = worst[c].max((s[c] - center[c]).abs() / center[c].abs());
        }
    }
    Ok(worst)
}

enum Channel {
    Smooth,
    Edge,
    Curved,
}

enum Case {
    Skipped,
    Done {
        color: Vec<(Channel, f64)>,
        error: Option<(bool, f64)>,
    },
}

fn scene_case(
    scene: &RenderedScene,
    cfg: &PropCheckConfig,
    sigma: f64,
    index: u64,
) -> Result<Case> {
    let spec = &scene.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "scene-case", index));
    let margin = 2;
    let x = rng.random_range(margin..spec.width - margin);
    let y = rng.random_range(margin..spec.height - margin);
    let mean = rng.random_range(0.1..0.9);
    let p = PixelCoord::new(x as f64, y as f64);
    let rv = GaussianRV::new(mean, sigma * sigma)?;
    let src = &scene.source.color;
    let analytic = match propagate_color(rv, p, &spec.rig, &spec.convention, src) {
        Ok(c) if !c.out_of_bounds => c,
        _ => return Ok(Case::Skipped),
    };
    let lo = (mean - 3.0 * sigma).max(1e-6);
    let hi = (mean + 3.0 * sigma).min(1.0 - 1e-6);
    let single = single_surface(scene, p, lo, hi).unwrap_or(false);
    let variation = slope_variation(scene, p, mean, lo, hi)?;
    let mc = mc_color_oracle(
        rv,
        p,
        &spec.rig,
        &spec.convention,
        src,
        cfg.samples,
        sub_seed(cfg.seed, "color", index),
    )?;
    if mc.out_of_bounds {
        return Ok(Case::Skipped);
    }
    let kind = |c: usize| match () {
        _ if !single => Channel::Edge,
        _ if variation[c] > cfg.linearity => Channel::Curved,
        _ => Channel::Smooth,
    };
    let color: Vec<_> = (0..analytic.channels())
        .filter(|&c| analytic.var[c] > 0.0)
        .map(|c| (kind(c), rel(mc.var[c].sqrt(), analytic.var[c].sqrt())))
        .collect();
    if color.is_empty() {
        return Ok(Case::Skipped);
    }
    let target = Patch3::from_image(&scene.target.color, x, y);
    let e = photometric_error(&analytic, &target, &target, &cfg.photometric)?;
    let error = if e.var > 0.0 {
        let m = mc_error_oracle(
            &analytic,
            &target,
            &target,
            &cfg.photometric,
            cfg.samples,
            sub_seed(cfg.seed, "error", index),
        )?;
        let clear_of_kink = analytic
            .mean
            .iter()
            .zip(&analytic.var)
            .zip(target.center())
            .all(|((m, v), t)| (m - t).abs() > 3.0 * v.sqrt());
        Some((clear_of_kink, rel(m.std(), e.std())))
    } else {
        None
    };
    Ok(Case::Done { color, error })
}

fn sigma_report(scene: &RenderedScene, cfg: &PropCheckConfig, s: usize) -> Result<SigmaReport> {
    let sigma = cfg.sigmas[s];
    let cases = (0..cfg.cases)
        .into_par_iter()
        .map(|i| scene_case(scene, cfg, sigma, (s * cfg.cases + i) as u64))
        .collect::<Result<Vec<_>>>()?;
    let mut skipped = 0;
    let (mut color, mut color_edge, mut color_curved) = (vec![], vec![], vec![]);
    let (mut error, mut error_excluded) = (vec![], vec![]);
    for c in cases {
        let Case::Done {
            color: channels,
            error: e,
        } = c
        else {
            skipped += 1;
            continue;
        };
        for (kind, dev) in channels {
            match kind {
                Channel::Smooth => color.push(dev),
                Channel::Edge => color_edge.push(dev),
                Channel::Curved => color_curved.push(dev),
            }
        }
        match e {
            Some((true, dev)) => error.push(dev),
            Some((false, dev)) => error_excluded.push(dev),
            None => {}
        }
    }
    let color = DeviationStats::from(color);
    let error = DeviationStats::from(error);
    let pass = color.cases > 0 && color.max_rel <= cfg.tolerance && error.max_rel <= cfg.tolerance;
    Ok(SigmaReport {
        sigma,
        color,
        color_edge: DeviationStats::from(color_edge),
        color_curved: DeviationStats::from(color_curved),
        error,
        error_excluded: DeviationStats::from(error_excluded),
        skipped,
        pass,
    })
}

/// Mean and standard-deviation deviations in standard errors of an
/// empirical Gaussian summary against the exact one.
fn z_scores(mean: f64, var: f64, mc_mean: f64, mc_var: f64, n: usize) -> (f64, f64) {
    let sd = var.sqrt();
    let n = n as f64;
    let mean_se = sd / n.sqrt();
    let std_se = sd / (2.0 * (n - 1.0)).sqrt();
    (
        (mc_mean - mean).abs() / mean_se,
        (mc_var.sqrt() - sd).abs() / std_se,
    )
}

/// A linear ramp seen through a rectified rig: the warped color is affine
/// in the disparity, and an L1-only error is affine in the color away from
/// its kink.
fn affine_report(cfg: &PropCheckConfig) -> Result<AffineReport> {
    let (w, h) = (64, 16);
    let rig = CameraRig::rectified(100.0, 100.0, 31.5, 7.5, 0.1)?;
    let conv = DepthConvention::new(3.0, 60.0)?;
    let src = ImageGrid::from_fn(w, h, |x, _| 0.2 + 0.01 * x as f64)?;
    let l1 = PhotometricConfig {
        lambda_ssim: 0.0,
        lambda_l1: 1.0,
    };
    let per_sigma = 4;
    let results = (0..cfg.sigmas.len() * per_sigma)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let sigma = cfg.sigmas[i / per_sigma];
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "affine-case", i as u64));
            let p = PixelCoord::new(rng.random_range(30.0..40.0f64).round(), 8.0);
            let rv = GaussianRV::new(rng.random_range(0.3..0.7), sigma * sigma)?;
            let c = propagate_color(rv, p, &rig, &conv, &src)?;
            let mc = mc_color_oracle(
                rv,
                p,
                &rig,
                &conv,
                &src,
                cfg.samples,
                sub_seed(cfg.seed, "affine-color", i as u64),
            )?;
            let (mz, sz) = z_scores(c.mean[0], c.var[0], mc.mean[0], mc.var[0], cfg.samples);
            // target far below the predicted color keeps every draw on one side of the kink
            let target = Patch3::uniform(&[c.mean[0] - 10.0 * c.var[0].sqrt() - 0.01]);
            let e = photometric_error(&c, &target, &target, &l1)?;
            let me = mc_error_oracle(
                &c,
                &target,
                &target,
                &l1,
                cfg.samples,
                sub_seed(cfg.seed, "affine-error", i as u64),
            )?;
            let (emz, esz) = z_scores(e.mu, e.var, me.mu, me.var, cfg.samples);
            Ok((mz.max(emz), sz.max(esz)))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_mean_z = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let max_std_z = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(AffineReport {
        cases: results.len(),
        max_mean_z,
        max_std_z,
        pass: max_mean_z <= cfg.se_factor && max_std_z <= cfg.se_factor,
    })
}

fn weight_report(cfg: &PropCheckConfig) -> Result<WeightReport> {
    let results = (0..cfg.weight_pairs)
        .into_par_iter()
        .map(|i| -> Result<(f64, bool, bool)> {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "weight-pair", i as u64));
            let mu1 = rng.random_range(0.0..0.2);
            let mu2 = rng.random_range(0.0..0.2);
            let sd1: f64 = rng.random_range(0.005..0.1);
            let sd2: f64 = rng.random_range(0.005..0.1);
            let e1 = ErrorDistribution::new(mu1, sd1 * sd1)?;
            let e2 = ErrorDistribution::new(mu2, sd2 * sd2)?;
            let w = competitive_weights(&e1, &e2)?;
            let n1 = Normal::new(mu1, sd1).map_err(|e| Error::invalid(e.to_string()))?;
            let n2 = Normal::new(mu2, sd2).map_err(|e| Error::invalid(e.to_string()))?;
            let hits = (0..cfg.weight_draws)
                .filter(|_| n1.sample(&mut rng) < n2.sample(&mut rng))
                .count();
            let n = cfg.weight_draws as f64;
            let freq = hits as f64 / n;
            let se = (w.w1 * (1.0 - w.w1) / n).sqrt();
            let z = if se > 0.0 {
                (freq - w.w1).abs() / se
            } else if freq == w.w1 {
                0.0
            } else {
                f64::INFINITY
            };
            let invariant = [1e-3, 0.5, 7.0, 1e3].iter().all(|&c: &f64| {
                let s1 = ErrorDistribution::new(c * mu1, c * c * sd1 * sd1);
                let s2 = ErrorDistribution::new(c * mu2, c * c * sd2 * sd2);
                match (s1, s2) {
                    (Ok(a), Ok(b)) => competitive_weights(&a, &b)
                        .map(|v| v.selected() == w.selected())
                        .unwrap_or(false),
                    _ => false,
                }
            });
            Ok((z, w.w1 + w.w2 == 1.0, invariant))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_z = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let sums_to_one = results.iter().all(|r| r.1);
    let scaling_invariant = results.iter().all(|r| r.2);
    Ok(WeightReport {
        pairs: cfg.weight_pairs,
        draws: cfg.weight_draws,
        max_z,
        sums_to_one,
        scaling_invariant,
        pass: max_z <= cfg.se_factor && sums_to_one && scaling_invariant,
    })
}

/// Run every comparison. Failing tolerances are reported in the result,
/// not as an error.
pub fn check_propagation(cfg: &PropCheckConfig) -> Result<PropReport> {
    cfg.validate()?;
    let scene = render(&cfg.scene)?;
    let sigmas = (0..cfg.sigmas.len())
        .map(|s| sigma_report(&scene, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let affine = affine_report(cfg)?;
    let weights = weight_report(cfg)?;
    let pass = sigmas.iter().all(|s| s.pass) && affine.pass && weights.pass;
    Ok(PropReport {
        config: cfg.clone(),
        sigmas,
        affine,
        weights,
        pass,
    })
}
