//! Photometric error `E = l_ssim (1 - SSIM) / 2 + l_l1 |C - T|` and its
//! first-order variance.
//!
//! SSIM uses a 3x3 block average. Only the center pixel of the warped window
//! is treated as random; the other eight window samples are constants. The
//! variance is `sum_c (dE/dC_c)^2 var_c` under channel independence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::ColorDistribution;
use crate::real::{Dual, Real};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Index of the center sample in a row-major 3x3 window.
pub const CENTER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotometricConfig {
    pub lambda_ssim: f64,
    pub lambda_l1: f64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.85,
            lambda_l1: 0.15,
        }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ssim >= 0.0 && self.lambda_l1 >= 0.0)
            || !(self.lambda_ssim + self.lambda_l1).is_finite()
        {
            return Err(Error::invalid(
                "photometric weights must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Gaussian summary of the photometric error at one pixel for one component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub mu: f64,
    pub var: f64,
    /// Out-of-bounds warp, invalid reprojection or filtered static pixel.
    pub masked: bool,
}

impl ErrorDistribution {
    pub fn new(mu: f64, var: f64) -> Result<Self> {
        if !mu.is_finite() || !var.is_finite() || var < 0.0 {
            return Err(Error::invalid(format!(
                "invalid error distribution ({mu}, {var})"
            )));
        }
        Ok(Self {
            mu,
            var,
            masked: false,
        })
    }

    pub fn masked() -> Self {
        Self {
            mu: 0.0,
            var: 0.0,
            masked: true,
        }
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// A 3x3 window of colors, row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch3 {
    channels: usize,
    data: Vec<f64>,
}

impl Patch3 {
    pub fn new(channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != 9 * channels {
            return Err(Error::DimensionMismatch(format!(
                "3x3 patch with {channels} channels needs {} samples, got {}",
                9 * channels,
                data.len()
            )));
        }
        Ok(Self { channels, data })
    }

    /// Every window sample equal to `color`.
    pub fn uniform(color: &[f64]) -> Self {
        let data = (0..9).flat_map(|_| color.iter().copied()).collect();
        Self {
            channels: color.len(),
            data,
        }
    }

    /// Window around `(x, y)` with clamped borders.
    pub fn from_image(img: &crate::types::ImageGrid, x: usize, y: usize) -> Self {
        let ch = img.channels();
        let mut data = Vec::with_capacity(9 * ch);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let xx = (x as i64 + dx).clamp(0, img.width() as i64 - 1) as usize;
                let yy = (y as i64 + dy).clamp(0, img.height() as i64 - 1) as usize;
                data.extend_from_slice(img.pixel(xx, yy));
            }
        }
        Self { channels: ch, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn center(&self) -> &[f64] {
        &self.data[CENTER * self.channels..(CENTER + 1) * self.channels]
    }
}

/// SSIM of one channel over a 3x3 window and its partial with respect to
/// the warped center sample.
fn ssim_channel<T: Real>(warped: &[T; 9], target: &[f64; 9]) -> (T, T) {
    let ninth = 1.0 / 9.0;
    let zero = T::cst(0.0);
    let (mut sx, mut sxx, mut sxy) = (zero, zero, zero);
    let (mut sy, mut syy) = (0.0, 0.0);
    for j in 0..9 {
        let (x, y) = (warped[j], target[j]);
        sx += x;
        sxx += x * x;
        sxy += x.scale(y);
        sy += y;
        syy += y * y;
    }
    let mx = sx.scale(ninth);
    let my = sy * ninth;
    let vx = sxx.scale(ninth) - mx * mx;
    let vy = syy * ninth - my * my;
    let cxy = sxy.scale(ninth) - mx.scale(my);

    let n1 = mx.scale(2.0 * my) + T::cst(SSIM_C1);
    let n2 = cxy.scale(2.0) + T::cst(SSIM_C2);
    let d1 = mx * mx + T::cst(my * my + SSIM_C1);
    let d2 = vx + T::cst(vy + SSIM_C2);
    let den = d1 * d2;
    let ssim = n1 * n2 / den;

    let xc = warped[CENTER];
    let yc = target[CENTER];
    let dn1 = T::cst(2.0 * my * ninth);
    let dn2 = (T::cst(yc) - T::cst(my)).scale(2.0 * ninth);
    let dd1 = mx.scale(2.0 * ninth);
    let dd2 = (xc - mx).scale(2.0 * ninth);
    let dssim = (dn1 * n2 + n1 * dn2) / den - ssim * (dd1 * d2 + d1 * dd2) / den;
    (ssim, dssim)
}

/// Mean and variance of the photometric error. `warped` holds the 3x3
/// warped window (9 x channels, center included), `center_var` the color
/// variance of the center sample per channel.
pub(crate) fn error_moments<T: Real>(
    warped: &[T],
    target: &[f64],
    center_var: &[T],
    channels: usize,
    cfg: &PhotometricConfig,
) -> (T, T) {
    let inv_ch = 1.0 / channels as f64;
    let zero = T::cst(0.0);
    let mut mu = zero;
    let mut var = zero;
    for c in 0..channels {
        let mut w = [zero; 9];
        let mut t = [0.0; 9];
        for j in 0..9 {
            w[j] = warped[j * channels + c];
            t[j] = target[j * channels + c];
        }
        let diff = w[CENTER] - T::cst(t[CENTER]);
        let l1 = diff.abs();
        let sign = match diff.value() {
            v if v > 0.0 => 1.0,
            v if v < 0.0 => -1.0,
            _ => 0.0,
        };
        let mut e = l1.scale(cfg.lambda_l1);
        let mut de = T::cst(cfg.lambda_l1 * sign);
        if cfg.lambda_ssim != 0.0 {
            let (ssim, dssim) = ssim_channel(&w, &t);
            e += (T::cst(1.0) - ssim).scale(0.5 * cfg.lambda_ssim);
            de += dssim.scale(-0.5 * cfg.lambda_ssim);
        }
        mu += e.scale(inv_ch);
        let de = de.scale(inv_ch);
        var += de * de * center_var[c];
    }
    (mu, var)
}

fn check_channels(pred: &ColorDistribution, warped: &Patch3, target: &Patch3) -> Result<usize> {
    let ch = pred.channels();
    if warped.channels != ch || target.channels != ch {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {ch} channels, windows have {} and {}",
            warped.channels, target.channels
        )));
    }
    Ok(ch)
}

/// Error distribution of a warped color prediction against the target
/// window. The center of `warped_context` is replaced by `pred.mean`.
pub fn photometric_error(
    pred: &ColorDistribution,
    warped_context: &Patch3,
    target: &Patch3,
    cfg: &PhotometricConfig,
) -> Result<ErrorDistribution> {
    cfg.validate()?;
    let ch = check_channels(pred, warped_context, target)?;
    if pred.out_of_bounds {
        return Ok(ErrorDistribution::masked());
    }
    let mut warped = warped_context.data.clone();
    warped[CENTER * ch..(CENTER + 1) * ch].copy_from_slice(&pred.mean);
    let (mu, var) = error_moments(&warped, &target.data, &pred.var, ch, cfg);
    Ok(ErrorDistribution {
        mu,
        var,
        masked: false,
    })
}

/// Derivatives of the error mean and variance with respect to each channel
/// of the predicted center color, as `[d mu / d c, d var / d c]`.
pub fn photometric_error_gradient(
    pred: &ColorDistribution,
    warped_context: &Patch3,
    target: &Patch3,
    cfg: &PhotometricConfig,
) -> Result<Vec<[f64; 2]>> {
    cfg.validate()?;
    let ch = check_channels(pred, warped_context, target)?;
    let var: Vec<Dual<1>> = pred.var.iter().map(|&v| Dual::constant(v)).collect();
    Ok((0..ch)
        .map(|c| {
            let warped: Vec<Dual<1>> = warped_context
                .data
                .iter()
                .enumerate()
                .map(|(i, &v)| match i {
                    _ if i == CENTER * ch + c => Dual::seeded(pred.mean[c], 0, 1.0),
                    _ if (CENTER * ch..(CENTER + 1) * ch).contains(&i) => {
                        Dual::constant(pred.mean[i - CENTER * ch])
                    }
                    _ => Dual::constant(v),
                })
                .collect();
            let (mu, var) = error_moments(&warped, &target.data, &var, ch, cfg);
            [mu.d[0], var.d[0]]
        })
        .collect())
}

/// Monte Carlo reference for [`photometric_error`]: draws the center color
/// from its Gaussian and recomputes the error exactly.
pub fn mc_error_oracle(
    pred: &ColorDistribution,
    warped_context: &Patch3,
    target: &Patch3,
    cfg: &PhotometricConfig,
    n_samples: usize,
    seed: u64,
) -> Result<ErrorDistribution> {
    let ch = check_channels(pred, warped_context, target)?;
    if n_samples < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals = pred
        .mean
        .iter()
        .zip(&pred.var)
        .map(|(&m, &v)| Normal::new(m, v.sqrt()).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut warped = warped_context.data.clone();
    let zero_var = vec![0.0; ch];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut pivot = None;
    for _ in 0..n_samples {
        for c in 0..ch {
            warped[CENTER * ch + c] = normals[c].sample(&mut rng);
        }
        let (e, _) = error_moments(&warped, &target.data, &zero_var, ch, cfg);
        let k = *pivot.get_or_insert(e);
        sum += e - k;
        sum_sq += (e - k) * (e - k);
    }
    let n = n_samples as f64;
    let mu = pivot.unwrap_or(0.0) + sum / n;
    let var = ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
    Ok(ErrorDistribution {
        mu,
        var,
        masked: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dist(mean: Vec<f64>, var: Vec<f64>) -> ColorDistribution {
        ColorDistribution {
            mean,
            var,
            out_of_bounds: false,
        }
    }

    fn random_patch(rng: &mut ChaCha8Rng, ch: usize) -> Patch3 {
        Patch3::new(
            ch,
            (0..9 * ch).map(|_| rng.random_range(0.05..0.95)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_reconstruction_has_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = random_patch(&mut rng, 3);
        let pred = dist(target.center().to_vec(), vec![0.0; 3]);
        let e = photometric_error(&pred, &target, &target, &PhotometricConfig::default()).unwrap();
        assert!(e.mu.abs() < 1e-12, "{}", e.mu);
        assert_eq!(e.var, 0.0);
    }

    #[test]
    fn pure_l1_single_channel() {
        let cfg = PhotometricConfig {
            lambda_ssim: 0.0,
            lambda_l1: 1.0,
        };
        let pred = dist(vec![0.7], vec![0.01]);
        let target = Patch3::uniform(&[0.5]);
        let e = photometric_error(&pred, &Patch3::uniform(&[0.5]), &target, &cfg).unwrap();
        assert!((e.mu - 0.2).abs() < 1e-15);
        assert!((e.var - 0.01).abs() < 1e-15);
    }

    #[test]
    fn masked_prediction_propagates() {
        let mut pred = dist(vec![0.3], vec![0.0]);
        pred.out_of_bounds = true;
        let p = Patch3::uniform(&[0.2]);
        assert!(
            photometric_error(&pred, &p, &p, &PhotometricConfig::default())
                .unwrap()
                .masked
        );
    }

    #[test]
    fn ssim_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let w: [f64; 9] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let t: [f64; 9] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let (_, d) = ssim_channel(&w, &t);
            let h = 1e-6;
            let (mut wp, mut wm) = (w, w);
            wp[CENTER] += h;
            wm[CENTER] -= h;
            let fd = (ssim_channel(&wp, &t).0 - ssim_channel(&wm, &t).0) / (2.0 * h);
            assert!(
                (d - fd).abs() <= 1e-6 * d.abs().max(fd.abs()).max(1e-3),
                "{d} vs {fd}"
            );
        }
    }

    #[test]
    fn error_gradient_matches_finite_differences() {
        // dE/dC for the full SSIM + L1 error, checked through the dual path
        let cfg = PhotometricConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut checked = 0;
        while checked < 100 {
            let w = random_patch(&mut rng, 3);
            let t = random_patch(&mut rng, 3);
            let c = rng.random_range(0..3);
            if (w.center()[c] - t.center()[c]).abs() < 1e-3 {
                continue;
            }
            let duals: Vec<Dual<1>> = w
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if i == CENTER * 3 + c {
                        Dual::seeded(v, 0, 1.0)
                    } else {
                        Dual::constant(v)
                    }
                })
                .collect();
            let zero = [Dual::constant(0.0); 3];
            let (e, _) = error_moments(&duals, t.data(), &zero, 3, &cfg);
            let h = 1e-6;
            let eval = |delta: f64| {
                let mut d = w.data().to_vec();
                d[CENTER * 3 + c] += delta;
                error_moments(&d, t.data(), &[0.0; 3], 3, &cfg).0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = e.d[0];
            assert!(
                (an - fd).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1e-4),
                "{an} vs {fd}"
            );
            checked += 1;
        }
    }

    #[test]
    fn variance_matches_monte_carlo_away_from_kink() {
        let cfg = PhotometricConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 10 {
            let w = random_patch(&mut rng, 3);
            let t = random_patch(&mut rng, 3);
            let sd = 0.005;
            // keep every channel's |C - T| well clear of zero
            if w.center()
                .iter()
                .zip(t.center())
                .any(|(a, b)| (a - b).abs() < 8.0 * sd)
            {
                continue;
            }
            let pred = dist(w.center().to_vec(), vec![sd * sd; 3]);
            let an = photometric_error(&pred, &w, &t, &cfg).unwrap();
            let mc = mc_error_oracle(&pred, &w, &t, &cfg, 100_000, 5 + checked).unwrap();
            let rel = (an.std() - mc.std()).abs() / mc.std();
            assert!(
                rel < 0.05,
                "analytic {} mc {} rel {rel}",
                an.std(),
                mc.std()
            );
            checked += 1;
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let pred = dist(vec![0.3, 0.2, 0.1], vec![0.0; 3]);
        let p = Patch3::uniform(&[0.2]);
        assert!(photometric_error(&pred, &p, &p, &PhotometricConfig::default()).is_err());
        assert!(Patch3::new(3, vec![0.0; 9]).is_err());
    }
}
