//! Central finite-difference checks of every analytic derivative: the
//! reprojection Jacobian, bilinear image gradients, the photometric error
//! with respect to the predicted color, and the full loss with frozen
//! decisions with respect to every raw parameter.
//!
//! Instances within reach of a kink (cell boundaries, the L1 kink, a
//! switching smoothness or selection decision) are skipped and counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{reproject, reproject_jacobian, PixelCoord};
use crate::loss::{
    photometric_error, photometric_error_gradient, Patch3, PhotometricConfig, VarianceMode,
};
use crate::propagation::ColorDistribution;
use crate::sampling::bilinear_sample;
use crate::trainer::{ParamTable, TrainConfig, TrainScene, Trainer};
use crate::types::{CameraRig, DepthConvention, ImageGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCheck {
    pub stage: String,
    pub checked: usize,
    pub skipped: usize,
    /// Largest `|analytic - fd| / max(|analytic|, |fd|, floor)`.
    pub max_rel: f64,
    pub tolerance: f64,
    pub pass: bool,
}

struct Tally {
    stage: &'static str,
    tolerance: f64,
    floor: f64,
    checked: usize,
    skipped: usize,
    max_rel: f64,
}

impl Tally {
    fn new(stage: &'static str, tolerance: f64, floor: f64) -> Self {
        Self {
            stage,
            tolerance,
            floor,
            checked: 0,
            skipped: 0,
            max_rel: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, fd: f64) {
        let scale = analytic.abs().max(fd.abs()).max(self.floor);
        self.max_rel = self.max_rel.max((analytic - fd).abs() / scale);
    }

    fn finish(self) -> StageCheck {
        StageCheck {
            stage: self.stage.into(),
            checked: self.checked,
            skipped: self.skipped,
            max_rel: self.max_rel,
            tolerance: self.tolerance,
            pass: self.checked > 0 && self.max_rel < self.tolerance,
        }
    }
}

fn random_rig(rng: &mut ChaCha8Rng) -> Result<CameraRig> {
    let axis = [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ];
    let r = CameraRig::axis_angle(axis, rng.random_range(-0.1..0.1));
    let t = [
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.3..0.3),
    ];
    CameraRig::new(120.0, 110.0, 64.0, 48.0, r, t)
}

/// `d(x, y)/dd` of [`reproject`] on random rigs, pixels and disparities.
pub fn check_reproject(instances: usize, seed: u64) -> Result<StageCheck> {
    let conv = DepthConvention::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("reproject", 1e-5, 1e-3);
    let h = 1e-6;
    while t.checked < instances {
        let rig = random_rig(&mut rng)?;
        let p = PixelCoord::new(rng.random_range(0.0..128.0), rng.random_range(0.0..96.0));
        let d = rng.random_range(0.02..0.98);
        let (Ok(qp), Ok(qm), Ok(j)) = (
            reproject(p, d + h, &rig, &conv),
            reproject(p, d - h, &rig, &conv),
            reproject_jacobian(p, d, &rig, &conv),
        ) else {
            t.skipped += 1;
            continue;
        };
        t.record(j.dx_dd, (qp.x - qm.x) / (2.0 * h));
        t.record(j.dy_dd, (qp.y - qm.y) / (2.0 * h));
        t.checked += 1;
    }
    Ok(t.finish())
}

/// Spatial gradients of [`bilinear_sample`] on a random image, away from
/// cell boundaries where they jump.
pub fn check_bilinear(instances: usize, seed: u64) -> Result<StageCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..16 * 12 * 3)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let img = ImageGrid::new(16, 12, 3, data)?;
    let mut t = Tally::new("bilinear_sample", 1e-5, 1e-6);
    let h = 1e-4;
    while t.checked < instances {
        let p = PixelCoord::new(rng.random_range(0.0..15.0), rng.random_range(0.0..11.0));
        let near_kink = |v: f64| v.fract() < 2.0 * h || v.fract() > 1.0 - 2.0 * h;
        if near_kink(p.x) || near_kink(p.y) {
            t.skipped += 1;
            continue;
        }
        let s = bilinear_sample(&img, p);
        let at =
            |dx: f64, dy: f64| bilinear_sample(&img, PixelCoord::new(p.x + dx, p.y + dy)).value;
        let (xp, xm, yp, ym) = (at(h, 0.0), at(-h, 0.0), at(0.0, h), at(0.0, -h));
        for c in 0..3 {
            t.record(s.grad_x[c], (xp[c] - xm[c]) / (2.0 * h));
            t.record(s.grad_y[c], (yp[c] - ym[c]) / (2.0 * h));
        }
        t.checked += 1;
    }
    Ok(t.finish())
}

/// Derivatives of the error mean and variance with respect to the
/// predicted color under SSIM + L1, away from the L1 kink.
pub fn check_photometric(instances: usize, seed: u64) -> Result<StageCheck> {
    let cfg = PhotometricConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("photometric_error", 1e-5, 1e-4);
    let h = 1e-6;
    let patch = |rng: &mut ChaCha8Rng| {
        Patch3::new(3, (0..27).map(|_| rng.random_range(0.05..0.95)).collect())
    };
    while t.checked < instances {
        let context = patch(&mut rng)?;
        let target = patch(&mut rng)?;
        let mean: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.95)).collect();
        let var: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1e-3)).collect();
        if mean
            .iter()
            .zip(target.center())
            .any(|(m, t)| (m - t).abs() < 1e-3)
        {
            t.skipped += 1;
            continue;
        }
        let pred = ColorDistribution {
            mean: mean.clone(),
            var: var.clone(),
            out_of_bounds: false,
        };
        let grad = photometric_error_gradient(&pred, &context, &target, &cfg)?;
        for c in 0..3 {
            let shifted = |delta: f64| {
                let mut m = mean.clone();
                m[c] += delta;
                let p = ColorDistribution {
                    mean: m,
                    var: var.clone(),
                    out_of_bounds: false,
                };
                photometric_error(&p, &context, &target, &cfg)
            };
            let (ep, em) = (shifted(h)?, shifted(-h)?);
            t.record(grad[c][0], (ep.mu - em.mu) / (2.0 * h));
            t.record(grad[c][1], (ep.var - em.var) / (2.0 * h));
        }
        t.checked += 1;
    }
    Ok(t.finish())
}

fn perturb(table: &mut ParamTable, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..2 {
        for v in table.logit_mu[k].iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        for v in table.log_sigma[k].iter_mut() {
            *v += rng.random_range(-1.0..0.5);
        }
    }
    for v in table.logit_alpha.iter_mut() {
        *v += rng.random_range(-2.0..2.0);
    }
}

/// Gradient of the full loss with decisions frozen at a randomly perturbed
/// table, for random raw parameters. A parameter whose central difference
/// depends on the step size has a kink inside the stencil and is skipped.
pub fn check_loss(
    scene: &TrainScene,
    cfg: TrainConfig,
    instances: usize,
    seed: u64,
) -> Result<StageCheck> {
    let trainer = Trainer::new(scene, cfg)?;
    let mut table = trainer.init()?;
    perturb(&mut table, seed);
    if cfg.baseline {
        table.logit_alpha = trainer.init()?.logit_alpha;
    }
    let (_, decisions, grad) = trainer.gradient(&table)?;
    let loss = |t: &ParamTable| trainer.evaluate(t, Some(&decisions)).map(|e| e.0.total);
    let fd = |set: &dyn Fn(&mut ParamTable, f64), h: f64| -> Result<f64> {
        let (mut a, mut b) = (table.clone(), table.clone());
        set(&mut a, h);
        set(&mut b, -h);
        Ok((loss(&a)? - loss(&b)?) / (2.0 * h))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
    // central differences of an O(1e-2) loss carry ~1e-13 of roundoff
    let mut t = Tally::new("full loss", 1e-4, 1e-8);
    let n = table.len();
    while t.checked < instances {
        let i = rng.random_range(0..n);
        let kind = rng.random_range(0..5usize);
        let comp = |k: usize| if cfg.baseline { 1 } else { k };
        let (set, analytic): (Box<dyn Fn(&mut ParamTable, f64)>, f64) = match kind {
            0 | 1 => {
                let k = comp(kind);
                (
                    Box::new(move |t: &mut ParamTable, h| t.logit_mu[k][i] += h),
                    grad.logit_mu[k][i],
                )
            }
            2 | 3 => {
                let k = comp(kind - 2);
                match cfg.variance_mode {
                    VarianceMode::PerPixel => (
                        Box::new(move |t: &mut ParamTable, h| t.log_sigma[k][i] += h),
                        grad.log_sigma[k][i],
                    ),
                    VarianceMode::OneConstant => (
                        Box::new(|t: &mut ParamTable, h| t.global_log_sigma[0] += h),
                        grad.global_log_sigma[0],
                    ),
                    VarianceMode::TwoConstants => (
                        Box::new(move |t: &mut ParamTable, h| t.global_log_sigma[k] += h),
                        grad.global_log_sigma[k],
                    ),
                }
            }
            _ if cfg.baseline => continue,
            _ => (
                Box::new(move |t: &mut ParamTable, h| t.logit_alpha[i] += h),
                grad.logit_alpha[i],
            ),
        };
        let f1 = fd(&*set, 1e-5)?;
        let f2 = fd(&*set, 5e-6)?;
        if (f1 - f2).abs() > 1e-6 * f1.abs().max(analytic.abs()).max(1e-9) {
            t.skipped += 1;
            continue;
        }
        t.record(analytic, f1);
        t.checked += 1;
    }
    Ok(t.finish())
}
