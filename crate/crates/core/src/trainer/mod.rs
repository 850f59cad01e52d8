//! Fits a per-pixel mixture table to a rendered scene by momentum descent
//! on the full loss.
//!
//! Each step decides, per pixel, which source each component uses, the
//! competitive weights and the selected component, then differentiates the
//! loss with those decisions held fixed. Per-pixel parameters descend the
//! summed per-pixel gradient (`N_valid` times the gradient of the averaged
//! loss), so one pixel's step does not shrink with image size; the shared
//! variance parameters of the constant modes descend the averaged gradient.

mod params;
mod step;

use serde::{Deserialize, Serialize};

pub use params::{init_params, logit, sigmoid, DecodedTable, ParamTable};
pub use step::{Decisions, Evaluation, Gradient, Objective};

use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, LossWeights, VarianceMode};
use crate::synth::RenderedScene;
use crate::types::{CameraRig, DepthConvention, ImageGrid};
use params::{FROZEN_ALPHA_LOGIT, LOGIT_LIMIT, LOG_SIGMA_RANGE};
use step::SceneCache;

#[derive(Clone, Debug, PartialEq)]
pub struct SourceView {
    pub rig: CameraRig,
    pub image: ImageGrid,
}

/// Target image plus one or more posed source images.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainScene {
    pub target: ImageGrid,
    pub sources: Vec<SourceView>,
    pub convention: DepthConvention,
}

impl TrainScene {
    pub fn new(
        target: ImageGrid,
        sources: Vec<SourceView>,
        convention: DepthConvention,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("need at least one source view"));
        }
        if target.channels() > 4 {
            return Err(Error::invalid("images have at most 4 channels"));
        }
        if sources.iter().any(|s| !s.image.same_shape(&target)) {
            return Err(Error::DimensionMismatch(
                "source and target images differ in shape".into(),
            ));
        }
        Ok(Self {
            target,
            sources,
            convention,
        })
    }

    pub fn from_rendered(scene: &RenderedScene) -> Result<Self> {
        Self::new(
            scene.target.color.clone(),
            vec![SourceView {
                rig: scene.spec.rig,
                image: scene.source.color.clone(),
            }],
            scene.spec.convention,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Fraction of the run after which the rate is multiplied by `decay_factor`.
    pub decay_at: f64,
    pub decay_factor: f64,
    pub steps: usize,
    pub loss: LossWeights,
    /// Weight of a quadratic 4-neighbor prior on both mean maps. Zero
    /// reproduces the plain objective.
    pub lambda_prior: f64,
    /// Multiplier on the learning rate of the log standard deviations,
    /// whose gradients are orders of magnitude smaller than those of the means.
    pub sigma_rate_scale: f64,
    pub variance_mode: VarianceMode,
    pub seed: u64,
    /// Single-Gaussian ablation: only the second component is fitted and
    /// the mixture weight is frozen at 1.
    pub baseline: bool,
    /// Drop pixels whose warped error does not beat the unwarped source.
    pub automask: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.9,
            decay_at: 0.7,
            decay_factor: 0.1,
            steps: 500,
            loss: LossWeights::default(),
            lambda_prior: 0.0,
            sigma_rate_scale: 1.0,
            variance_mode: VarianceMode::PerPixel,
            seed: 0,
            baseline: false,
            automask: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| r > 0.0 && r.is_finite();
        if !rate_ok(self.learning_rate) || !rate_ok(self.sigma_rate_scale) || self.steps == 0 {
            return Err(Error::invalid(
                "learning_rate, sigma_rate_scale and steps must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..=1.0).contains(&self.decay_at)
            || !(self.decay_factor > 0.0)
        {
            return Err(Error::invalid(
                "momentum must be in [0,1), decay_at in [0,1] and decay_factor positive",
            ));
        }
        if self.loss.lambda_alpha < 0.0 || self.loss.lambda_s < 0.0 || self.lambda_prior < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        self.loss.photometric.validate()
    }

    pub fn objective(&self) -> Objective {
        Objective {
            weights: self.loss,
            lambda_prior: self.lambda_prior,
            baseline: self.baseline,
            automask: self.automask,
        }
    }

    /// Settings that fit the default box scene in 600 steps: a large rate,
    /// a quadratic prior standing in for a network's smoothness bias, and
    /// per-pixel L1 photometric error (3x3 SSIM windows fatten foreground
    /// edges on per-pixel tables).
    pub fn box_scene() -> Self {
        let mut loss = LossWeights::default();
        loss.photometric.lambda_ssim = 0.0;
        loss.photometric.lambda_l1 = 1.0;
        Self {
            learning_rate: 1.0,
            steps: 600,
            loss,
            lambda_prior: 3.0,
            sigma_rate_scale: 300.0,
            ..Self::default()
        }
    }

    pub fn rate_at(&self, step: usize) -> f64 {
        if (step as f64) >= self.decay_at * self.steps as f64 {
            self.learning_rate * self.decay_factor
        } else {
            self.learning_rate
        }
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub l_mu: f64,
    pub l_sigma: f64,
    pub l_alpha: f64,
    pub l_smooth: f64,
    pub l_prior: f64,
    pub total: f64,
    pub valid_pixel_count: usize,
    pub learning_rate: f64,
}

impl TrainRecord {
    fn new(step: usize, e: &Evaluation, lr: f64) -> Self {
        let b: &LossBreakdown = &e.breakdown;
        Self {
            step,
            l_mu: b.l_mu,
            l_sigma: b.l_sigma,
            l_alpha: b.l_alpha,
            l_smooth: b.l_smooth,
            l_prior: e.l_prior,
            total: e.total,
            valid_pixel_count: b.valid_pixel_count,
            learning_rate: lr,
        }
    }
}

/// Momentum buffers for every raw parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Momentum {
    velocity: Gradient,
}

impl Momentum {
    pub fn new(n: usize) -> Self {
        Self {
            velocity: Gradient {
                logit_mu: [vec![0.0; n], vec![0.0; n]],
                log_sigma: [vec![0.0; n], vec![0.0; n]],
                logit_alpha: vec![0.0; n],
                global_log_sigma: [0.0; 2],
            },
        }
    }
}

/// A trainer bound to one scene and objective.
pub struct Trainer<'a> {
    scene: &'a TrainScene,
    cfg: TrainConfig,
    cache: SceneCache,
}

impl<'a> Trainer<'a> {
    pub fn new(scene: &'a TrainScene, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            scene,
            cfg,
            cache: SceneCache::new(scene, &cfg.loss),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Initial table for this scene; the baseline freezes the mixture weight at 1.
    pub fn init(&self) -> Result<ParamTable> {
        let t = &self.scene.target;
        let mut table = init_params(t.width(), t.height(), self.cfg.seed, self.cfg.variance_mode)?;
        if self.cfg.baseline {
            table.logit_alpha.fill(FROZEN_ALPHA_LOGIT);
        }
        Ok(table)
    }

    fn check_table(&self, table: &ParamTable) -> Result<()> {
        let t = &self.scene.target;
        if table.width() != t.width() || table.height() != t.height() {
            return Err(Error::DimensionMismatch(
                "parameter table does not match the scene".into(),
            ));
        }
        Ok(())
    }

    /// Loss with fresh decisions, or with `frozen` ones held fixed.
    pub fn evaluate(
        &self,
        table: &ParamTable,
        frozen: Option<&Decisions>,
    ) -> Result<(Evaluation, Decisions)> {
        self.check_table(table)?;
        Ok(step::evaluate(
            table,
            self.scene,
            &self.cache,
            &self.cfg.objective(),
            frozen,
        ))
    }

    /// Loss, decisions and the exact gradient with those decisions frozen.
    pub fn gradient(&self, table: &ParamTable) -> Result<(Evaluation, Decisions, Gradient)> {
        self.check_table(table)?;
        step::evaluate_with_gradient(table, self.scene, &self.cache, &self.cfg.objective())
    }

    /// One momentum step in place; returns the loss before the update.
    pub fn train_step(
        &self,
        table: &mut ParamTable,
        momentum: &mut Momentum,
        step: usize,
    ) -> Result<TrainRecord> {
        let (eval, decisions, grad) = self.gradient(table)?;
        let lr = self.cfg.rate_at(step);
        let scale = decisions.valid_count() as f64;
        let m = self.cfg.momentum;
        let sigma_scale = self.cfg.sigma_rate_scale;
        let v = &mut momentum.velocity;
        let update = |theta: &mut [f64], vel: &mut [f64], g: &[f64], s: f64, lo: f64, hi: f64| {
            for ((t, v), g) in theta.iter_mut().zip(vel.iter_mut()).zip(g) {
                *v = m * *v + s * g;
                *t = (*t - lr * *v).clamp(lo, hi);
            }
        };
        let comps: &[usize] = if self.cfg.baseline { &[1] } else { &[0, 1] };
        for &k in comps {
            update(
                &mut table.logit_mu[k],
                &mut v.logit_mu[k],
                &grad.logit_mu[k],
                scale,
                -LOGIT_LIMIT,
                LOGIT_LIMIT,
            );
            if table.variance_mode == VarianceMode::PerPixel {
                let (lo, hi) = LOG_SIGMA_RANGE;
                update(
                    &mut table.log_sigma[k],
                    &mut v.log_sigma[k],
                    &grad.log_sigma[k],
                    scale * sigma_scale,
                    lo,
                    hi,
                );
            }
        }
        if table.variance_mode != VarianceMode::PerPixel {
            let (lo, hi) = LOG_SIGMA_RANGE;
            update(
                &mut table.global_log_sigma,
                &mut v.global_log_sigma,
                &grad.global_log_sigma,
                sigma_scale,
                lo,
                hi,
            );
        }
        if !self.cfg.baseline {
            update(
                &mut table.logit_alpha,
                &mut v.logit_alpha,
                &grad.logit_alpha,
                scale,
                -LOGIT_LIMIT,
                LOGIT_LIMIT,
            );
        }
        Ok(TrainRecord::new(step, &eval, lr))
    }

    /// Run `cfg.steps` steps from [`Trainer::init`]. `on_step` sees every
    /// record and the table after the update.
    pub fn fit(
        &self,
        mut on_step: impl FnMut(&TrainRecord, &ParamTable),
    ) -> std::result::Result<FitResult, FitFailure> {
        let mut table = self.init().map_err(|error| FitFailure {
            error,
            last_good: None,
            log: Vec::new(),
        })?;
        let mut momentum = Momentum::new(table.len());
        let mut log = Vec::with_capacity(self.cfg.steps);
        for step in 0..self.cfg.steps {
            let before = table.clone();
            match self.train_step(&mut table, &mut momentum, step) {
                Ok(rec) => {
                    log::debug!("step {step}: total {:.6}", rec.total);
                    on_step(&rec, &table);
                    log.push(rec);
                }
                Err(error) => {
                    return Err(FitFailure {
                        error,
                        last_good: Some(before),
                        log,
                    })
                }
            }
        }
        Ok(FitResult { table, log })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub table: ParamTable,
    pub log: Vec<TrainRecord>,
}

/// A fit that stopped on a numerical failure, with the last finite table.
#[derive(Debug)]
pub struct FitFailure {
    pub error: Error,
    pub last_good: Option<ParamTable>,
    pub log: Vec<TrainRecord>,
}

impl std::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "fit stopped after {} steps: {}",
            self.log.len(),
            self.error
        )
    }
}

impl std::error::Error for FitFailure {}

pub fn fit(scene: &TrainScene, cfg: &TrainConfig) -> std::result::Result<FitResult, FitFailure> {
    let trainer = Trainer::new(scene, *cfg).map_err(|error| FitFailure {
        error,
        last_good: None,
        log: Vec::new(),
    })?;
    trainer.fit(|_, _| {})
}

/// Median of `total` over consecutive windows of `window` records.
pub fn windowed_medians(log: &[TrainRecord], window: usize) -> Vec<f64> {
    log.chunks(window.max(1))
        .filter(|c| c.len() == window.max(1))
        .map(|c| {
            let mut v: Vec<f64> = c.iter().map(|r| r.total).collect();
            v.sort_by(f64::total_cmp);
            let m = v.len() / 2;
            if v.len() % 2 == 0 {
                0.5 * (v[m - 1] + v[m])
            } else {
                v[m]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render, Background, SceneObject, SceneSpec, TextureSpec};

    fn small_scene() -> TrainScene {
        TrainScene::from_rendered(&small_rendered()).unwrap()
    }

    fn check_gradients(cfg: TrainConfig, seed: u64) {
        let c = crate::gradcheck::check_loss(&small_scene(), cfg, 100, seed).unwrap();
        assert!(c.pass, "{c:?}");
        assert!(c.skipped < 100, "too many kinks: {}", c.skipped);
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(
            TrainConfig {
                lambda_prior: 0.5,
                ..Default::default()
            },
            1,
        );
    }

    #[test]
    fn baseline_and_constant_variance_gradients() {
        check_gradients(
            TrainConfig {
                baseline: true,
                ..Default::default()
            },
            2,
        );
        check_gradients(
            TrainConfig {
                variance_mode: VarianceMode::OneConstant,
                ..Default::default()
            },
            3,
        );
        check_gradients(
            TrainConfig {
                variance_mode: VarianceMode::TwoConstants,
                automask: false,
                ..Default::default()
            },
            4,
        );
    }

    fn small_rendered() -> RenderedScene {
        let spec = SceneSpec {
            width: 40,
            height: 30,
            rig: CameraRig::rectified(40.0, 40.0, 19.5, 14.5, 0.25).unwrap(),
            convention: DepthConvention::new(3.0, 60.0).unwrap(),
            background: Background {
                depth: 10.0,
                texture: TextureSpec {
                    seed: 5,
                    frequency: 0.08,
                    amplitude: 0.4,
                },
            },
            objects: vec![SceneObject {
                depth: 5.0,
                bounds: [14, 9, 27, 21],
                texture: TextureSpec {
                    seed: 6,
                    frequency: 0.08,
                    amplitude: 0.4,
                },
            }],
        };
        render(&spec).unwrap()
    }

    #[test]
    fn perfect_fit_is_nearly_stationary() {
        let rendered = small_rendered();
        let scene = TrainScene::from_rendered(&rendered).unwrap();
        // SSIM windows that touch the occluded strip keep a large error even
        // at the true depths, so the data term is checked with L1 alone
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            lambda_prior: 0.0,
            ..TrainConfig::box_scene()
        };
        let trainer = Trainer::new(&scene, cfg).unwrap();
        let mut table = trainer.init().unwrap();
        let conv = scene.convention;
        for (i, &z) in rendered.target.depth.data().iter().enumerate() {
            let l = logit(conv.depth_to_disparity(z));
            table.logit_mu[0][i] = l;
            table.logit_mu[1][i] = l;
        }
        for k in 0..2 {
            table.log_sigma[k].fill(LOG_SIGMA_RANGE.0);
        }
        let before = table.decode();
        let init_loss = trainer.evaluate(&trainer.init().unwrap(), None).unwrap().0;
        let mut momentum = Momentum::new(table.len());
        let rec = trainer.train_step(&mut table, &mut momentum, 0).unwrap();
        assert!(
            rec.l_mu < 1e-3 && rec.l_mu < 0.1 * init_loss.breakdown.l_mu,
            "{} vs {}",
            rec.l_mu,
            init_loss.breakdown.l_mu
        );
        let after = table.decode();
        let surf = &rendered.target.surface;
        // pixels beside the box edge include the strip the source cannot see
        let near_edge = |i: usize| {
            let x = i % 40;
            (x > 0 && surf[i - 1] != surf[i]) || (x + 1 < 40 && surf[i + 1] != surf[i])
        };
        let mut far = 0.0f64;
        let mut all = 0.0f64;
        for k in 0..2 {
            for i in 0..table.len() {
                let d = (before.mu[k][i] - after.mu[k][i]).abs();
                all = all.max(d);
                if !near_edge(i) {
                    far = far.max(d);
                }
            }
        }
        assert!(far < 1e-4, "means moved by {far}");
        assert!(all < 1e-3, "edge means moved by {all}");
    }

    #[test]
    fn static_scene_is_filtered() {
        let rendered = small_rendered();
        let target = rendered.target.color.clone();
        let still = SourceView {
            rig: CameraRig::identity(40.0, 40.0, 19.5, 14.5).unwrap(),
            image: target.clone(),
        };
        let scene = TrainScene::new(target, vec![still], rendered.spec.convention).unwrap();
        let trainer = Trainer::new(&scene, TrainConfig::default()).unwrap();
        let table = trainer.init().unwrap();
        let (_, decisions, _) = trainer.gradient(&table).unwrap();
        let kept = decisions.valid_count() as f64 / table.len() as f64;
        assert!(kept <= 0.01, "{kept}");
        let unmasked = Trainer::new(
            &scene,
            TrainConfig {
                automask: false,
                ..Default::default()
            },
        )
        .unwrap();
        let (_, decisions, _) = unmasked.gradient(&table).unwrap();
        assert!(decisions.valid_count() > table.len() / 2);
    }
}
