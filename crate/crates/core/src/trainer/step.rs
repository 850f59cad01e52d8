//! Forward pass, frozen decisions and exact parameter gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PixelCoord;
use crate::loss::{
    competitive_weights, error_moments, CompetitiveWeights, EdgeWeights, ErrorDistribution,
    LossBreakdown, LossWeights, ALPHA_EPS, CENTER,
};
use crate::propagation::{color_moments, ColorMoment};
use crate::real::{Dual, Real};
use crate::trainer::params::{DecodedTable, ParamTable};
use crate::trainer::TrainScene;

/// Added to the error variance before the square root so that its
/// derivative stays finite where the variance vanishes.
pub(crate) const SIGMA_E_EPS: f64 = 1e-12;

const MAX_CHANNELS: usize = 4;

/// One component warped by one source: per-pixel color, color slope with
/// respect to disparity, and the out-of-bounds flag.
struct Warped {
    value: Vec<f64>,
    slope: Vec<f64>,
    oob: Vec<bool>,
}

/// Everything held constant while differentiating one step: the source
/// chosen per component, the competitive weights, the selected component
/// and the pixels that take part in the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Decisions {
    pub source: Vec<[Option<usize>; 2]>,
    pub weights: Vec<CompetitiveWeights>,
    pub selected: Vec<usize>,
    pub valid: Vec<bool>,
}

impl Decisions {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Options that change the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub lambda_prior: f64,
    pub baseline: bool,
    pub automask: bool,
}

impl Objective {
    fn components(&self) -> &'static [usize] {
        if self.baseline {
            &[1]
        } else {
            &[0, 1]
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    /// Quadratic neighbor prior on the mean maps (zero weight by default).
    pub l_prior: f64,
    /// `breakdown.total + lambda_prior * l_prior`.
    pub total: f64,
}

/// Gradient of the total loss with respect to every raw parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub logit_mu: [Vec<f64>; 2],
    pub log_sigma: [Vec<f64>; 2],
    pub logit_alpha: Vec<f64>,
    pub global_log_sigma: [f64; 2],
}

impl Gradient {
    fn zeros(n: usize) -> Self {
        Self {
            logit_mu: [vec![0.0; n], vec![0.0; n]],
            log_sigma: [vec![0.0; n], vec![0.0; n]],
            logit_alpha: vec![0.0; n],
            global_log_sigma: [0.0; 2],
        }
    }
}

/// Static per-scene data: target windows, identity errors, edge weights.
pub(crate) struct SceneCache {
    target_windows: Vec<f64>,
    identity_error: Vec<f64>,
    edge_weights: EdgeWeights,
}

fn window_index(w: usize, h: usize, x: usize, y: usize, j: usize) -> usize {
    let xx = (x as i64 + (j % 3) as i64 - 1).clamp(0, w as i64 - 1) as usize;
    let yy = (y as i64 + (j / 3) as i64 - 1).clamp(0, h as i64 - 1) as usize;
    yy * w + xx
}

fn gather_window(
    values: &[f64],
    ch: usize,
    w: usize,
    h: usize,
    x: usize,
    y: usize,
    out: &mut [f64],
) {
    for j in 0..9 {
        let q = window_index(w, h, x, y, j);
        out[j * ch..(j + 1) * ch].copy_from_slice(&values[q * ch..(q + 1) * ch]);
    }
}

impl SceneCache {
    pub fn new(scene: &TrainScene, weights: &LossWeights) -> Self {
        let t = &scene.target;
        let (w, h, ch) = (t.width(), t.height(), t.channels());
        let n = w * h;
        let mut target_windows = vec![0.0; n * 9 * ch];
        for (i, win) in target_windows.chunks_exact_mut(9 * ch).enumerate() {
            gather_window(t.data(), ch, w, h, i % w, i / w, win);
        }
        let zero = vec![0.0; ch];
        let identity_error = (0..n)
            .map(|i| {
                let mut win = vec![0.0; 9 * ch];
                scene
                    .sources
                    .iter()
                    .map(|s| {
                        gather_window(s.image.data(), ch, w, h, i % w, i / w, &mut win);
                        let tw = &target_windows[i * 9 * ch..(i + 1) * 9 * ch];
                        error_moments(&win, tw, &zero, ch, &weights.photometric).0
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        Self {
            target_windows,
            identity_error,
            edge_weights: EdgeWeights::new(t),
        }
    }
}

fn warp_component(scene: &TrainScene, src: usize, mu: &[f64], sigma: &[f64]) -> Warped {
    let (w, ch) = (scene.target.width(), scene.target.channels());
    let s = &scene.sources[src];
    let rows: Vec<(Vec<f64>, Vec<f64>, bool)> = (0..mu.len())
        .into_par_iter()
        .map(|i| {
            let p = PixelCoord {
                x: (i % w) as f64,
                y: (i / w) as f64,
            };
            let mut m = [ColorMoment {
                mean: 0.0,
                var: 0.0,
                slope: 0.0,
            }; MAX_CHANNELS];
            match color_moments(
                p,
                mu[i],
                sigma[i] * sigma[i],
                &s.rig,
                &scene.convention,
                &s.image,
                &mut m[..ch],
            ) {
                Ok(oob) => (
                    m[..ch].iter().map(|c| c.mean).collect(),
                    m[..ch].iter().map(|c| c.slope).collect(),
                    oob,
                ),
                // behind the source camera: nothing to sample
                Err(_) => (vec![0.0; ch], vec![0.0; ch], true),
            }
        })
        .collect();
    let mut out = Warped {
        value: Vec::with_capacity(mu.len() * ch),
        slope: Vec::with_capacity(mu.len() * ch),
        oob: Vec::new(),
    };
    for (v, s, o) in rows {
        out.value.extend(v);
        out.slope.extend(s);
        out.oob.push(o);
    }
    out
}

fn component_errors(
    scene: &TrainScene,
    cache: &SceneCache,
    warped: &Warped,
    sigma: &[f64],
    obj: &Objective,
) -> Vec<ErrorDistribution> {
    let t = &scene.target;
    let (w, h, ch) = (t.width(), t.height(), t.channels());
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            if warped.oob[i] {
                return ErrorDistribution::masked();
            }
            let mut win = [0.0; 9 * MAX_CHANNELS];
            gather_window(&warped.value, ch, w, h, i % w, i / w, &mut win[..9 * ch]);
            let var: Vec<f64> = (0..ch)
                .map(|c| (warped.slope[i * ch + c] * sigma[i]).powi(2))
                .collect();
            let tw = &cache.target_windows[i * 9 * ch..(i + 1) * 9 * ch];
            let (mu, var) = error_moments(&win[..9 * ch], tw, &var, ch, &obj.weights.photometric);
            ErrorDistribution {
                mu,
                var,
                masked: false,
            }
        })
        .collect()
}

fn sigma_e<T: Real>(var: T) -> T {
    (var + T::cst(SIGMA_E_EPS)).sqrt()
}

/// Warps and error distributions of every active component and source.
struct Pass {
    decoded: DecodedTable,
    warped: Vec<Vec<Warped>>,
    errors: Vec<Vec<Vec<ErrorDistribution>>>,
}

fn run_pass(table: &ParamTable, scene: &TrainScene, cache: &SceneCache, obj: &Objective) -> Pass {
    let decoded = table.decode();
    let mut warped: Vec<Vec<Warped>> = vec![Vec::new(), Vec::new()];
    let mut errors: Vec<Vec<Vec<ErrorDistribution>>> = vec![Vec::new(), Vec::new()];
    for &k in obj.components() {
        for s in 0..scene.sources.len() {
            let wk = warp_component(scene, s, &decoded.mu[k], &decoded.sigma[k]);
            errors[k].push(component_errors(scene, cache, &wk, &decoded.sigma[k], obj));
            warped[k].push(wk);
        }
    }
    Pass {
        decoded,
        warped,
        errors,
    }
}

fn best_source(errs: &[Vec<ErrorDistribution>], i: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (s, e) in errs.iter().enumerate() {
        let e = &e[i];
        if !e.masked && best.is_none_or(|(_, m)| e.mu < m) {
            best = Some((s, e.mu));
        }
    }
    best.map(|b| b.0)
}

fn decide(pass: &Pass, cache: &SceneCache, obj: &Objective) -> Decisions {
    let n = pass.decoded.len();
    let mut d = Decisions {
        source: vec![[None, None]; n],
        weights: vec![CompetitiveWeights { w1: 0.0, w2: 1.0 }; n],
        selected: vec![1; n],
        valid: vec![false; n],
    };
    for i in 0..n {
        let mut src = [None, None];
        for &k in obj.components() {
            src[k] = best_source(&pass.errors[k], i);
        }
        let err = |k: usize| {
            src[k]
                .map(|s| pass.errors[k][s][i])
                .unwrap_or_else(ErrorDistribution::masked)
        };
        let w = match competitive_weights(&err(0), &err(1)) {
            Ok(w) => w,
            Err(_) => continue,
        };
        let sel = w.selected();
        let keep = !obj.automask || err(sel).mu < cache.identity_error[i];
        d.source[i] = src;
        d.weights[i] = w;
        d.selected[i] = sel;
        d.valid[i] = keep;
    }
    d
}

fn alpha_term(alpha: f64, w: &CompetitiveWeights) -> (f64, f64) {
    // value and derivative with respect to the alpha logit
    let a = alpha.clamp(ALPHA_EPS, 1.0 - ALPHA_EPS);
    let value = -(w.w1 * (1.0 - a).ln() + w.w2 * a.ln());
    let grad = if a == alpha { alpha - w.w2 } else { 0.0 };
    (value, grad)
}

/// Quadratic differences between 4-neighbors, averaged over pairs, and the
/// gradient with respect to each sample.
fn prior_and_grad(map: &[f64], w: usize, h: usize) -> (f64, Vec<f64>) {
    let pairs = (w.saturating_sub(1) * h + w * h.saturating_sub(1)).max(1) as f64;
    let mut grad = vec![0.0; map.len()];
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for (ok, j) in [(x + 1 < w, i + 1), (y + 1 < h, i + w)] {
                if ok {
                    let diff = map[i] - map[j];
                    sum += diff * diff;
                    grad[i] += 2.0 * diff / pairs;
                    grad[j] -= 2.0 * diff / pairs;
                }
            }
        }
    }
    (sum / pairs, grad)
}

fn regularizers(
    decoded: &DecodedTable,
    cache: &SceneCache,
    obj: &Objective,
) -> (f64, f64, [Vec<f64>; 2]) {
    let (w, h) = (decoded.width, decoded.height);
    let mut l_smooth = 0.0;
    let mut l_prior = 0.0;
    let mut grads = [vec![0.0; decoded.len()], vec![0.0; decoded.len()]];
    for &k in obj.components() {
        let (s, gs) = cache.edge_weights.loss_and_grad(&decoded.mu[k]);
        l_smooth += s;
        let (p, gp) = prior_and_grad(&decoded.mu[k], w, h);
        l_prior += p;
        for (i, g) in grads[k].iter_mut().enumerate() {
            *g = obj.weights.lambda_s * gs[i] + obj.lambda_prior * gp[i];
        }
    }
    (l_smooth, l_prior, grads)
}

fn evaluate_pass(
    pass: &Pass,
    decisions: &Decisions,
    cache: &SceneCache,
    obj: &Objective,
) -> Evaluation {
    let (mut mu, mut sig, mut al) = (0.0, 0.0, 0.0);
    let n_valid = decisions.valid_count();
    for i in 0..pass.decoded.len() {
        if !decisions.valid[i] {
            continue;
        }
        let k = decisions.selected[i];
        let Some(s) = decisions.source[i][k] else {
            continue;
        };
        let e = pass.errors[k][s][i];
        mu += e.mu;
        sig += (sigma_e(e.var) - e.mu).powi(2);
        if !obj.baseline {
            al += alpha_term(pass.decoded.alpha[i], &decisions.weights[i]).0;
        }
    }
    let (l_smooth, l_prior, _) = regularizers(&pass.decoded, cache, obj);
    let inv = if n_valid > 0 {
        1.0 / n_valid as f64
    } else {
        0.0
    };
    let breakdown = LossBreakdown::compose(
        mu * inv,
        sig * inv,
        al * inv,
        l_smooth,
        n_valid,
        &obj.weights,
    );
    Evaluation {
        breakdown,
        l_prior,
        total: breakdown.total + obj.lambda_prior * l_prior,
    }
}

/// Slots 0..9: window means (logit scale), slot 9: log sigma of the center.
type D = Dual<10>;

/// Per-pixel photometric contribution `mu_E + (sigma_E - mu_E)^2` with its
/// derivatives.
fn pixel_gradient(
    i: usize,
    k: usize,
    s: usize,
    pass: &Pass,
    scene: &TrainScene,
    cache: &SceneCache,
    obj: &Objective,
) -> Result<D> {
    let t = &scene.target;
    let (w, h, ch) = (t.width(), t.height(), t.channels());
    let (x, y) = (i % w, i / w);
    let warped = &pass.warped[k][s];
    let mu = &pass.decoded.mu[k];
    let zero = D::constant(0.0);
    let mut win = [zero; 9 * MAX_CHANNELS];
    for j in 0..9 {
        if j == CENTER {
            continue;
        }
        let q = window_index(w, h, x, y, j);
        let dmu = mu[q] * (1.0 - mu[q]);
        for c in 0..ch {
            win[j * ch + c] =
                D::seeded(warped.value[q * ch + c], j, warped.slope[q * ch + c] * dmu);
        }
    }
    let m = mu[i];
    let sigma = pass.decoded.sigma[k][i];
    let d = D::seeded(m, CENTER, m * (1.0 - m));
    let var = D::seeded(sigma * sigma, 9, 2.0 * sigma * sigma);
    let src = &scene.sources[s];
    let mut moments = [ColorMoment {
        mean: zero,
        var: zero,
        slope: zero,
    }; MAX_CHANNELS];
    color_moments(
        PixelCoord {
            x: x as f64,
            y: y as f64,
        },
        d,
        var,
        &src.rig,
        &scene.convention,
        &src.image,
        &mut moments[..ch],
    )?;
    let mut center_var = [zero; MAX_CHANNELS];
    for c in 0..ch {
        win[CENTER * ch + c] = moments[c].mean;
        center_var[c] = moments[c].var;
    }
    let tw = &cache.target_windows[i * 9 * ch..(i + 1) * 9 * ch];
    let (e_mu, e_var) = error_moments(
        &win[..9 * ch],
        tw,
        &center_var[..ch],
        ch,
        &obj.weights.photometric,
    );
    Ok(e_mu + (sigma_e(e_var) - e_mu).square())
}

fn gradient(
    table: &ParamTable,
    pass: &Pass,
    decisions: &Decisions,
    scene: &TrainScene,
    cache: &SceneCache,
    obj: &Objective,
) -> Result<Gradient> {
    let n = pass.decoded.len();
    let w = scene.target.width();
    let n_valid = decisions.valid_count();
    let mut g = Gradient::zeros(n);
    let inv = if n_valid > 0 {
        1.0 / n_valid as f64
    } else {
        0.0
    };
    let per_pixel: Vec<Option<(usize, usize, D)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !decisions.valid[i] {
                return Ok(None);
            }
            let k = decisions.selected[i];
            let Some(s) = decisions.source[i][k] else {
                return Ok(None);
            };
            Ok(Some((
                i,
                k,
                pixel_gradient(i, k, s, pass, scene, cache, obj)?,
            )))
        })
        .collect::<Result<_>>()?;
    // scatter in pixel order so the sums do not depend on scheduling
    for (i, k, d) in per_pixel.into_iter().flatten() {
        let (x, y) = (i % w, i / w);
        if !d.v.is_finite() || d.d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                x,
                y,
            });
        }
        for j in 0..9 {
            let q = window_index(w, scene.target.height(), x, y, j);
            g.logit_mu[k][q] += d.d[j] * inv;
        }
        match table.variance_mode {
            crate::loss::VarianceMode::PerPixel => g.log_sigma[k][i] += d.d[9] * inv,
            crate::loss::VarianceMode::OneConstant => g.global_log_sigma[0] += d.d[9] * inv,
            crate::loss::VarianceMode::TwoConstants => g.global_log_sigma[k] += d.d[9] * inv,
        }
        if !obj.baseline {
            let (_, ga) = alpha_term(pass.decoded.alpha[i], &decisions.weights[i]);
            g.logit_alpha[i] += obj.weights.lambda_alpha * ga * inv;
        }
    }
    let (_, _, reg) = regularizers(&pass.decoded, cache, obj);
    for &k in obj.components() {
        for (i, r) in reg[k].iter().enumerate() {
            let m = pass.decoded.mu[k][i];
            g.logit_mu[k][i] += r * m * (1.0 - m);
        }
    }
    Ok(g)
}

/// Loss of `table`, with decisions recomputed or held fixed.
pub(crate) fn evaluate(
    table: &ParamTable,
    scene: &TrainScene,
    cache: &SceneCache,
    obj: &Objective,
    frozen: Option<&Decisions>,
) -> (Evaluation, Decisions) {
    let pass = run_pass(table, scene, cache, obj);
    let decisions = frozen.cloned().unwrap_or_else(|| decide(&pass, cache, obj));
    (evaluate_pass(&pass, &decisions, cache, obj), decisions)
}

pub(crate) fn evaluate_with_gradient(
    table: &ParamTable,
    scene: &TrainScene,
    cache: &SceneCache,
    obj: &Objective,
) -> Result<(Evaluation, Decisions, Gradient)> {
    let pass = run_pass(table, scene, cache, obj);
    let decisions = decide(&pass, cache, obj);
    let eval = evaluate_pass(&pass, &decisions, cache, obj);
    if !eval.total.is_finite() {
        let i = (0..pass.decoded.len())
            .find(|&i| {
                decisions.valid[i]
                    && !pass.errors[decisions.selected[i]]
                        .iter()
                        .all(|e| e[i].mu.is_finite())
            })
            .unwrap_or(0);
        let w = scene.target.width();
        return Err(Error::NonFinite {
            what: "loss",
            x: i % w,
            y: i / w,
        });
    }
    let grad = gradient(table, &pass, &decisions, scene, cache, obj)?;
    Ok((eval, decisions, grad))
}
