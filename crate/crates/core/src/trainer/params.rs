use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::VarianceMode;
use crate::types::{mode_select, ImageGrid, MixtureDisparity};

/// Logit that decodes to a mixture weight of exactly 1 in `f64`.
pub(crate) const FROZEN_ALPHA_LOGIT: f64 = 40.0;

/// Trainable logits stay within this range so decoded means never round to 0 or 1.
pub(crate) const LOGIT_LIMIT: f64 = 30.0;
/// Range of trainable log standard deviations.
pub(crate) const LOG_SIGMA_RANGE: (f64, f64) = (-13.8, 0.0);

const INIT_MU: [f64; 2] = [0.3, 0.35];
const INIT_SIGMA: f64 = 0.05;
const INIT_NOISE: f64 = 0.01;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Raw per-pixel parameters: mean logits, log standard deviations and the
/// mixture-weight logit. Constant variance modes read `global_log_sigma`
/// instead of the per-pixel planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTable {
    width: usize,
    height: usize,
    pub logit_mu: [Vec<f64>; 2],
    pub log_sigma: [Vec<f64>; 2],
    pub logit_alpha: Vec<f64>,
    pub global_log_sigma: [f64; 2],
    pub variance_mode: VarianceMode,
}

/// Per-pixel decoded mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedTable {
    pub width: usize,
    pub height: usize,
    pub mu: [Vec<f64>; 2],
    /// Disparity standard deviations.
    pub sigma: [Vec<f64>; 2],
    pub alpha: Vec<f64>,
}

pub fn init_params(
    width: usize,
    height: usize,
    seed: u64,
    variance_mode: VarianceMode,
) -> Result<ParamTable> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("parameter table must be non-empty"));
    }
    let n = width * height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plane = |center: f64| -> Vec<f64> {
        let c = logit(center);
        (0..n)
            .map(|_| c + rng.random_range(-INIT_NOISE..INIT_NOISE))
            .collect()
    };
    let logit_mu = [plane(INIT_MU[0]), plane(INIT_MU[1])];
    let ls = INIT_SIGMA.ln();
    Ok(ParamTable {
        width,
        height,
        logit_mu,
        log_sigma: [vec![ls; n], vec![ls; n]],
        logit_alpha: vec![0.0; n],
        global_log_sigma: [ls; 2],
        variance_mode,
    })
}

impl ParamTable {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn len(&self) -> usize {
        self.width * self.height
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Log standard deviation that component `k` uses at pixel `i`.
    pub fn effective_log_sigma(&self, k: usize, i: usize) -> f64 {
        match self.variance_mode {
            VarianceMode::PerPixel => self.log_sigma[k][i],
            VarianceMode::OneConstant => self.global_log_sigma[0],
            VarianceMode::TwoConstants => self.global_log_sigma[k],
        }
    }

    pub fn decode(&self) -> DecodedTable {
        let n = self.len();
        let mu = [0, 1].map(|k| {
            self.logit_mu[k]
                .iter()
                .map(|&l| sigmoid(l))
                .collect::<Vec<_>>()
        });
        let sigma = [0, 1].map(|k| {
            (0..n)
                .map(|i| self.effective_log_sigma(k, i).exp())
                .collect::<Vec<_>>()
        });
        let alpha = self.logit_alpha.iter().map(|&l| sigmoid(l)).collect();
        DecodedTable {
            width: self.width,
            height: self.height,
            mu,
            sigma,
            alpha,
        }
    }

    /// The five planes `logit_mu1, logit_mu2, log_sigma1, log_sigma2,
    /// logit_alpha`, with constant-mode variances written out per pixel.
    pub fn to_planes(&self) -> Result<Vec<ImageGrid>> {
        let (w, h, n) = (self.width, self.height, self.len());
        let ls = |k: usize| {
            (0..n)
                .map(|i| self.effective_log_sigma(k, i))
                .collect::<Vec<_>>()
        };
        [
            self.logit_mu[0].clone(),
            self.logit_mu[1].clone(),
            ls(0),
            ls(1),
            self.logit_alpha.clone(),
        ]
        .into_iter()
        .map(|p| ImageGrid::new(w, h, 1, p))
        .collect()
    }

    /// Inverse of [`ParamTable::to_planes`]; the result uses per-pixel variances.
    pub fn from_planes(planes: &[ImageGrid]) -> Result<Self> {
        if planes.len() != 5 {
            return Err(Error::invalid(format!(
                "parameter tables have 5 planes, got {}",
                planes.len()
            )));
        }
        let (w, h) = (planes[0].width(), planes[0].height());
        if planes
            .iter()
            .any(|p| p.width() != w || p.height() != h || p.channels() != 1)
        {
            return Err(Error::DimensionMismatch(
                "parameter planes differ in size".into(),
            ));
        }
        let v = |i: usize| planes[i].data().to_vec();
        Ok(Self {
            width: w,
            height: h,
            logit_mu: [v(0), v(1)],
            log_sigma: [v(2), v(3)],
            logit_alpha: v(4),
            global_log_sigma: [INIT_SIGMA.ln(); 2],
            variance_mode: VarianceMode::PerPixel,
        })
    }
}

impl DecodedTable {
    pub fn len(&self) -> usize {
        self.width * self.height
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mixture(&self, i: usize) -> Result<MixtureDisparity> {
        MixtureDisparity::new(
            self.mu[0][i],
            self.mu[1][i],
            self.sigma[0][i].powi(2),
            self.sigma[1][i].powi(2),
            self.alpha[i],
        )
    }

    /// Mode-selected disparity per pixel.
    pub fn selected_disparity(&self) -> Result<ImageGrid> {
        let data = (0..self.len())
            .map(|i| self.mixture(i).map(|m| mode_select(&m)))
            .collect::<Result<Vec<_>>>()?;
        ImageGrid::new(self.width, self.height, 1, data)
    }

    pub fn alpha_map(&self) -> Result<ImageGrid> {
        ImageGrid::new(self.width, self.height, 1, self.alpha.clone())
    }

    pub fn mean_map(&self, k: usize) -> Result<ImageGrid> {
        ImageGrid::new(self.width, self.height, 1, self.mu[k].clone())
    }

    /// Relative difference between the component means, `|mu1 - mu2| / max(mu1, mu2)`.
    pub fn separation_map(&self) -> Result<ImageGrid> {
        let data = (0..self.len())
            .map(|i| (self.mu[0][i] - self.mu[1][i]).abs() / self.mu[0][i].max(self.mu[1][i]))
            .collect();
        ImageGrid::new(self.width, self.height, 1, data)
    }
}
