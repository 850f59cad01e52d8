//! Domain types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {v}")))
    }
}

/// Per-pixel two-component mixture over normalized disparity.
///
/// `alpha` is the weight of component 2:
/// `p(d) = (1 - alpha) N(mu1, var1) + alpha N(mu2, var2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureDisparity {
    mu1: f64,
    mu2: f64,
    var1: f64,
    var2: f64,
    alpha: f64,
}

impl MixtureDisparity {
    pub fn new(mu1: f64, mu2: f64, var1: f64, var2: f64, alpha: f64) -> Result<Self> {
        for (name, v) in [
            ("mu1", mu1),
            ("mu2", mu2),
            ("var1", var1),
            ("var2", var2),
            ("alpha", alpha),
        ] {
            check_finite(name, v)?;
        }
        if !(mu1 > 0.0 && mu1 < 1.0 && mu2 > 0.0 && mu2 < 1.0) {
            return Err(Error::invalid(format!(
                "means must lie in (0,1), got {mu1}, {mu2}"
            )));
        }
        if var1 < 0.0 || var2 < 0.0 {
            return Err(Error::invalid("variances must be non-negative"));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!(
                "alpha must lie in [0,1], got {alpha}"
            )));
        }
        Ok(Self {
            mu1,
            mu2,
            var1,
            var2,
            alpha,
        })
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }
    pub fn mu2(&self) -> f64 {
        self.mu2
    }
    pub fn var1(&self) -> f64 {
        self.var1
    }
    pub fn var2(&self) -> f64 {
        self.var2
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn component(&self, k: usize) -> GaussianRV {
        match k {
            0 => GaussianRV {
                mean: self.mu1,
                var: self.var1,
            },
            _ => GaussianRV {
                mean: self.mu2,
                var: self.var2,
            },
        }
    }
}

/// Inference rule: the mean of the component favoured by the mixture weight,
/// never a blend. Ties (`alpha == 0.5`) go to component 2.
pub fn mode_select(m: &MixtureDisparity) -> f64 {
    if m.alpha < 0.5 {
        m.mu1
    } else {
        m.mu2
    }
}

/// A scalar normal random variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianRV {
    pub mean: f64,
    pub var: f64,
}

impl GaussianRV {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        check_finite("mean", mean)?;
        check_finite("var", var)?;
        if var < 0.0 {
            return Err(Error::invalid(format!(
                "variance must be non-negative, got {var}"
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Affine map between normalized disparity in (0,1) and metric inverse depth:
/// `1/depth = a * d + b` with `a = 1/min - 1/max`, `b = 1/max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConvention")]
pub struct DepthConvention {
    min_depth: f64,
    max_depth: f64,
}

#[derive(Deserialize)]
struct RawConvention {
    min_depth: f64,
    max_depth: f64,
}

impl TryFrom<RawConvention> for DepthConvention {
    type Error = Error;
    fn try_from(r: RawConvention) -> Result<Self> {
        DepthConvention::new(r.min_depth, r.max_depth)
    }
}

impl Default for DepthConvention {
    fn default() -> Self {
        Self {
            min_depth: 0.1,
            max_depth: 100.0,
        }
    }
}

impl DepthConvention {
    pub fn new(min_depth: f64, max_depth: f64) -> Result<Self> {
        check_finite("min_depth", min_depth)?;
        check_finite("max_depth", max_depth)?;
        if !(min_depth > 0.0 && min_depth < max_depth) {
            return Err(Error::invalid(format!(
                "depth bounds must satisfy 0 < min < max, got ({min_depth}, {max_depth})"
            )));
        }
        Ok(Self {
            min_depth,
            max_depth,
        })
    }

    pub fn min_depth(&self) -> f64 {
        self.min_depth
    }
    pub fn max_depth(&self) -> f64 {
        self.max_depth
    }

    /// Slope of the inverse-depth map.
    pub fn scale(&self) -> f64 {
        1.0 / self.min_depth - 1.0 / self.max_depth
    }

    /// Offset of the inverse-depth map.
    pub fn offset(&self) -> f64 {
        1.0 / self.max_depth
    }

    pub fn inverse_depth(&self, d: f64) -> f64 {
        self.scale() * d + self.offset()
    }

    /// Inverse of [`disparity_to_depth`]; the result is only in (0,1) for
    /// depths strictly inside the bounds.
    pub fn depth_to_disparity(&self, depth: f64) -> f64 {
        (1.0 / depth - self.offset()) / self.scale()
    }
}

pub fn disparity_to_depth(d: f64, conv: &DepthConvention) -> Result<f64> {
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::invalid(format!(
            "normalized disparity must lie in (0,1), got {d}"
        )));
    }
    Ok(1.0 / conv.inverse_depth(d))
}

/// Pinhole intrinsics plus the target-to-source transform
/// `X_src = R * X_tgt + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRig")]
pub struct CameraRig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Deserialize)]
struct RawRig {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<RawRig> for CameraRig {
    type Error = Error;
    fn try_from(r: RawRig) -> Result<Self> {
        CameraRig::new(r.fx, r.fy, r.cx, r.cy, r.rotation, r.translation)
    }
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl CameraRig {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    ) -> Result<Self> {
        for (name, v) in [("fx", fx), ("fy", fy), ("cx", cx), ("cy", cy)] {
            check_finite(name, v)?;
        }
        for v in rotation.iter().flatten().chain(translation.iter()) {
            check_finite("pose entry", *v)?;
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::invalid("rotation is not orthonormal (R^T R != I)"));
                }
            }
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Stereo pair with identical orientation and a baseline along x.
    pub fn rectified(fx: f64, fy: f64, cx: f64, cy: f64, tx: f64) -> Result<Self> {
        Self::new(fx, fy, cx, cy, IDENTITY, [tx, 0.0, 0.0])
    }

    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(fx, fy, cx, cy, IDENTITY, [0.0; 3])
    }

    /// The source-to-target rig `(R^T, -R^T t)` with the same intrinsics.
    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let mut rt = [[0.0; 3]; 3];
        for (i, row) in rt.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[j][i];
            }
        }
        let t = mat_vec(&rt, &self.translation);
        Self {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
            ..*self
        }
    }

    /// Rotation about an axis given as a unit vector, angle in radians.
    pub fn axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let k = 1.0 - c;
        [
            [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
            [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
            [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
        ]
    }

    /// Unit-depth ray through a pixel: `K^-1 [x, y, 1]`.
    pub fn ray(&self, x: f64, y: f64) -> [f64; 3] {
        [(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0]
    }
}

pub(crate) fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Row-major, channel-interleaved image of `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image must be non-empty"));
        }
        if channels == 0 {
            return Err(Error::invalid("image must have at least one channel"));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "data length {} != {width} x {height} x {channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image samples must be finite"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Color image: 1 or 3 channels with samples in [0,1].
    pub fn color(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "color images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("color samples must lie in [0,1]"));
        }
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
        .expect("non-empty finite fill")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Apply `f` to every sample.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ImageGrid> {
        ImageGrid::new(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// 3x3 box filter with clamped borders, per channel.
    pub fn box_blur3(&self) -> ImageGrid {
        let (w, h, ch) = (self.width, self.height, self.channels);
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut s = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                            let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                            s += self.at(xx, yy, c);
                        }
                    }
                    out[(y * w + x) * ch + c] = s / 9.0;
                }
            }
        }
        ImageGrid {
            width: w,
            height: h,
            channels: ch,
            data: out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn disparity_limits_and_midpoint() {
        let conv = DepthConvention::new(0.1, 100.0).unwrap();
        let near_zero = disparity_to_depth(1e-12, &conv).unwrap();
        let near_one = disparity_to_depth(1.0 - 1e-12, &conv).unwrap();
        assert!((near_zero - 100.0).abs() < 1e-6);
        assert!((near_one - 0.1).abs() < 1e-9);
        let mid = disparity_to_depth(0.5, &conv).unwrap();
        assert!((mid - 1.0 / (0.5 * 9.99 + 0.01)).abs() < 1e-15);
        assert!((mid - 0.19980).abs() < 1e-5);
        // dense monotonicity sweep
        let mut prev = f64::INFINITY;
        for i in 1..10_000 {
            let z = disparity_to_depth(i as f64 / 10_000.0, &conv).unwrap();
            assert!(z < prev);
            prev = z;
        }
    }

    #[test]
    fn disparity_rejects_out_of_range() {
        let conv = DepthConvention::default();
        for d in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(disparity_to_depth(d, &conv).is_err());
        }
        assert!(DepthConvention::new(10.0, 1.0).is_err());
        assert!(DepthConvention::new(0.0, 1.0).is_err());
        assert!(DepthConvention::new(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn mode_select_cases() {
        let m = MixtureDisparity::new(0.2, 0.8, 0.01, 0.01, 0.3).unwrap();
        assert_eq!(mode_select(&m), 0.2);
        let m = MixtureDisparity::new(0.2, 0.8, 0.01, 0.01, 0.5).unwrap();
        assert_eq!(mode_select(&m), 0.8);
    }

    #[test]
    fn constructors_reject_non_finite() {
        assert!(MixtureDisparity::new(f64::NAN, 0.5, 0.1, 0.1, 0.5).is_err());
        assert!(MixtureDisparity::new(0.5, 0.5, f64::INFINITY, 0.1, 0.5).is_err());
        assert!(MixtureDisparity::new(0.5, 0.5, 0.1, 0.1, 1.2).is_err());
        assert!(MixtureDisparity::new(0.0, 0.5, 0.1, 0.1, 0.5).is_err());
        assert!(GaussianRV::new(0.0, -1.0).is_err());
        assert!(GaussianRV::new(f64::NAN, 1.0).is_err());
        assert!(CameraRig::rectified(f64::NAN, 1.0, 0.0, 0.0, 0.1).is_err());
        assert!(CameraRig::rectified(-1.0, 1.0, 0.0, 0.0, 0.1).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraRig::new(1.0, 1.0, 0.0, 0.0, skew, [0.0; 3]).is_err());
        assert!(ImageGrid::new(2, 2, 1, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
        assert!(ImageGrid::color(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageGrid::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn rig_json_validates() {
        let bad = r#"{"fx":1,"fy":1,"cx":0,"cy":0,"rotation":[[2,0,0],[0,1,0],[0,0,1]],"translation":[0,0,0]}"#;
        assert!(serde_json::from_str::<CameraRig>(bad).is_err());
        let rig = CameraRig::rectified(100.0, 100.0, 10.0, 10.0, 0.2).unwrap();
        let back: CameraRig = serde_json::from_str(&serde_json::to_string(&rig).unwrap()).unwrap();
        assert_eq!(rig, back);
    }

    proptest! {
        #[test]
        fn mode_select_picks_a_mean(mu1 in 0.001f64..0.999, mu2 in 0.001f64..0.999, alpha in 0.0f64..=1.0) {
            let m = MixtureDisparity::new(mu1, mu2, 0.01, 0.02, alpha).unwrap();
            let s = mode_select(&m);
            prop_assert!(s == mu1 || s == mu2);
            // relabelled components select the same disparity away from the tie
            let swapped = MixtureDisparity::new(mu2, mu1, 0.02, 0.01, 1.0 - alpha).unwrap();
            if alpha != 0.5 {
                prop_assert_eq!(mode_select(&swapped), s);
            }
        }

        #[test]
        fn disparity_roundtrip(d in 1e-6f64..(1.0 - 1e-6), lo in 0.01f64..5.0, span in 1.0f64..500.0) {
            let conv = DepthConvention::new(lo, lo + span).unwrap();
            let z = disparity_to_depth(d, &conv).unwrap();
            prop_assert!(z > conv.min_depth() && z < conv.max_depth());
            prop_assert!((conv.depth_to_disparity(z) - d).abs() < 1e-12);
        }
    }
}
