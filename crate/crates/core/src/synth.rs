//! Synthetic two-view scenes: a textured background plane and fronto-parallel
//! textured rectangles, rendered into the target and source cameras with a
//! z-buffer and exact depth.
//!
//! Surfaces are parametrized by target-image coordinates, so a texture
//! value seen in the source view is the target value at the corresponding
//! pixel. Textures are sums of low-frequency sinusoids, which keeps bilinear
//! resampling error well below one gray level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reproject, PixelCoord};
use crate::sampling::bilinear_sample;
use crate::types::{mat_vec, CameraRig, DepthConvention, ImageGrid};

/// Rendered textures with a smaller per-channel variance trigger a warning.
pub const MIN_TEXTURE_VARIANCE: f64 = 1e-3;

const WAVES_PER_CHANNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    pub seed: u64,
    /// Highest spatial frequency in cycles per pixel.
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    /// Peak deviation from mid-gray, summed over waves.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_frequency() -> f64 {
    0.02
}
fn default_amplitude() -> f64 {
    0.3
}

impl TextureSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            frequency: default_frequency(),
            amplitude: default_amplitude(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub depth: f64,
    pub texture: TextureSpec,
}

/// Fronto-parallel rectangle covering target pixels `x0..x1` by `y0..y1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub depth: f64,
    /// `[x0, y0, x1, y1]`, half-open, in target pixels.
    pub bounds: [usize; 4],
    pub texture: TextureSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub rig: CameraRig,
    #[serde(default)]
    pub convention: DepthConvention,
    pub background: Background,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Target,
    Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub color: ImageGrid,
    pub depth: ImageGrid,
    /// 0 for the background, `i + 1` for object `i`.
    pub surface: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedScene {
    pub spec: SceneSpec,
    pub target: RenderedView,
    pub source: RenderedView,
    pub warnings: Vec<String>,
}

/// Where a pixel ray lands: the visible surface, the target-image
/// coordinates of the hit point, and its depth in the viewing camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    pub surface: u32,
    pub target_xy: [f64; 2],
    pub depth: f64,
}

#[derive(Clone, Copy, Debug)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

#[derive(Clone, Debug)]
struct Texture {
    channels: [[Wave; WAVES_PER_CHANNEL]; 3],
}

impl Texture {
    fn new(spec: &TextureSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let amp = spec.amplitude / WAVES_PER_CHANNEL as f64;
        let mut wave = || {
            let f = spec.frequency * rng.random_range(0.5..1.0);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let tau = std::f64::consts::TAU;
            Wave {
                kx: tau * f * theta.cos(),
                ky: tau * f * theta.sin(),
                phase: rng.random_range(0.0..tau),
                amp,
            }
        };
        let mut ch = || [wave(), wave(), wave()];
        Self {
            channels: [ch(), ch(), ch()],
        }
    }

    fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        self.channels.map(|waves| {
            0.5 + waves
                .iter()
                .map(|w| w.amp * (w.kx * x + w.ky * y + w.phase).sin())
                .sum::<f64>()
        })
    }
}

impl SceneSpec {
    /// A box at depth 5 in front of a plane at depth 10, seen by a
    /// horizontal stereo pair at 192x128. Disparities are exactly 1 px
    /// (background) and 2 px (box), so ground-truth correspondences land on
    /// pixel centers and bilinear lookups never blend across the box edge.
    pub fn default_box() -> Self {
        Self {
            width: 192,
            height: 128,
            rig: CameraRig::rectified(100.0, 100.0, 95.5, 63.5, 0.1).expect("valid rig"),
            convention: DepthConvention::new(3.0, 60.0).expect("valid convention"),
            background: Background {
                depth: 10.0,
                texture: TextureSpec::new(1),
            },
            objects: vec![SceneObject {
                depth: 5.0,
                bounds: [72, 40, 120, 88],
                texture: TextureSpec::new(2),
            }],
        }
    }

    fn surface_depth(&self, id: u32) -> f64 {
        match id {
            0 => self.background.depth,
            i => self.objects[i as usize - 1].depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::invalid("scene must be at least 3x3 pixels"));
        }
        let conv = &self.convention;
        let inside = |z: f64| z > conv.min_depth() && z < conv.max_depth();
        let check_tex = |t: &TextureSpec, what: &str| {
            if !(t.frequency > 0.0
                && t.frequency <= 0.5
                && t.amplitude >= 0.0
                && t.amplitude <= 0.5)
            {
                return Err(Error::invalid(format!(
                    "{what}: texture frequency must be in (0, 0.5] and amplitude in [0, 0.5]"
                )));
            }
            Ok(())
        };
        if !inside(self.background.depth) {
            return Err(Error::invalid(format!(
                "background.depth {} is outside the depth convention ({}, {})",
                self.background.depth,
                conv.min_depth(),
                conv.max_depth()
            )));
        }
        check_tex(&self.background.texture, "background")?;
        for (i, o) in self.objects.iter().enumerate() {
            let [x0, y0, x1, y1] = o.bounds;
            if !(x0 < x1 && y0 < y1 && x1 <= self.width && y1 <= self.height) {
                return Err(Error::invalid(format!(
                    "objects[{i}].bounds {:?} must be a non-empty region inside the image",
                    o.bounds
                )));
            }
            if !inside(o.depth) {
                return Err(Error::invalid(format!(
                    "objects[{i}].depth {} is outside the depth convention",
                    o.depth
                )));
            }
            if o.depth >= self.background.depth {
                return Err(Error::invalid(format!(
                    "objects[{i}].depth {} must be less than background.depth {} (objects occlude the background)",
                    o.depth, self.background.depth
                )));
            }
            check_tex(&o.texture, &format!("objects[{i}]"))?;
            let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
                .map(|(x, y)| (x as f64 - 0.5, y as f64 - 0.5));
            let d = conv.depth_to_disparity(o.depth);
            let mut seen = Vec::with_capacity(4);
            for (x, y) in corners {
                seen.push(reproject(PixelCoord { x, y }, d, &self.rig, conv)?);
            }
            let lo_x = seen.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
            let hi_x = seen.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            let lo_y = seen.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            let hi_y = seen.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            if hi_x < -0.5
                || lo_x > self.width as f64 - 0.5
                || hi_y < -0.5
                || lo_y > self.height as f64 - 0.5
            {
                return Err(Error::invalid(format!(
                    "objects[{i}] leaves the source view entirely"
                )));
            }
        }
        Ok(())
    }

    fn covers(&self, i: usize, tx: f64, ty: f64) -> bool {
        let [x0, y0, x1, y1] = self.objects[i].bounds;
        tx >= x0 as f64 - 0.5
            && tx < x1 as f64 - 0.5
            && ty >= y0 as f64 - 0.5
            && ty < y1 as f64 - 0.5
    }

    /// Nearest surface along the ray through pixel `(x, y)` of `view`.
    pub fn trace(&self, view: View, x: f64, y: f64) -> Option<SurfaceHit> {
        let rig = &self.rig;
        // ray origin and direction in the target frame; the viewing depth of
        // a point is `lambda` times `depth_per_lambda`
        let (origin, dir) = match view {
            View::Target => ([0.0; 3], rig.ray(x, y)),
            View::Source => {
                let inv = rig.inverse();
                (inv.translation, mat_vec(&inv.rotation, &rig.ray(x, y)))
            }
        };
        let project = |z: f64| -> Option<(f64, [f64; 2])> {
            if dir[2].abs() < 1e-12 {
                return None;
            }
            let lambda = (z - origin[2]) / dir[2];
            if lambda <= 0.0 {
                return None;
            }
            let px = origin[0] + lambda * dir[0];
            let py = origin[1] + lambda * dir[1];
            Some((lambda, [rig.fx * px / z + rig.cx, rig.fy * py / z + rig.cy]))
        };
        let mut best: Option<SurfaceHit> = None;
        for (i, o) in self.objects.iter().enumerate() {
            if let Some((lambda, t)) = project(o.depth) {
                if self.covers(i, t[0], t[1]) && best.is_none_or(|b| lambda < b.depth) {
                    best = Some(SurfaceHit {
                        surface: i as u32 + 1,
                        target_xy: t,
                        depth: lambda,
                    });
                }
            }
        }
        if best.is_none() {
            if let Some((lambda, t)) = project(self.background.depth) {
                best = Some(SurfaceHit {
                    surface: 0,
                    target_xy: t,
                    depth: lambda,
                });
            }
        }
        best
    }
}

fn render_view(spec: &SceneSpec, textures: &[Texture], view: View) -> Result<RenderedView> {
    let (w, h) = (spec.width, spec.height);
    let mut color = vec![0.0; w * h * 3];
    let mut depth = vec![0.0; w * h];
    let mut surface = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let hit = spec.trace(view, x as f64, y as f64).ok_or_else(|| {
                Error::invalid(format!("{view:?} pixel ({x}, {y}) sees no surface; the background must fill both views"))
            })?;
            let c = textures[hit.surface as usize].eval(hit.target_xy[0], hit.target_xy[1]);
            let i = y * w + x;
            color[3 * i..3 * i + 3].copy_from_slice(&c.map(|v| v.clamp(0.0, 1.0)));
            // the target sees each plane at its nominal depth exactly
            depth[i] = match view {
                View::Target => spec.surface_depth(hit.surface),
                View::Source => hit.depth,
            };
            surface[i] = hit.surface;
        }
    }
    Ok(RenderedView {
        color: ImageGrid::color(w, h, 3, color)?,
        depth: ImageGrid::new(w, h, 1, depth)?,
        surface,
    })
}

pub fn render(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let textures: Vec<Texture> = std::iter::once(&spec.background.texture)
        .chain(spec.objects.iter().map(|o| &o.texture))
        .map(Texture::new)
        .collect();
    let target = render_view(spec, &textures, View::Target)?;
    let source = render_view(spec, &textures, View::Source)?;
    let mut warnings = Vec::new();
    for c in 0..3 {
        let n = target.color.len_pixels() as f64;
        let vals = (0..target.color.len_pixels()).map(|i| target.color.data()[3 * i + c]);
        let mean = vals.clone().sum::<f64>() / n;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var < MIN_TEXTURE_VARIANCE {
            let msg = format!(
                "target channel {c} has texture variance {var:.2e}; photometric matching will be poorly constrained"
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(RenderedScene {
        spec: spec.clone(),
        target,
        source,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpCheck {
    pub max_error: f64,
    pub checked_pixels: usize,
    pub excluded_pixels: usize,
}

/// Warp the source into the target with ground-truth depth and report the
/// largest color difference. Pixels whose bilinear support leaves the image
/// or touches a different surface in the source (occlusions and surface
/// borders) are excluded.
pub fn warp_consistency_check(scene: &RenderedScene) -> Result<WarpCheck> {
    let spec = &scene.spec;
    let (w, h) = (spec.width, spec.height);
    let (mut max_error, mut checked, mut excluded) = (0.0f64, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let id = scene.target.surface[i];
            let d = spec
                .convention
                .depth_to_disparity(scene.target.depth.data()[i]);
            let p = match reproject(
                PixelCoord {
                    x: x as f64,
                    y: y as f64,
                },
                d,
                &spec.rig,
                &spec.convention,
            ) {
                Ok(p) => p,
                Err(_) => {
                    excluded += 1;
                    continue;
                }
            };
            let (x0, y0) = (p.x.floor(), p.y.floor());
            let inside =
                x0 >= 0.0 && y0 >= 0.0 && x0 + 1.0 <= (w - 1) as f64 && y0 + 1.0 <= (h - 1) as f64;
            let same = inside
                && [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|&(dx, dy)| {
                    scene.source.surface[(y0 as usize + dy) * w + x0 as usize + dx] == id
                });
            if !same {
                excluded += 1;
                continue;
            }
            let s = bilinear_sample(&scene.source.color, p);
            for (c, v) in s.value.iter().enumerate() {
                max_error = max_error.max((v - scene.target.color.at(x, y, c)).abs());
            }
            checked += 1;
        }
    }
    Ok(WarpCheck {
        max_error,
        checked_pixels: checked,
        excluded_pixels: excluded,
    })
}
