//! Bilinear color interpolation and its exact spatial gradient.

use crate::geometry::PixelCoord;
use crate::real::Real;
use crate::types::ImageGrid;

/// Interpolated color plus per-channel partials with respect to the sample
/// position (color change per pixel).
#[derive(Clone, Debug, PartialEq)]
pub struct ColorSample {
    pub value: Vec<f64>,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
    /// The requested position was outside `[0, w-1] x [0, h-1]` and was
    /// clamped to the border.
    pub out_of_bounds: bool,
}

/// Per-channel result of the generic sampler.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Texel<T> {
    pub value: T,
    pub gx: T,
    pub gy: T,
}

/// Lower cell index and clamped coordinate along one axis. Positions on a
/// node use the cell to the right of it, except the last node which belongs
/// to the last cell.
fn cell<T: Real>(c: T, n: usize) -> (usize, T, bool) {
    let v = c.value();
    let max = (n - 1) as f64;
    let (c, oob) = if v < 0.0 {
        (T::cst(0.0), true)
    } else if v > max {
        (T::cst(max), true)
    } else {
        (c, false)
    };
    if n == 1 {
        return (0, T::cst(0.0), oob);
    }
    let i = (c.value().floor() as usize).min(n - 2);
    (i, c - T::cst(i as f64), oob)
}

/// Sample every channel of `img` at `(x, y)`; returns `true` when the point
/// was clamped.
pub(crate) fn sample_generic<T: Real>(img: &ImageGrid, x: T, y: T, out: &mut [Texel<T>]) -> bool {
    let (w, h) = (img.width(), img.height());
    let (x0, fx, oob_x) = cell(x, w);
    let (y0, fy, oob_y) = cell(y, h);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let one = T::cst(1.0);
    let (gx_, gy_) = (one - fx, one - fy);
    for (c, t) in out.iter_mut().enumerate().take(img.channels()) {
        let c00 = img.at(x0, y0, c);
        let c10 = img.at(x1, y0, c);
        let c01 = img.at(x0, y1, c);
        let c11 = img.at(x1, y1, c);
        let value = gx_ * (gy_.scale(c00) + fy.scale(c01)) + fx * (gy_.scale(c10) + fy.scale(c11));
        let gx = gy_.scale(c10 - c00) + fy.scale(c11 - c01);
        let gy = gx_.scale(c01 - c00) + fx.scale(c11 - c10);
        // clamped axes have zero positional derivative
        *t = Texel {
            value,
            gx: if oob_x { T::cst(0.0) } else { gx },
            gy: if oob_y { T::cst(0.0) } else { gy },
        };
    }
    oob_x || oob_y
}

pub fn bilinear_sample(img: &ImageGrid, p: PixelCoord) -> ColorSample {
    let mut texels = vec![
        Texel {
            value: 0.0,
            gx: 0.0,
            gy: 0.0
        };
        img.channels()
    ];
    let out_of_bounds = sample_generic(img, p.x, p.y, &mut texels);
    ColorSample {
        value: texels.iter().map(|t| t.value).collect(),
        grad_x: texels.iter().map(|t| t.gx).collect(),
        grad_y: texels.iter().map(|t| t.gy).collect(),
        out_of_bounds,
    }
}
