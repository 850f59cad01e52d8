//! Target-pixel + disparity to source-pixel reprojection.
//!
//! Back-project at `depth = 1 / (a d + b)`, apply `X_src = R X + t`, project
//! with the rig intrinsics. Writing the transformed point scaled by the
//! inverse depth `s = a d + b` gives `u = R K^-1 [x y 1]^T + t s`, so the
//! source pixel is `fx u_x / u_z + cx` and its derivative with respect to the
//! normalized disparity is `a fx (t_x u_z - u_x t_z) / u_z^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::types::{mat_vec, CameraRig, DepthConvention};

/// Smallest source-camera depth accepted as a valid warp, in scene units.
pub const MIN_SOURCE_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Derivative of the source pixel position with respect to normalized
/// disparity, in pixels per unit disparity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprojJacobian {
    pub dx_dd: f64,
    pub dy_dd: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Warp<T> {
    pub x: T,
    pub y: T,
    pub dx_dd: T,
    pub dy_dd: T,
    pub source_depth: T,
}

pub(crate) fn warp<T: Real>(
    p: PixelCoord,
    d: T,
    rig: &CameraRig,
    conv: &DepthConvention,
) -> Result<Warp<T>> {
    let a = conv.scale();
    let s = d.scale(a) + T::cst(conv.offset());
    let q = mat_vec(&rig.rotation, &rig.ray(p.x, p.y));
    let t = rig.translation;
    let ux = T::cst(q[0]) + s.scale(t[0]);
    let uy = T::cst(q[1]) + s.scale(t[1]);
    let uz = T::cst(q[2]) + s.scale(t[2]);
    let source_depth = uz / s;
    let z = source_depth.value();
    if !(z > MIN_SOURCE_DEPTH) {
        return Err(Error::NonPositiveSourceDepth { depth: z });
    }
    let inv_z = T::cst(1.0) / uz;
    let x = (ux * inv_z).scale(rig.fx) + T::cst(rig.cx);
    let y = (uy * inv_z).scale(rig.fy) + T::cst(rig.cy);
    let inv_z2 = inv_z * inv_z;
    let dx_dd = ((uz.scale(t[0]) - ux.scale(t[2])) * inv_z2).scale(a * rig.fx);
    let dy_dd = ((uz.scale(t[1]) - uy.scale(t[2])) * inv_z2).scale(a * rig.fy);
    Ok(Warp {
        x,
        y,
        dx_dd,
        dy_dd,
        source_depth,
    })
}

fn check_disparity(d: f64) -> Result<()> {
    if d > 0.0 && d < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "normalized disparity must lie in (0,1), got {d}"
        )))
    }
}

/// Continuous source-view coordinates of target pixel `p` at disparity `d`.
/// The result may fall outside the source image.
pub fn reproject(
    p: PixelCoord,
    d: f64,
    rig: &CameraRig,
    conv: &DepthConvention,
) -> Result<PixelCoord> {
    check_disparity(d)?;
    let w = warp(p, d, rig, conv)?;
    Ok(PixelCoord::new(w.x, w.y))
}

pub fn reproject_jacobian(
    p: PixelCoord,
    d: f64,
    rig: &CameraRig,
    conv: &DepthConvention,
) -> Result<ReprojJacobian> {
    check_disparity(d)?;
    let w = warp(p, d, rig, conv)?;
    Ok(ReprojJacobian {
        dx_dd: w.dx_dd,
        dy_dd: w.dy_dd,
    })
}

/// Depth of the reprojected point in the source camera frame.
pub fn source_depth(p: PixelCoord, d: f64, rig: &CameraRig, conv: &DepthConvention) -> Result<f64> {
    check_disparity(d)?;
    Ok(warp(p, d, rig, conv)?.source_depth)
}
