//! Scene-level diagnostics for fitted box scenes: where the predicted
//! discontinuity sits relative to a vertical object edge, how the two
//! component means behave across it, and how many points float between
//! foreground and background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::count_in_depth_interval;
use crate::synth::SceneObject;
use crate::trainer::DecodedTable;
use crate::types::ImageGrid;

/// Drop `margin` pixels from every side.
pub fn crop(grid: &ImageGrid, margin: usize) -> Result<ImageGrid> {
    let (w, h, c) = (grid.width(), grid.height(), grid.channels());
    if 2 * margin >= w || 2 * margin >= h {
        return Err(Error::invalid(format!(
            "margin {margin} leaves nothing of a {w}x{h} image"
        )));
    }
    let (cw, ch) = (w - 2 * margin, h - 2 * margin);
    let mut data = Vec::with_capacity(cw * ch * c);
    for y in margin..h - margin {
        for x in margin..w - margin {
            data.extend_from_slice(grid.pixel(x, y));
        }
    }
    ImageGrid::new(cw, ch, c, data)
}

/// Which side of an object a vertical edge belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Boundary position of the object edge in pixel coordinates; the
    /// boundary between pixels `x` and `x + 1` sits at `x + 0.5`.
    pub fn boundary(self, object: &SceneObject) -> f64 {
        match self {
            Side::Left => object.bounds[0] as f64 - 0.5,
            Side::Right => object.bounds[2] as f64 - 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    /// Signed offset of the predicted discontinuity per `(row, side)`.
    pub offsets: Vec<(usize, Side, f64)>,
    pub within_one_px: usize,
}

impl Localization {
    pub fn fraction(&self) -> f64 {
        if self.offsets.is_empty() {
            0.0
        } else {
            self.within_one_px as f64 / self.offsets.len() as f64
        }
    }
}

/// Position of the largest jump between horizontal neighbors of `row`
/// within `search` pixels of `boundary`.
pub fn strongest_jump(
    map: &ImageGrid,
    row: usize,
    boundary: f64,
    search: usize,
) -> Option<(f64, f64)> {
    let w = map.width();
    let center = boundary.floor() as i64;
    let lo = (center - search as i64).max(0) as usize;
    let hi = ((center + search as i64) as usize).min(w.saturating_sub(2));
    (lo..=hi)
        .map(|x| (x as f64 + 0.5, map.at(x + 1, row, 0) - map.at(x, row, 0)))
        .filter(|(_, d)| d.is_finite())
        .fold(None, |best: Option<(f64, f64)>, cur| match best {
            Some(b) if b.1.abs() >= cur.1.abs() => Some(b),
            _ => Some(cur),
        })
}

/// For every row spanned by `object`, compare the strongest jump of `map`
/// near each vertical object edge with the true edge position.
pub fn edge_localization(map: &ImageGrid, object: &SceneObject, search: usize) -> Localization {
    let [_, y0, _, y1] = object.bounds;
    let mut offsets = Vec::new();
    for y in y0..y1.min(map.height()) {
        for side in [Side::Left, Side::Right] {
            let b = side.boundary(object);
            if b < 0.0 || b + 1.0 > map.width() as f64 {
                continue;
            }
            if let Some((pos, _)) = strongest_jump(map, y, b, search) {
                offsets.push((y, side, pos - b));
            }
        }
    }
    let within_one_px = offsets.iter().filter(|(_, _, o)| o.abs() <= 1.0).count();
    Localization {
        offsets,
        within_one_px,
    }
}

/// One row of a fitted table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowProfile {
    pub row: usize,
    pub x0: usize,
    pub selected: Vec<f64>,
    pub mu: [Vec<f64>; 2],
    pub alpha: Vec<f64>,
}

impl RowProfile {
    /// Columns `x0..x1` of `row`.
    pub fn extract(table: &DecodedTable, row: usize, x0: usize, x1: usize) -> Result<Self> {
        if row >= table.height || x0 >= x1 || x1 > table.width {
            return Err(Error::invalid(format!(
                "row {row} columns {x0}..{x1} outside {}x{}",
                table.width, table.height
            )));
        }
        let sel = table.selected_disparity()?;
        let idx = |x: usize| row * table.width + x;
        Ok(Self {
            row,
            x0,
            selected: (x0..x1).map(|x| sel.data()[idx(x)]).collect(),
            mu: [0, 1].map(|k| (x0..x1).map(|x| table.mu[k][idx(x)]).collect()),
            alpha: (x0..x1).map(|x| table.alpha[idx(x)]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

fn total_variation(v: &[f64]) -> f64 {
    v.windows(2).map(|p| (p[1] - p[0]).abs()).sum()
}

/// Behaviour of a row profile in a band of `band` pixels on each side of an edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeBand {
    pub boundary: f64,
    /// Total variation of each component mean inside the band.
    pub component_tv: [f64; 2],
    /// Largest signed jump between neighbors of the selected disparity.
    pub selected_step: f64,
    /// Where alpha crosses 0.5, interpolated linearly; the crossing closest
    /// to the boundary wins.
    pub alpha_crossing: Option<f64>,
}

impl EdgeBand {
    /// `boundary` is in image coordinates, as returned by [`Side::boundary`].
    pub fn measure(profile: &RowProfile, boundary: f64, band: usize) -> Result<Self> {
        let local = boundary - profile.x0 as f64;
        let first = local + 0.5 - band as f64;
        let last = local - 0.5 + band as f64;
        if first < 0.0 || last >= profile.len() as f64 {
            return Err(Error::invalid(format!(
                "a {band} px band around {boundary} leaves the profile"
            )));
        }
        let (a, b) = (first as usize, last as usize + 1);
        let component_tv = [0, 1].map(|k| total_variation(&profile.mu[k][a..b]));
        let selected_step =
            profile.selected[a..b]
                .windows(2)
                .map(|p| p[1] - p[0])
                .fold(
                    0.0,
                    |best: f64, d| if d.abs() > best.abs() { d } else { best },
                );
        let alpha_crossing = profile.alpha[a..b]
            .windows(2)
            .enumerate()
            .filter(|(_, p)| (p[0] - 0.5) * (p[1] - 0.5) < 0.0 || (p[0] == 0.5) != (p[1] == 0.5))
            .map(|(i, p)| {
                let t = if p[1] != p[0] {
                    (0.5 - p[0]) / (p[1] - p[0])
                } else {
                    0.0
                };
                (profile.x0 + a + i) as f64 + t
            })
            .min_by(|x, y| (x - boundary).abs().total_cmp(&(y - boundary).abs()));
        Ok(Self {
            boundary,
            component_tv,
            selected_step,
            alpha_crossing,
        })
    }
}

/// Points whose depth lies strictly inside the gap between `near` and
/// `far`, shrunk by `margin` times the gap width at each end.
pub fn floater_count(depth: &ImageGrid, near: f64, far: f64, margin: f64) -> Result<usize> {
    if !(near > 0.0 && far > near) || !(0.0..0.5).contains(&margin) {
        return Err(Error::invalid(format!(
            "bad floater interval {near}..{far} with margin {margin}"
        )));
    }
    let gap = far - near;
    Ok(count_in_depth_interval(
        depth,
        near + margin * gap,
        far - margin * gap,
    ))
}
