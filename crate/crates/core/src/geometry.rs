//! Axis-aligned boxes, overlap, map-cell coordinate frames and greedy NMS.
//!
//! Boxes are continuous `(x, y, w, h)` rectangles with a top-left origin and
//! area `w * h` (no `+1` pixel convention). Degenerate boxes cannot be built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default IoU threshold used by [`nms`] callers.
pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid(format!(
                "box ({x}, {y}, {w}, {h}) has non-finite coordinates"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::invalid(format!(
                "box ({x}, {y}, {w}, {h}) must have positive width and height"
            )));
        }
        Ok(BBox { x, y, w, h })
    }

    /// Box of size `w` x `h` centered at `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// True when `other` lies inside `self`, allowing `tol` pixels of slack.
    pub fn contains_box(&self, other: &BBox, tol: f64) -> bool {
        other.x >= self.x - tol
            && other.y >= self.y - tol
            && other.right() <= self.right() + tol
            && other.bottom() <= self.bottom() + tol
    }

    /// Intersection with the image rectangle `[0, width) x [0, height)`.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        BBox::new(x0, y0, x1 - x0, y1 - y0).ok()
    }

    // Width and height recomputed from the edges; keeps `iou(a, a) == 1`
    // exact when `x + w - x != w` in floating point.
    fn edge_area(&self) -> f64 {
        (self.right() - self.x) * (self.bottom() - self.y)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// A box with a finite classifier confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::invalid(format!("score {score} is not finite")));
        }
        Ok(ScoredBox { bbox, score })
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn with_score(&self, score: f64) -> Result<Self> {
        ScoredBox::new(self.bbox, score)
    }
}

/// Intersection over union. Symmetric, in `[0, 1]`, zero for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.edge_area() + b.edge_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Multiply width and height by `1 + ratio`, keeping the center fixed.
///
/// The result is not clipped to the image; use [`BBox::clip`] for that.
pub fn expand_box(b: &BBox, ratio: f64) -> Result<BBox> {
    if !ratio.is_finite() || ratio < 0.0 {
        return Err(Error::invalid(format!(
            "expansion ratio must be a finite value >= 0, got {ratio}"
        )));
    }
    if ratio == 0.0 {
        return Ok(*b);
    }
    let (cx, cy) = b.center();
    let s = 1.0 + ratio;
    BBox::from_center(cx, cy, b.w * s, b.h * s)
}

/// Greedy NMS returning the indices of kept candidates in descending score
/// order. Ties on score go to the lower input index. A candidate is dropped
/// iff its IoU with an already kept box is strictly greater than
/// `iou_threshold`.
pub fn nms_indices(candidates: &[ScoredBox], iou_threshold: f64) -> Result<Vec<usize>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "NMS IoU threshold must lie in (0, 1], got {iou_threshold}"
        )));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // sort_by is stable, so equal scores keep input order
    order.sort_by(|&a, &b| candidates[b].score.total_cmp(&candidates[a].score));

    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        let cand = &candidates[idx].bbox;
        let suppressed = kept
            .iter()
            .any(|&k| iou(&candidates[k].bbox, cand) > iou_threshold);
        if !suppressed {
            kept.push(idx);
        }
    }
    Ok(kept)
}

/// Greedy non-maximum suppression; see [`nms_indices`].
pub fn nms(candidates: &[ScoredBox], iou_threshold: f64) -> Result<Vec<ScoredBox>> {
    Ok(nms_indices(candidates, iou_threshold)?
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

/// Affine tie between the cells of a coarse map and image pixels.
///
/// `origin` and `stride` are expressed in the resized (network-input) frame;
/// `scale` is the resize factor from the original image into that frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapFrame {
    origin_x: f64,
    origin_y: f64,
    stride: f64,
    scale_x: f64,
    scale_y: f64,
}

impl MapFrame {
    pub fn new(origin_x: f64, origin_y: f64, stride: f64, scale_x: f64, scale_y: f64) -> Result<Self> {
        let all_finite = [origin_x, origin_y, stride, scale_x, scale_y]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || stride <= 0.0 || scale_x <= 0.0 || scale_y <= 0.0 {
            return Err(Error::invalid(format!(
                "map frame needs finite origin and positive stride/scales \
                 (origin=({origin_x}, {origin_y}), stride={stride}, scale=({scale_x}, {scale_y}))"
            )));
        }
        Ok(MapFrame {
            origin_x,
            origin_y,
            stride,
            scale_x,
            scale_y,
        })
    }

    /// Identity frame for per-pixel grids: cell `(r, c)` is centered at
    /// pixel `(c + 0.5, r + 0.5)`.
    pub fn pixel_grid() -> Self {
        MapFrame {
            origin_x: 0.5,
            origin_y: 0.5,
            stride: 1.0,
            scale_x: 1.0,
            scale_y: 1.0,
        }
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.origin_x, self.origin_y)
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn scale(&self) -> (f64, f64) {
        (self.scale_x, self.scale_y)
    }

    /// Horizontal and vertical distance between neighbouring cell centers, in
    /// original-image pixels.
    pub fn cell_step(&self) -> (f64, f64) {
        (self.stride / self.scale_x, self.stride / self.scale_y)
    }

    /// Pixel position of a (possibly fractional) cell coordinate.
    pub fn cell_center(&self, row: f64, col: f64) -> (f64, f64) {
        (
            (self.origin_x + col * self.stride) / self.scale_x,
            (self.origin_y + row * self.stride) / self.scale_y,
        )
    }

    /// Fractional cell coordinate `(row, col)` of an image pixel position.
    pub fn pixel_to_cell_f(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (y * self.scale_y - self.origin_y) / self.stride,
            (x * self.scale_x - self.origin_x) / self.stride,
        )
    }
}

/// Image position of the center of cell `(row, col)`.
pub fn cell_to_pixel(frame: &MapFrame, cell_row: usize, cell_col: usize) -> (f64, f64) {
    frame.cell_center(cell_row as f64, cell_col as f64)
}

/// Nearest cell `(row, col)` to an image position. May be negative or past
/// the map edge; callers bound-check against their grid.
pub fn pixel_to_cell(frame: &MapFrame, x: f64, y: f64) -> (i64, i64) {
    let (r, c) = frame.pixel_to_cell_f(x, y);
    (r.round() as i64, c.round() as i64)
}
