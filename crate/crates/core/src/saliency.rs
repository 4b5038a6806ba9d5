//! Pedestrian saliency maps and saliency-weighted proposal scoring.
//!
//! A proposal whose classifier score is above `th_b` keeps its score. Any
//! other proposal is multiplied by the mean saliency of the pixels it covers,
//! which pushes down confident-looking background (poles, trees, car parts).
//!
//! Pixel `(row, col)` belongs to a box iff its center `(col + 0.5, row + 0.5)`
//! lies in the half-open region `[x, x + w) x [y, y + h)`. Boxes are clipped
//! to the image implicitly by that rule.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::{BBox, ScoredBox};

/// Default foreground/background score threshold.
pub const DEFAULT_TH_B: f64 = 0.5;

/// Dense row-major grid of per-pixel saliency values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "saliency map must be non-empty, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "saliency map {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "saliency value {} at index {pos} is outside [0, 1]",
                values[pos]
            )));
        }
        Ok(SaliencyMap {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        SaliencyMap::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Row and column index ranges of the pixels whose centers fall in `b`.
    pub fn covered_pixels(&self, b: &BBox) -> (Range<usize>, Range<usize>) {
        (
            center_span(b.y(), b.bottom(), self.height),
            center_span(b.x(), b.right(), self.width),
        )
    }

    /// Mean saliency over the pixels covered by `b`.
    pub fn region_mean(&self, b: &BBox) -> Result<f64> {
        let (rows, cols) = self.covered_pixels(b);
        let n = rows.len() * cols.len();
        if n == 0 {
            return Err(Error::EmptyRegion(format!(
                "box ({}, {}, {}, {}) covers no pixel center of the {}x{} saliency map",
                b.x(),
                b.y(),
                b.w(),
                b.h(),
                self.width,
                self.height
            )));
        }
        let mut sum = 0.0;
        for r in rows {
            let row = &self.values[r * self.width..(r + 1) * self.width];
            sum += row[cols.clone()].iter().sum::<f64>();
        }
        Ok(sum / n as f64)
    }
}

// Indices i in [0, n) with lo <= i + 0.5 < hi.
pub(crate) fn center_span(lo: f64, hi: f64, n: usize) -> Range<usize> {
    let first = (lo - 0.5).ceil().max(0.0);
    let end = (hi - 0.5).ceil().min(n as f64);
    if end <= first {
        return 0..0;
    }
    first as usize..end as usize
}

/// Saliency weight `w_f` of a proposal: `1` above `th_b`, otherwise the mean
/// saliency under the box.
pub fn saliency_weight(b: &ScoredBox, map: &SaliencyMap, th_b: f64) -> Result<f64> {
    if b.score() > th_b {
        return Ok(1.0);
    }
    map.region_mean(&b.bbox)
}

/// Proposal with its score multiplied by [`saliency_weight`]; geometry is
/// untouched.
pub fn reweight(b: &ScoredBox, map: &SaliencyMap, th_b: f64) -> Result<ScoredBox> {
    let w = saliency_weight(b, map, th_b)?;
    b.with_score(b.score() * w)
}

/// Reweight a whole set of proposals against one map.
pub fn reweight_all(boxes: &[ScoredBox], map: &SaliencyMap, th_b: f64) -> Result<Vec<ScoredBox>> {
    boxes.iter().map(|b| reweight(b, map, th_b)).collect()
}

/// Binary saliency target: 1 on every pixel covered by a ground-truth box,
/// 0 elsewhere. Boxes reaching outside the image are clipped.
pub fn saliency_ground_truth(image_w: usize, image_h: usize, gt: &[BBox]) -> Result<SaliencyMap> {
    if image_w == 0 || image_h == 0 {
        return Err(Error::invalid(format!(
            "image dimensions must be positive, got {image_w}x{image_h}"
        )));
    }
    let mut values = vec![0.0; image_w * image_h];
    for b in gt {
        let rows = center_span(b.y(), b.bottom(), image_h);
        let cols = center_span(b.x(), b.right(), image_w);
        for r in rows {
            values[r * image_w + cols.start..r * image_w + cols.end].fill(1.0);
        }
    }
    SaliencyMap::new(image_w, image_h, values)
}
