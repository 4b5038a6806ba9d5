//! Coarse confidence maps: class activation maps, shift-and-stitch
//! densification, bilinear upsampling, and the scorer-backend contract that
//! supplies the raw maps.
//!
//! A backend looks at one image region resized to a fixed network input
//! (160x96, h x w) and returns a 5x3 confidence map at stride 32 in the
//! resized frame, a feature grid on the same cells, and a scalar score.
//! Evaluating the backend at `f * f` sub-stride offsets and interlacing the
//! results gives a map `f` times denser along each axis.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BBox, MapFrame};
use crate::parts::PartKind;

/// Coarse grid of detector confidences tied to the image by a [`MapFrame`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    frame: MapFrame,
}

impl ConfidenceMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, frame: MapFrame) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "confidence map must be non-empty, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "confidence map {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("confidence map contains non-finite values"));
        }
        Ok(ConfidenceMap {
            rows,
            cols,
            values,
            frame,
        })
    }

    /// Map whose cell values come from `f(row, col)`.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        frame: MapFrame,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        ConfidenceMap::new(rows, cols, values, frame)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self) -> &MapFrame {
        &self.frame
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// `K` activations per cell, stored cell-major: `values[(r * cols + c) * K + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    rows: usize,
    cols: usize,
    channels: usize,
    values: Vec<f64>,
    frame: MapFrame,
}

impl FeatureGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        channels: usize,
        values: Vec<f64>,
        frame: MapFrame,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::Dimension(format!(
                "feature grid must be non-empty, got {rows}x{cols}x{channels}"
            )));
        }
        if values.len() != rows * cols * channels {
            return Err(Error::Dimension(format!(
                "feature grid {rows}x{cols}x{channels} needs {} values, got {}",
                rows * cols * channels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature grid contains non-finite values"));
        }
        Ok(FeatureGrid {
            rows,
            cols,
            channels,
            values,
            frame,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self) -> &MapFrame {
        &self.frame
    }

    /// The `K` activations of one cell.
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.channels;
        &self.values[start..start + self.channels]
    }
}

/// Per-channel class weights `w_k` of the activation-map head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_channels(features: &FeatureGrid, weights: &ClassWeights) -> Result<()> {
    if features.channels != weights.len() {
        return Err(Error::Dimension(format!(
            "feature grid has {} channels but {} class weights were given",
            features.channels,
            weights.len()
        )));
    }
    Ok(())
}

/// Class activation map: each cell is `sum_k w_k * f_k(cell)`.
pub fn cam(features: &FeatureGrid, weights: &ClassWeights) -> Result<ConfidenceMap> {
    check_channels(features, weights)?;
    let values = features
        .values
        .chunks_exact(features.channels)
        .map(|cell| cell.iter().zip(&weights.0).map(|(f, w)| w * f).sum())
        .collect();
    ConfidenceMap::new(features.rows, features.cols, values, features.frame)
}

/// Scalar class activation summed over all cells, computed channel-first
/// as `sum_k w_k * (sum_cells f_k)` the way a pooled head would.
pub fn cam_total(features: &FeatureGrid, weights: &ClassWeights) -> Result<f64> {
    check_channels(features, weights)?;
    let mut pooled = vec![0.0; features.channels];
    for cell in features.values.chunks_exact(features.channels) {
        for (acc, v) in pooled.iter_mut().zip(cell) {
            *acc += v;
        }
    }
    Ok(pooled.iter().zip(&weights.0).map(|(p, w)| p * w).sum())
}

/// Which network head a backend query is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detector {
    Root,
    Part(PartKind),
}

impl Detector {
    pub const ALL: [Detector; 4] = [
        Detector::Root,
        Detector::Part(PartKind::Head),
        Detector::Part(PartKind::Torso),
        Detector::Part(PartKind::Legs),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Root => "root",
            Detector::Part(k) => k.name(),
        }
    }

    pub fn from_name(name: &str) -> Option<Detector> {
        Detector::ALL.into_iter().find(|d| d.name() == name)
    }
}

/// Declared input/output geometry of a backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendGeometry {
    pub input_w: u32,
    pub input_h: u32,
    pub stride: u32,
}

impl Default for BackendGeometry {
    fn default() -> Self {
        BackendGeometry {
            input_w: 96,
            input_h: 160,
            stride: 32,
        }
    }
}

impl BackendGeometry {
    /// Output map size `(rows, cols)`; 5x3 for the default geometry.
    pub fn map_dims(&self) -> (usize, usize) {
        (
            (self.input_h / self.stride) as usize,
            (self.input_w / self.stride) as usize,
        )
    }

    /// Resize factors from image pixels into the network input for `region`.
    pub fn scales(&self, region: &BBox) -> (f64, f64) {
        (
            self.input_w as f64 / region.w(),
            self.input_h as f64 / region.h(),
        )
    }

    /// Frame of the map a backend returns for `region`. Cell `(0, 0)` sits
    /// half a stride inside the region's top-left corner.
    pub fn frame_for(&self, region: &BBox) -> Result<MapFrame> {
        let (sx, sy) = self.scales(region);
        let half = self.stride as f64 / 2.0;
        MapFrame::new(
            region.x() * sx + half,
            region.y() * sy + half,
            self.stride as f64,
            sx,
            sy,
        )
    }

    /// Base region whose stitched map (shifts `0..f` right and down) is
    /// centered on `region`: moved up-left by `(f - 1) / 2` shift steps.
    pub fn centered_base(&self, region: &BBox, f: u32) -> Result<BBox> {
        self.check_factor(f)?;
        let (sx, sy) = self.scales(region);
        let back = (f - 1) as f64 * self.stride as f64 / (2.0 * f as f64);
        region.translate(-back / sx, -back / sy)
    }

    pub fn check_factor(&self, f: u32) -> Result<()> {
        if f == 0 || !self.stride.is_multiple_of(f) {
            return Err(Error::invalid(format!(
                "shift-and-stitch factor {f} must be >= 1 and divide the stride {}",
                self.stride
            )));
        }
        Ok(())
    }
}

/// Sub-stride shift of one evaluation: `(dx, dy)` steps of `stride / f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shift {
    pub dx: u32,
    pub dy: u32,
    pub f: u32,
}

impl Shift {
    pub const NONE: Shift = Shift { dx: 0, dy: 0, f: 1 };
}

/// One backend evaluation request.
#[derive(Debug, Clone, Copy)]
pub struct RegionQuery<'a> {
    pub image_id: &'a str,
    pub detector: Detector,
    /// The unshifted region.
    pub base_region: BBox,
    pub shift: Shift,
    /// `base_region` moved by the shift, in image pixels.
    pub region: BBox,
}

impl<'a> RegionQuery<'a> {
    pub fn new(
        image_id: &'a str,
        detector: Detector,
        base_region: BBox,
        shift: Shift,
        geometry: &BackendGeometry,
    ) -> Result<Self> {
        let (sx, sy) = geometry.scales(&base_region);
        let step = geometry.stride as f64 / shift.f as f64;
        let region = base_region.translate(shift.dx as f64 * step / sx, shift.dy as f64 * step / sy)?;
        Ok(RegionQuery {
            image_id,
            detector,
            base_region,
            shift,
            region,
        })
    }

    pub fn unshifted(image_id: &'a str, detector: Detector, region: BBox) -> Self {
        RegionQuery {
            image_id,
            detector,
            base_region: region,
            shift: Shift::NONE,
            region,
        }
    }
}

/// What a backend returns for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerOutput {
    pub fcn: ConfidenceMap,
    pub features: FeatureGrid,
    pub score: f64,
}

/// Supplier of raw detector outputs.
///
/// Implementations must be deterministic. If `evaluate` is not safe to call
/// concurrently, `concurrent` must return `false`.
pub trait ScorerBackend: Send + Sync {
    fn geometry(&self) -> BackendGeometry {
        BackendGeometry::default()
    }

    fn class_weights(&self, detector: Detector) -> Result<ClassWeights>;

    fn evaluate(&self, query: &RegionQuery<'_>) -> Result<ScorerOutput>;

    fn concurrent(&self) -> bool {
        true
    }
}

impl<B: ScorerBackend + ?Sized> ScorerBackend for &B {
    fn geometry(&self) -> BackendGeometry {
        (**self).geometry()
    }

    fn class_weights(&self, detector: Detector) -> Result<ClassWeights> {
        (**self).class_weights(detector)
    }

    fn evaluate(&self, query: &RegionQuery<'_>) -> Result<ScorerOutput> {
        (**self).evaluate(query)
    }

    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
}

/// Interlace `f * f` shifted maps (index `dy * f + dx`) into one map where
/// output cell `(i * f + dy, j * f + dx)` is cell `(i, j)` of shift `(dx, dy)`.
pub fn stitch(maps: &[ConfidenceMap], f: usize) -> Result<ConfidenceMap> {
    if f == 0 || maps.len() != f * f {
        return Err(Error::Dimension(format!(
            "stitching with factor {f} needs {} maps, got {}",
            f * f,
            maps.len()
        )));
    }
    let base = &maps[0];
    let (rows, cols) = (base.rows, base.cols);
    let stride = base.frame.stride();
    let step = stride / f as f64;
    let (ox, oy) = base.frame.origin();
    for (idx, m) in maps.iter().enumerate() {
        if m.rows != rows || m.cols != cols {
            return Err(Error::Dimension(format!(
                "shift map {idx} is {}x{}, expected {rows}x{cols}",
                m.rows, m.cols
            )));
        }
        let (dx, dy) = ((idx % f) as f64, (idx / f) as f64);
        let (mx, my) = m.frame.origin();
        let tol = 1e-6 * (1.0 + ox.abs().max(oy.abs()));
        if m.frame.stride() != stride
            || m.frame.scale() != base.frame.scale()
            || (mx - (ox + dx * step)).abs() > tol
            || (my - (oy + dy * step)).abs() > tol
        {
            return Err(Error::Backend(format!(
                "shift map {idx} frame does not match a ({dx}, {dy}) shift of the base frame"
            )));
        }
    }

    let out_cols = cols * f;
    let mut values = vec![0.0; rows * f * out_cols];
    for (idx, m) in maps.iter().enumerate() {
        let (dx, dy) = (idx % f, idx / f);
        for i in 0..rows {
            for j in 0..cols {
                values[(i * f + dy) * out_cols + j * f + dx] = m.get(i, j);
            }
        }
    }
    let (sx, sy) = base.frame.scale();
    let frame = MapFrame::new(ox, oy, step, sx, sy)?;
    ConfidenceMap::new(rows * f, out_cols, values, frame)
}

/// Densified FCN and CAM maps of one region plus the unshifted score.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchedMaps {
    pub fcn: ConfidenceMap,
    pub cam: ConfidenceMap,
    pub score: f64,
}

/// Run the backend at all `f * f` sub-stride shifts of `region`, in
/// `dy * f + dx` order.
pub fn evaluate_shifts<B: ScorerBackend + ?Sized>(
    backend: &B,
    image_id: &str,
    detector: Detector,
    region: &BBox,
    f: u32,
) -> Result<Vec<ScorerOutput>> {
    let geometry = backend.geometry();
    geometry.check_factor(f)?;
    let shifts: Vec<Shift> = (0..f)
        .flat_map(|dy| (0..f).map(move |dx| Shift { dx, dy, f }))
        .collect();
    let run = |s: &Shift| -> Result<ScorerOutput> {
        let q = RegionQuery::new(image_id, detector, *region, *s, &geometry)?;
        backend.evaluate(&q)
    };
    if backend.concurrent() {
        shifts.par_iter().map(run).collect()
    } else {
        shifts.iter().map(run).collect()
    }
}

/// Shift-and-stitch both the FCN map and the class activation map.
pub fn shift_and_stitch_all<B: ScorerBackend + ?Sized>(
    backend: &B,
    image_id: &str,
    detector: Detector,
    region: &BBox,
    f: u32,
) -> Result<StitchedMaps> {
    let outputs = evaluate_shifts(backend, image_id, detector, region, f)?;
    let weights = backend.class_weights(detector)?;
    let fcn_maps: Vec<ConfidenceMap> = outputs.iter().map(|o| o.fcn.clone()).collect();
    let cam_maps = outputs
        .iter()
        .map(|o| cam(&o.features, &weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(StitchedMaps {
        fcn: stitch(&fcn_maps, f as usize)?,
        cam: stitch(&cam_maps, f as usize)?,
        score: outputs[0].score,
    })
}

/// Shift-and-stitch the FCN confidence map of `region`: an
/// `(rows * f) x (cols * f)` map with stride `s / f`.
pub fn shift_and_stitch<B: ScorerBackend + ?Sized>(
    backend: &B,
    image_id: &str,
    detector: Detector,
    region: &BBox,
    f: u32,
) -> Result<ConfidenceMap> {
    let outputs = evaluate_shifts(backend, image_id, detector, region, f)?;
    let maps: Vec<ConfidenceMap> = outputs.into_iter().map(|o| o.fcn).collect();
    stitch(&maps, f as usize)
}

/// Bilinear upsampling with endpoint-aligned cell centers: the first and
/// last output centers coincide with the first and last input centers.
pub fn upsample(map: &ConfidenceMap, out_rows: usize, out_cols: usize) -> Result<ConfidenceMap> {
    if out_rows < map.rows || out_cols < map.cols {
        return Err(Error::invalid(format!(
            "upsampling {}x{} to {out_rows}x{out_cols} would shrink the map",
            map.rows, map.cols
        )));
    }
    if out_rows == map.rows && out_cols == map.cols {
        return Ok(map.clone());
    }

    let src = |n_in: usize, n_out: usize, i: usize| -> (usize, usize, f64) {
        if n_in == 1 || n_out == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };

    let mut values = Vec::with_capacity(out_rows * out_cols);
    for r in 0..out_rows {
        let (r0, r1, tr) = src(map.rows, out_rows, r);
        for c in 0..out_cols {
            let (c0, c1, tc) = src(map.cols, out_cols, c);
            let top = map.get(r0, c0) * (1.0 - tc) + map.get(r0, c1) * tc;
            let bottom = map.get(r1, c0) * (1.0 - tc) + map.get(r1, c1) * tc;
            values.push(top * (1.0 - tr) + bottom * tr);
        }
    }

    let (ox, sx) = resample_axis(map.frame.origin().0, map.frame.scale().0, map.frame.stride(), map.cols, out_cols);
    let (oy, sy) = resample_axis(map.frame.origin().1, map.frame.scale().1, map.frame.stride(), map.rows, out_rows);
    let frame = MapFrame::new(ox, oy, map.frame.stride(), sx, sy)?;
    ConfidenceMap::new(out_rows, out_cols, values, frame)
}

// New (origin, scale) along one axis so that `n_out` centers span the same
// pixel extent as the `n_in` input centers, keeping the stride unchanged.
// A single input cell spreads the outputs evenly over that cell's width.
fn resample_axis(origin: f64, scale: f64, stride: f64, n_in: usize, n_out: usize) -> (f64, f64) {
    if n_out == n_in {
        return (origin, scale);
    }
    let first = origin / scale;
    let in_step = stride / scale;
    let (start, out_step) = if n_in == 1 {
        let step = in_step / n_out as f64;
        (first - in_step / 2.0 + step / 2.0, step)
    } else {
        (first, in_step * (n_in - 1) as f64 / (n_out - 1) as f64)
    };
    let new_scale = stride / out_step;
    (start * new_scale, new_scale)
}
