//! Bounding-box alignment against densified confidence maps.
//!
//! A proposal is enlarged, scored at sub-stride shifts, and the resulting
//! FCN and CAM maps are searched for the target-sized window with the
//! largest mean. Each map then votes a displacement scaled by how different
//! the target window looks from the window at the original position, and the
//! two votes are averaged into the anchor position.

use crate::error::{Error, Result};
use crate::geometry::{expand_box, BBox};
use crate::heatmap::{shift_and_stitch_all, upsample, ConfidenceMap, Detector, ScorerBackend, StitchedMaps};

/// Block of map cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellWindow {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl CellWindow {
    /// Cell values in row-major order.
    pub fn values(&self, map: &ConfidenceMap) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in self.row..self.row + self.rows {
            for c in self.col..self.col + self.cols {
                out.push(map.get(r, c));
            }
        }
        out
    }

    /// Fractional cell coordinate `(row, col)` of the window center.
    pub fn center_cell(&self) -> (f64, f64) {
        (
            self.row as f64 + (self.rows - 1) as f64 / 2.0,
            self.col as f64 + (self.cols - 1) as f64 / 2.0,
        )
    }
}

/// Best target window found on a map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarsePosition {
    pub x_p: f64,
    pub y_p: f64,
    pub target_w: f64,
    pub target_h: f64,
    pub mean_value: f64,
    pub window: CellWindow,
}

/// Aligned position of a proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPosition {
    pub x_a: f64,
    pub y_a: f64,
    pub aligned_box: BBox,
}

impl AnchorPosition {
    pub fn point(&self) -> (f64, f64) {
        (self.x_a, self.y_a)
    }
}

/// Target rectangle size: `(L * W, L * H)` for an enlarging ratio
/// `L` in `(0, 1]`.
pub fn target_size(enlarge: f64, region_w: f64, region_h: f64) -> Result<(f64, f64)> {
    if !(enlarge > 0.0 && enlarge <= 1.0) {
        return Err(Error::invalid(format!(
            "enlarging ratio must lie in (0, 1], got {enlarge}"
        )));
    }
    if !(region_w > 0.0 && region_h > 0.0) {
        return Err(Error::invalid(format!(
            "region size must be positive, got {region_w}x{region_h}"
        )));
    }
    Ok((enlarge * region_w, enlarge * region_h))
}

/// Number of map cells `(rows, cols)` a `w` x `h` pixel rectangle spans.
pub fn target_cells(map: &ConfidenceMap, target_w: f64, target_h: f64) -> Result<(usize, usize)> {
    if !(target_w > 0.0 && target_h > 0.0) || !target_w.is_finite() || !target_h.is_finite() {
        return Err(Error::invalid(format!(
            "target size must be positive, got {target_w}x{target_h}"
        )));
    }
    let (step_x, step_y) = map.frame().cell_step();
    let rows = ((target_h / step_y).round() as usize).max(1);
    let cols = ((target_w / step_x).round() as usize).max(1);
    if rows > map.rows() || cols > map.cols() {
        return Err(Error::invalid(format!(
            "target of {rows}x{cols} cells does not fit the {}x{} map",
            map.rows(),
            map.cols()
        )));
    }
    Ok((rows, cols))
}

/// Exhaustive one-cell-stride search for the target window with the
/// largest mean. Ties go to the smallest row, then the smallest column.
pub fn coarse_position(map: &ConfidenceMap, target_w: f64, target_h: f64) -> Result<CoarsePosition> {
    let (rows, cols) = target_cells(map, target_w, target_h)?;
    let n = (rows * cols) as f64;
    let mut best: Option<(f64, CellWindow)> = None;
    for row in 0..=map.rows() - rows {
        for col in 0..=map.cols() - cols {
            let window = CellWindow { row, col, rows, cols };
            let mut sum = 0.0;
            for r in row..row + rows {
                for c in col..col + cols {
                    sum += map.get(r, c);
                }
            }
            let mean = sum / n;
            if best.is_none_or(|(m, _)| mean > m) {
                best = Some((mean, window));
            }
        }
    }
    let (mean_value, window) = best.expect("at least one placement fits");
    let (cr, cc) = window.center_cell();
    let (x_p, y_p) = map.frame().cell_center(cr, cc);
    Ok(CoarsePosition {
        x_p,
        y_p,
        target_w,
        target_h,
        mean_value,
        window,
    })
}

/// Displacement scale `2 * sum (t - o)^2 / (sum t^2 + sum o^2)`, paired
/// element by element. Lies in `[0, 2]`; zero when both windows are all
/// zeros.
pub fn confidence_ratio(target: &[f64], original: &[f64]) -> Result<f64> {
    if target.len() != original.len() || target.is_empty() {
        return Err(Error::Dimension(format!(
            "target window has {} cells, original window has {}",
            target.len(),
            original.len()
        )));
    }
    let mut diff = 0.0;
    let mut tt = 0.0;
    let mut oo = 0.0;
    for (t, o) in target.iter().zip(original) {
        diff += (t - o) * (t - o);
        tt += t * t;
        oo += o * o;
    }
    let denom = tt + oo;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * diff / denom).min(2.0))
}

/// Window with the target's cell shape centered as close as possible to the
/// pixel position `center`, shifted inside the map if it would hang over
/// an edge.
pub fn window_at(map: &ConfidenceMap, rows: usize, cols: usize, center: (f64, f64)) -> Result<CellWindow> {
    if rows == 0 || cols == 0 || rows > map.rows() || cols > map.cols() {
        return Err(Error::Dimension(format!(
            "window {rows}x{cols} does not fit the {}x{} map",
            map.rows(),
            map.cols()
        )));
    }
    let (rf, cf) = map.frame().pixel_to_cell_f(center.0, center.1);
    let place = |pos: f64, n: usize, limit: usize| -> usize {
        let start = (pos - (n - 1) as f64 / 2.0).round();
        start.clamp(0.0, (limit - n) as f64) as usize
    };
    Ok(CellWindow {
        row: place(rf, rows, map.rows()),
        col: place(cf, cols, map.cols()),
        rows,
        cols,
    })
}

/// Per-map displacement `(dx, dy) = r * (p - o)`, with `r` from
/// [`confidence_ratio`] over the target window and the equally shaped window
/// at the original center. `clamp` caps `r` at 1 so the move never
/// overshoots the coarse position.
pub fn delta(
    map: &ConfidenceMap,
    target: &CoarsePosition,
    original_center: (f64, f64),
    clamp: bool,
) -> Result<(f64, f64)> {
    let w = target.window;
    let original = window_at(map, w.rows, w.cols, original_center)?;
    let mut r = confidence_ratio(&w.values(map), &original.values(map))?;
    if clamp {
        r = r.min(1.0);
    }
    Ok((
        r * (target.x_p - original_center.0),
        r * (target.y_p - original_center.1),
    ))
}

/// Anchor position: the original center moved by the mean of the FCN and
/// CAM displacements. The aligned box keeps the original size.
pub fn align(original: &BBox, delta_fcn: (f64, f64), delta_cam: (f64, f64)) -> Result<AnchorPosition> {
    let all_finite = [delta_fcn.0, delta_fcn.1, delta_cam.0, delta_cam.1]
        .iter()
        .all(|v| v.is_finite());
    if !all_finite {
        return Err(Error::invalid("alignment deltas must be finite"));
    }
    let (x_o, y_o) = original.center();
    let mx = (delta_fcn.0 + delta_cam.0) / 2.0;
    let my = (delta_fcn.1 + delta_cam.1) / 2.0;
    Ok(AnchorPosition {
        x_a: x_o + mx,
        y_a: y_o + my,
        aligned_box: original.translate(mx, my)?,
    })
}

/// Parameters of one alignment pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignParams {
    pub expand_ratio: f64,
    pub f: u32,
    pub enlarge: f64,
    /// Upsampled map size; `None` picks square pixel cells.
    pub upsample: Option<(usize, usize)>,
    pub clamp_delta: bool,
    /// Center the stitched map on the expanded region instead of letting
    /// the positive sub-stride shifts extend it right and down.
    pub center_shifts: bool,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            expand_ratio: 0.25,
            f: 4,
            enlarge: 0.8,
            upsample: None,
            clamp_delta: false,
            center_shifts: true,
        }
    }
}

/// Upsampled size that makes cells square in image pixels, never smaller
/// than the input.
pub fn square_cell_dims(map: &ConfidenceMap) -> (usize, usize) {
    let (step_x, step_y) = map.frame().cell_step();
    let step = step_x.min(step_y);
    let grow = |n: usize, s: f64| -> usize {
        if n <= 1 {
            return n;
        }
        let wanted = ((n - 1) as f64 * s / step).round() as usize + 1;
        wanted.max(n)
    };
    (grow(map.rows(), step_y), grow(map.cols(), step_x))
}

/// Upsample a stitched map for the coarse-position search.
pub fn prepare_map(map: &ConfidenceMap, dims: Option<(usize, usize)>) -> Result<ConfidenceMap> {
    let (rows, cols) = dims.unwrap_or_else(|| square_cell_dims(map));
    upsample(map, rows, cols)
}

/// One branch (FCN or CAM) of an alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchTrace {
    pub coarse: CoarsePosition,
    pub delta: (f64, f64),
}

/// Everything an alignment pass computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentTrace {
    pub region: BBox,
    pub fcn: BranchTrace,
    pub cam: BranchTrace,
    pub anchor: AnchorPosition,
}

fn branch(map: &ConfidenceMap, params: &AlignParams, target: (f64, f64), center: (f64, f64)) -> Result<BranchTrace> {
    let map = prepare_map(map, params.upsample)?;
    let coarse = coarse_position(&map, target.0, target.1)?;
    let delta = delta(&map, &coarse, center, params.clamp_delta)?;
    Ok(BranchTrace { coarse, delta })
}

/// Shift-and-stitch both maps of `region`, honoring `center_shifts`.
pub fn stitch_region<B: ScorerBackend + ?Sized>(
    backend: &B,
    image_id: &str,
    detector: Detector,
    region: &BBox,
    params: &AlignParams,
) -> Result<StitchedMaps> {
    let base = if params.center_shifts {
        backend.geometry().centered_base(region, params.f)?
    } else {
        *region
    };
    shift_and_stitch_all(backend, image_id, detector, &base, params.f)
}

/// Full alignment of one proposal against the root detector.
pub fn align_proposal_traced<B: ScorerBackend + ?Sized>(
    backend: &B,
    proposal: &BBox,
    image_id: &str,
    params: &AlignParams,
) -> Result<AlignmentTrace> {
    let region = expand_box(proposal, params.expand_ratio)?;
    let maps = stitch_region(backend, image_id, Detector::Root, &region, params)?;
    let target = target_size(params.enlarge, region.w(), region.h())?;
    let center = proposal.center();
    let fcn = branch(&maps.fcn, params, target, center)?;
    let cam = branch(&maps.cam, params, target, center)?;
    let anchor = align(proposal, fcn.delta, cam.delta)?;
    Ok(AlignmentTrace {
        region,
        fcn,
        cam,
        anchor,
    })
}

/// Align one proposal: enlarge, shift-and-stitch, upsample, search, and
/// fuse the FCN and CAM displacements.
pub fn align_proposal<B: ScorerBackend + ?Sized>(
    backend: &B,
    proposal: &BBox,
    image_id: &str,
    params: &AlignParams,
) -> Result<AnchorPosition> {
    Ok(align_proposal_traced(backend, proposal, image_id, params)?.anchor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MapFrame;

    fn unit_map(rows: usize, cols: usize, values: Vec<f64>) -> ConfidenceMap {
        // cell (r, c) centered at pixel (c + 0.5, r + 0.5)
        ConfidenceMap::new(rows, cols, values, MapFrame::pixel_grid()).unwrap()
    }

    #[test]
    fn target_size_examples() {
        assert_eq!(target_size(1.0, 40.0, 80.0).unwrap(), (40.0, 80.0));
        assert_eq!(target_size(0.5, 40.0, 80.0).unwrap(), (20.0, 40.0));
        assert_eq!(target_size(0.8, 60.0, 120.0).unwrap(), (48.0, 96.0));
        assert!(target_size(0.0, 1.0, 1.0).is_err());
        assert!(target_size(1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn single_cell_argmax() {
        let mut v = vec![0.0; 12];
        v[7] = 3.0; // row 1, col 3
        let m = unit_map(3, 4, v);
        let p = coarse_position(&m, 1.0, 1.0).unwrap();
        assert_eq!((p.window.row, p.window.col), (1, 3));
        assert_eq!((p.x_p, p.y_p), (3.5, 1.5));
        assert_eq!(p.mean_value, 3.0);
    }

    #[test]
    fn constant_map_picks_top_left() {
        let m = unit_map(4, 4, vec![1.0; 16]);
        let p = coarse_position(&m, 2.0, 2.0).unwrap();
        assert_eq!((p.window.row, p.window.col), (0, 0));
    }

    #[test]
    fn centered_peak_ties_break_to_first() {
        let m = unit_map(3, 3, vec![0.0, 0.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 0.0]);
        let p = coarse_position(&m, 2.0, 2.0).unwrap();
        assert_eq!(p.window, CellWindow { row: 0, col: 0, rows: 2, cols: 2 });
        assert_eq!(p.mean_value, 2.25);
    }

    #[test]
    fn oversized_target_is_rejected() {
        let m = unit_map(2, 2, vec![0.0; 4]);
        assert!(matches!(coarse_position(&m, 3.0, 1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(confidence_ratio(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(confidence_ratio(&[3.0, 3.0, 3.0], &[0.0, 0.0, 0.0]).unwrap(), 2.0);
        let r = confidence_ratio(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(confidence_ratio(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!(matches!(confidence_ratio(&[1.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn delta_identical_windows_is_zero() {
        let m = unit_map(3, 3, (0..9).map(f64::from).collect());
        let target = coarse_position(&m, 1.0, 1.0).unwrap();
        let d = delta(&m, &target, (target.x_p, target.y_p), false).unwrap();
        assert_eq!(d, (0.0, 0.0));
    }

    #[test]
    fn delta_from_empty_original_doubles() {
        // target window constant 4 at col 11, original window zeros at col 1
        let mut v = vec![0.0; 12];
        v[11] = 4.0;
        let m = unit_map(1, 12, v);
        let target = coarse_position(&m, 1.0, 1.0).unwrap();
        let original = (target.x_p - 10.0, target.y_p);
        let (dx, dy) = delta(&m, &target, original, false).unwrap();
        assert_eq!((dx, dy), (20.0, 0.0));
        let (dx, _) = delta(&m, &target, original, true).unwrap();
        assert_eq!(dx, 10.0);
    }

    #[test]
    fn align_examples() {
        let b = BBox::new(90.0, 40.0, 20.0, 40.0).unwrap();
        let a = align(&b, (0.0, 0.0), (0.0, 0.0)).unwrap();
        assert_eq!((a.x_a, a.y_a), b.center());
        assert_eq!(a.aligned_box, b);

        let a = align(&b, (4.0, 0.0), (2.0, 0.0)).unwrap();
        assert_eq!(a.x_a, 103.0);
        assert_eq!(a.aligned_box.center().0, 103.0);

        let a = align(&b, (3.7, -1.3), (-3.7, 1.3)).unwrap();
        assert_eq!((a.x_a, a.y_a), b.center());
    }

    #[test]
    fn square_cells_for_tall_regions() {
        // 5x3 coarse map of a 48x100 region: steps 16 (x) and 20 (y)
        let frame = MapFrame::new(16.0, 16.0, 32.0, 2.0, 1.6).unwrap();
        let m = ConfidenceMap::new(5, 3, vec![0.0; 15], frame).unwrap();
        assert_eq!(square_cell_dims(&m), (6, 3));
    }
}
