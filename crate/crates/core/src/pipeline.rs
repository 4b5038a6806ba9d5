//! Per-image composition of the stages: saliency re-scoring and NMS, then
//! alignment, part evaluation and score merging.

use rayon::prelude::*;

use crate::alignment::{align_proposal_traced, coarse_position, prepare_map, stitch_region, target_size, AlignmentTrace};
use crate::config::RunConfig;
use crate::error::Result;
use crate::geometry::{expand_box, nms_indices, BBox, ScoredBox};
use crate::heatmap::{Detector, ScorerBackend};
use crate::parts::{merge_with_anchors, part_boxes, PartDetection, PartKind};
use crate::saliency::{reweight_all, SaliencyMap};

/// Re-score proposals with the saliency map (unless disabled or absent),
/// then suppress overlaps. Returns `(proposal index, re-scored box)` in
/// descending score order.
pub fn detect_image(
    proposals: &[ScoredBox],
    saliency: Option<&SaliencyMap>,
    cfg: &RunConfig,
) -> Result<Vec<(usize, ScoredBox)>> {
    let scored = match saliency {
        Some(map) if !cfg.no_saliency => reweight_all(proposals, map, cfg.th_b)?,
        _ => proposals.to_vec(),
    };
    Ok(nms_indices(&scored, cfg.nms_iou)?.into_iter().map(|i| (i, scored[i])).collect())
}

/// One detection after alignment and part merging.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDetection {
    pub input: ScoredBox,
    pub trace: AlignmentTrace,
    pub parts: [PartDetection; 3],
    /// Nominal part centers inside the aligned box; penalties are measured
    /// from these.
    pub part_anchors: [(f64, f64); 3],
    pub score: f64,
}

impl AlignedDetection {
    pub fn bbox(&self) -> BBox {
        self.trace.anchor.aligned_box
    }

    pub fn scored_box(&self) -> Result<ScoredBox> {
        ScoredBox::new(self.bbox(), self.score)
    }
}

/// Run one part detector over the expanded part box and locate the part
/// as the mean of its FCN and CAM coarse positions.
pub fn evaluate_part<B: ScorerBackend + ?Sized>(
    backend: &B,
    image_id: &str,
    kind: PartKind,
    part_box: &BBox,
    cfg: &RunConfig,
) -> Result<PartDetection> {
    let params = cfg.align_params();
    let region = expand_box(part_box, params.expand_ratio)?;
    let maps = stitch_region(backend, image_id, Detector::Part(kind), &region, &params)?;
    let (tw, th) = target_size(params.enlarge, region.w(), region.h())?;
    let fcn = coarse_position(&prepare_map(&maps.fcn, params.upsample)?, tw, th)?;
    let cam = coarse_position(&prepare_map(&maps.cam, params.upsample)?, tw, th)?;
    Ok(PartDetection {
        kind,
        score: maps.score,
        position: ((fcn.x_p + cam.x_p) / 2.0, (fcn.y_p + cam.y_p) / 2.0),
    })
}

/// Align a detection, evaluate its parts around the anchor and merge.
///
/// The root score is the detection's own score.
pub fn align_detection<B: ScorerBackend + ?Sized>(
    backend: &B,
    image_id: &str,
    det: &ScoredBox,
    cfg: &RunConfig,
) -> Result<AlignedDetection> {
    let trace = align_proposal_traced(backend, &det.bbox, image_id, &cfg.align_params())?;
    let aligned = trace.anchor.aligned_box;
    let boxes = part_boxes(&aligned);
    let mut parts = Vec::with_capacity(3);
    for (kind, b) in &boxes {
        parts.push(evaluate_part(backend, image_id, *kind, b, cfg)?);
    }
    let parts: [PartDetection; 3] = parts.try_into().expect("three parts");
    let part_anchors = boxes.map(|(_, b)| b.center());

    let (sx, sy) = if cfg.normalize_penalty { (aligned.w(), aligned.h()) } else { (1.0, 1.0) };
    let scaled = parts.map(|p| PartDetection {
        position: (p.position.0 / sx, p.position.1 / sy),
        ..p
    });
    let scaled_anchors = part_anchors.map(|(x, y)| (x / sx, y / sy));
    let score = merge_with_anchors(det.score(), &scaled, &scaled_anchors, &cfg.merge_params())?;
    Ok(AlignedDetection {
        input: *det,
        trace,
        parts,
        part_anchors,
        score,
    })
}

/// Align every detection of one image; errors name the failing detection.
pub fn align_image<B: ScorerBackend + ?Sized>(
    backend: &B,
    image_id: &str,
    dets: &[ScoredBox],
    cfg: &RunConfig,
) -> Result<Vec<AlignedDetection>> {
    let run = |(i, d): (usize, &ScoredBox)| {
        align_detection(backend, image_id, d, cfg).map_err(|e| e.context(format!("image {image_id} detection {i}")))
    };
    if backend.concurrent() {
        dets.par_iter().enumerate().map(run).collect()
    } else {
        dets.iter().enumerate().map(run).collect()
    }
}
