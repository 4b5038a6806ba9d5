//! Miss-rate versus FPPI evaluation.
//!
//! Ground truth outside the evaluated subset is kept as ignore regions:
//! detections landing on them count as neither true nor false positives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, ScoredBox};

/// IoU a detection must exceed to count as a hit.
pub const DEFAULT_MATCH_IOU: f64 = 0.5;
/// Floor applied to miss rates before taking logarithms.
pub const MISS_RATE_FLOOR: f64 = 1e-4;
/// Number of log-spaced FPPI reference points in `[1e-2, 1e0]`.
pub const REFERENCE_POINTS: usize = 9;

/// One ground-truth pedestrian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub bb_full: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bb_vis: Option<BBox>,
    #[serde(default)]
    pub ignore: bool,
}

impl Annotation {
    pub fn new(image_id: impl Into<String>, bb_full: BBox) -> Self {
        Annotation {
            image_id: image_id.into(),
            bb_full,
            bb_vis: None,
            ignore: false,
        }
    }

    /// Visible region, falling back to the full extent.
    pub fn visible(&self) -> BBox {
        self.bb_vis.unwrap_or(self.bb_full)
    }

    /// Visible area over full area.
    pub fn visibility(&self) -> f64 {
        match self.bb_vis {
            None => 1.0,
            Some(v) => (v.area() / self.bb_full.area()).min(1.0),
        }
    }

    /// Problems with this record, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(v) = self.bb_vis {
            if !self.bb_full.contains_box(&v, 1e-9) {
                out.push(format!(
                    "annotation on {}: bb_vis {:?} is not inside bb_full {:?}",
                    self.image_id,
                    <[f64; 4]>::from(v),
                    <[f64; 4]>::from(self.bb_full)
                ));
            }
        }
        out
    }
}

/// Subset predicate: taller than `min_height` and more visible than
/// `min_visibility`, both strict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetFilter {
    pub min_height: f64,
    pub min_visibility: f64,
}

impl Default for SubsetFilter {
    /// The "reasonable" subset.
    fn default() -> Self {
        SubsetFilter {
            min_height: 50.0,
            min_visibility: 0.65,
        }
    }
}

impl SubsetFilter {
    pub fn accepts(&self, ann: &Annotation) -> bool {
        ann.bb_full.h() > self.min_height && ann.visibility() > self.min_visibility
    }
}

/// Mark annotations outside the subset as ignore regions. Nothing is
/// removed and already-ignored annotations stay ignored.
pub fn reasonable_filter(anns: &[Annotation], filter: &SubsetFilter) -> Vec<Annotation> {
    anns.iter()
        .map(|a| Annotation {
            ignore: a.ignore || !filter.accepts(a),
            ..a.clone()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetLabel {
    TruePositive,
    FalsePositive,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtStatus {
    /// Matched by the detection at this index.
    Matched(usize),
    Missed,
    Ignored,
}

/// Matching result for one image, indexed like the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatch {
    pub det_labels: Vec<DetLabel>,
    pub gt_status: Vec<GtStatus>,
}

/// Greedy one-to-one matching for one image.
///
/// Detections are visited by descending score (ties by index). Each takes
/// the unmatched evaluable annotation with the highest IoU above `iou_thr`
/// (ties by index); failing that it is `Ignored` if it overlaps an ignore
/// annotation above `iou_thr`, otherwise a false positive.
pub fn match_image(dets: &[ScoredBox], anns: &[Annotation], iou_thr: f64) -> Result<ImageMatch> {
    if !(iou_thr > 0.0 && iou_thr < 1.0) {
        return Err(Error::invalid(format!(
            "matching IoU threshold must lie in (0, 1), got {iou_thr}"
        )));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score().total_cmp(&dets[a].score()));

    let mut gt_status: Vec<GtStatus> = anns
        .iter()
        .map(|a| if a.ignore { GtStatus::Ignored } else { GtStatus::Missed })
        .collect();
    let mut det_labels = vec![DetLabel::FalsePositive; dets.len()];

    for d in order {
        let bbox = &dets[d].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (g, ann) in anns.iter().enumerate() {
            if gt_status[g] != GtStatus::Missed {
                continue;
            }
            let o = iou(bbox, &ann.bb_full);
            if o > iou_thr && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        det_labels[d] = match best {
            Some((g, _)) => {
                gt_status[g] = GtStatus::Matched(d);
                DetLabel::TruePositive
            }
            None => {
                let on_ignore = anns
                    .iter()
                    .any(|a| a.ignore && iou(bbox, &a.bb_full) > iou_thr);
                if on_ignore {
                    DetLabel::Ignored
                } else {
                    DetLabel::FalsePositive
                }
            }
        };
    }
    Ok(ImageMatch {
        det_labels,
        gt_status,
    })
}

/// A scored detection with its matching outcome, pooled across images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledDetection {
    pub score: f64,
    pub label: DetLabel,
}

/// One operating point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fppi: f64,
    pub miss_rate: f64,
}

/// Miss rate against false positives per image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    /// Sweep points, in descending threshold order (so ascending FPPI).
    pub points: Vec<CurvePoint>,
    pub reference_fppi: [f64; REFERENCE_POINTS],
    pub reference_miss_rate: [f64; REFERENCE_POINTS],
    pub log_avg_mr: f64,
    pub n_images: usize,
    pub n_evaluable_gt: usize,
}

/// FPPI references `10^(-2 + k/4)`, `k = 0..=8`.
pub fn reference_fppi() -> [f64; REFERENCE_POINTS] {
    std::array::from_fn(|k| 10f64.powf(-2.0 + k as f64 / 4.0))
}

/// Threshold sweep and log-average miss rate.
///
/// Every distinct score of a TP or FP detection is a threshold. The miss
/// rate at a reference FPPI is that of the last sweep point whose FPPI does
/// not exceed it (1 when none does). The summary is the geometric mean of
/// the nine reference miss rates, each floored at [`MISS_RATE_FLOOR`].
pub fn curve(dets: &[LabeledDetection], n_images: usize, n_evaluable_gt: usize) -> Result<EvalCurve> {
    if n_images == 0 {
        return Err(Error::invalid("evaluation needs at least one image"));
    }
    if n_evaluable_gt == 0 {
        return Err(Error::UndefinedMetric(
            "no evaluable ground truth; miss rate is undefined".into(),
        ));
    }
    let mut scored: Vec<LabeledDetection> = dets
        .iter()
        .copied()
        .filter(|d| d.label != DetLabel::Ignored)
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].score;
        while i < scored.len() && scored[i].score == threshold {
            match scored[i].label {
                DetLabel::TruePositive => tp += 1,
                DetLabel::FalsePositive => fp += 1,
                DetLabel::Ignored => {}
            }
            i += 1;
        }
        points.push(CurvePoint {
            threshold,
            tp,
            fp,
            fppi: fp as f64 / n_images as f64,
            miss_rate: 1.0 - tp as f64 / n_evaluable_gt as f64,
        });
    }

    let refs = reference_fppi();
    let reference_miss_rate = refs.map(|r| {
        points
            .iter()
            .take_while(|p| p.fppi <= r)
            .last()
            .map_or(1.0, |p| p.miss_rate)
    });
    let log_avg_mr = log_average(&reference_miss_rate);

    Ok(EvalCurve {
        points,
        reference_fppi: refs,
        reference_miss_rate,
        log_avg_mr,
        n_images,
        n_evaluable_gt,
    })
}

/// Geometric mean of floored miss rates.
pub fn log_average(miss_rates: &[f64]) -> f64 {
    let floored: Vec<f64> = miss_rates.iter().map(|m| m.max(MISS_RATE_FLOOR)).collect();
    // exp(ln(x)) need not round-trip; a constant sequence averages to itself
    if floored.windows(2).all(|w| w[0] == w[1]) {
        return floored.first().copied().unwrap_or(1.0);
    }
    let mean_log = floored.iter().map(|m| m.ln()).sum::<f64>() / floored.len() as f64;
    mean_log.exp()
}

/// Detections and annotations for one image.
#[derive(Debug, Clone, Default)]
pub struct ImageEval {
    pub image_id: String,
    pub detections: Vec<ScoredBox>,
    pub annotations: Vec<Annotation>,
}

/// Filter, match and sweep over a set of images.
pub fn evaluate(images: &[ImageEval], filter: &SubsetFilter, iou_thr: f64) -> Result<EvalCurve> {
    let mut pooled = Vec::new();
    let mut n_evaluable = 0;
    for img in images {
        let anns = reasonable_filter(&img.annotations, filter);
        n_evaluable += anns.iter().filter(|a| !a.ignore).count();
        let m = match_image(&img.detections, &anns, iou_thr)?;
        pooled.extend(
            img.detections
                .iter()
                .zip(&m.det_labels)
                .map(|(d, &label)| LabeledDetection {
                    score: d.score(),
                    label,
                }),
        );
    }
    curve(&pooled, images.len(), n_evaluable)
}

impl EvalCurve {
    /// Two-column `fppi miss_rate` table, one sweep point per line, values
    /// in shortest round-trip form.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# fppi miss_rate\n");
        for p in &self.points {
            out.push_str(&format!("{} {}\n", p.fppi, p.miss_rate));
        }
        out
    }

    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            log_avg_mr: self.log_avg_mr,
            n_images: self.n_images,
            n_evaluable_gt: self.n_evaluable_gt,
            n_points: self.points.len(),
            reference_fppi: self.reference_fppi.to_vec(),
            reference_miss_rate: self.reference_miss_rate.to_vec(),
        }
    }
}

/// Summary record written next to the curve table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub log_avg_mr: f64,
    pub n_images: usize,
    pub n_evaluable_gt: usize,
    pub n_points: usize,
    pub reference_fppi: Vec<f64>,
    pub reference_miss_rate: Vec<f64>,
}
