//! Body-part semantics: part labels cut from the visible box, the spatial
//! penalty between a part and the anchor, and root/part score fusion.

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartKind {
    Head,
    Torso,
    Legs,
}

impl PartKind {
    /// Top to bottom.
    pub const ALL: [PartKind; 3] = [PartKind::Head, PartKind::Torso, PartKind::Legs];

    pub fn name(self) -> &'static str {
        match self {
            PartKind::Head => "head",
            PartKind::Torso => "torso",
            PartKind::Legs => "legs",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Output of one part detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartDetection {
    pub kind: PartKind,
    pub score: f64,
    /// Part position in image pixels.
    pub position: (f64, f64),
}

/// Part weights `w_i` (summing to one) and penalty weights `a`, `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeParams {
    pub weights: [f64; 3],
    pub a: f64,
    pub b: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            weights: [1.0 / 3.0; 3],
            a: -0.1,
            b: 0.0,
        }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = self.weights.iter().chain([&self.a, &self.b]).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("merge parameters must be finite"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "part weights must sum to 1, got {sum} from {:?}",
                self.weights
            )));
        }
        Ok(())
    }
}

/// Split a visible-region box into head, torso and legs: full-width
/// horizontal thirds, top to bottom.
pub fn part_boxes(bb_vis: &BBox) -> [(PartKind, BBox); 3] {
    let third = bb_vis.h() / 3.0;
    // the last edge is the box bottom itself so the thirds tile exactly
    let edges = [bb_vis.y(), bb_vis.y() + third, bb_vis.y() + 2.0 * third, bb_vis.bottom()];
    PartKind::ALL.map(|kind| {
        let i = kind.index();
        let part = BBox::new(bb_vis.x(), edges[i], bb_vis.w(), edges[i + 1] - edges[i])
            .expect("thirds of a valid box are valid");
        (kind, part)
    })
}

/// Spatial term between a part position and the anchor:
/// `a * (|dx| + |dy|) + b * (|dx|^2 - |dy|^2)`, evaluated as written
/// (note the minus on the vertical square).
pub fn penalty(part_pos: (f64, f64), anchor: (f64, f64), a: f64, b: f64) -> f64 {
    let dx = (part_pos.0 - anchor.0).abs();
    let dy = (part_pos.1 - anchor.1).abs();
    a * (dx + dy) + b * (dx * dx - dy * dy)
}

/// Final detection score: `score_root + sum_i w_i * (score_i + P_i)`, with
/// the weights normalized by their sum.
pub fn merge(
    score_root: f64,
    parts: &[PartDetection; 3],
    anchor: (f64, f64),
    params: &MergeParams,
) -> Result<f64> {
    merge_with_anchors(score_root, parts, &[anchor; 3], params)
}

/// [`merge`] with a separate reference position for each part.
pub fn merge_with_anchors(
    score_root: f64,
    parts: &[PartDetection; 3],
    anchors: &[(f64, f64); 3],
    params: &MergeParams,
) -> Result<f64> {
    params.validate()?;
    // Products and sums are carried with their exact rounding errors and
    // the weights are divided out by their own (exact) sum, so the
    // representation error of weights like 1/3 cancels and the result is
    // rounded once at the end.
    let (mut dot, mut dot_err) = (0.0, 0.0);
    let (mut wsum, mut wsum_err) = (0.0, 0.0);
    for ((&w, part), anchor) in params.weights.iter().zip(parts).zip(anchors) {
        let term = part.score + penalty(part.position, *anchor, params.a, params.b);
        let prod = w * term;
        let (s, e) = two_sum(dot, prod);
        dot = s;
        dot_err += w.mul_add(term, -prod) + e;
        let (s, e) = two_sum(wsum, w);
        wsum = s;
        wsum_err += e;
    }
    let (dot, dot_err) = two_sum(dot, dot_err);
    let q_hi = dot / wsum;
    let rem = (-q_hi).mul_add(wsum, dot) + dot_err - q_hi * wsum_err;
    let q_lo = rem / wsum;
    let (total, err) = two_sum(score_root, q_hi);
    Ok(total + (err + q_lo))
}

// a + b as (rounded sum, exact rounding error)
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}
