//! Independent reference implementations used as test oracles.
//!
//! Everything here is written the slow, obvious way and shares no code
//! with the library beyond its data types.

#![allow(dead_code)]

use std::path::PathBuf;

use pedalign::data::scene::SceneField;
use pedalign::evaluation::{Annotation, SubsetFilter};
use pedalign::geometry::{BBox, ScoredBox};
use pedalign::heatmap::Detector;

pub fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::new(x, y, w, h).unwrap()
}

pub fn sb(x: f64, y: f64, w: f64, h: f64, s: f64) -> ScoredBox {
    ScoredBox::new(bx(x, y, w, h), s).unwrap()
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

/// IoU of integer-aligned boxes by counting unit pixels.
pub fn raster_iou(a: [i64; 4], b: [i64; 4]) -> f64 {
    let inside = |r: [i64; 4], x: i64, y: i64| x >= r[0] && x < r[0] + r[2] && y >= r[1] && y < r[1] + r[3];
    let lo_x = a[0].min(b[0]);
    let hi_x = (a[0] + a[2]).max(b[0] + b[2]);
    let lo_y = a[1].min(b[1]);
    let hi_y = (a[1] + a[3]).max(b[1] + b[3]);
    let (mut inter, mut union) = (0u64, 0u64);
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU from corner coordinates.
pub fn corner_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.x(), a.y(), a.x() + a.w(), a.y() + a.h());
    let (bx1, by1, bx2, by2) = (b.x(), b.y(), b.x() + b.w(), b.y() + b.h());
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)
}

/// Greedy NMS by repeated arg-max over the surviving pool.
pub fn brute_nms(cands: &[ScoredBox], thr: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; cands.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..cands.len() {
            if alive[i] && best.is_none_or(|b| cands[i].score() > cands[b].score()) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(b);
        alive[b] = false;
        for i in 0..cands.len() {
            if alive[i] && corner_iou(&cands[b].bbox, &cands[i].bbox) > thr {
                alive[i] = false;
            }
        }
    }
    kept
}

/// Best window `(row, col, mean)` by full enumeration, keeping the first
/// strict maximum in row-major order.
pub fn brute_window(values: &[f64], cols: usize, win_rows: usize, win_cols: usize) -> (usize, usize, f64) {
    let rows = values.len() / cols;
    let mut best = (0, 0, f64::NEG_INFINITY);
    for r in 0..=rows - win_rows {
        for c in 0..=cols - win_cols {
            let mut cells = Vec::new();
            for rr in r..r + win_rows {
                for cc in c..c + win_cols {
                    cells.push(values[rr * cols + cc]);
                }
            }
            let mean = cells.iter().sum::<f64>() / cells.len() as f64;
            if mean > best.2 {
                best = (r, c, mean);
            }
        }
    }
    best
}

/// Label of one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Tp,
    Fp,
    Ignored,
}

/// Matching by exhaustive search: among all one-to-one assignments of
/// detections to evaluable annotations with IoU above `thr`, take the one
/// whose per-detection `(IoU, -gt index)` sequence in descending score
/// order is lexicographically largest. This is exactly what a greedy pass
/// by score produces.
pub fn exhaustive_match(dets: &[ScoredBox], anns: &[Annotation], thr: f64) -> Vec<Label> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score().total_cmp(&dets[a].score()).then(a.cmp(&b)));

    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    fn search(
        k: usize,
        order: &[usize],
        dets: &[ScoredBox],
        anns: &[Annotation],
        thr: f64,
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        best: &mut Option<(Vec<(f64, i64)>, Vec<Option<usize>>)>,
    ) {
        if k == order.len() {
            let key: Vec<(f64, i64)> = current
                .iter()
                .zip(order)
                .map(|(g, &d)| match g {
                    Some(g) => (corner_iou(&dets[d].bbox, &anns[*g].bb_full), -(*g as i64)),
                    None => (f64::NEG_INFINITY, 0),
                })
                .collect();
            let better = match best {
                None => true,
                Some((bk, _)) => key.partial_cmp(bk) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                *best = Some((key, current.clone()));
            }
            return;
        }
        let d = order[k];
        current.push(None);
        search(k + 1, order, dets, anns, thr, used, current, best);
        current.pop();
        for g in 0..anns.len() {
            if !used[g] && !anns[g].ignore && corner_iou(&dets[d].bbox, &anns[g].bb_full) > thr {
                used[g] = true;
                current.push(Some(g));
                search(k + 1, order, dets, anns, thr, used, current, best);
                current.pop();
                used[g] = false;
            }
        }
    }

    let mut best = None;
    search(0, &order, dets, anns, thr, &mut vec![false; anns.len()], &mut Vec::new(), &mut best);
    let (_, assign) = best.unwrap_or_default();
    let mut labels = vec![Label::Fp; dets.len()];
    for (k, &d) in order.iter().enumerate() {
        labels[d] = if assign.get(k).copied().flatten().is_some() {
            Label::Tp
        } else if anns.iter().any(|a| a.ignore && corner_iou(&dets[d].bbox, &a.bb_full) > thr) {
            Label::Ignored
        } else {
            Label::Fp
        };
    }
    labels
}

/// Subset filter: annotations too small or too occluded become ignores.
pub fn oracle_filter(anns: &[Annotation], f: &SubsetFilter) -> Vec<Annotation> {
    anns.iter()
        .map(|a| {
            let vis = a.bb_vis.map_or(1.0, |v| (v.w() * v.h() / (a.bb_full.w() * a.bb_full.h())).min(1.0));
            let keep = a.bb_full.h() > f.min_height && vis > f.min_visibility;
            Annotation {
                ignore: a.ignore || !keep,
                ..a.clone()
            }
        })
        .collect()
}

/// Result of the brute-force sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// `(fppi, miss_rate)` per distinct threshold, descending threshold.
    pub points: Vec<(f64, f64)>,
    pub reference_miss_rate: [f64; 9],
    pub log_avg_mr: f64,
}

/// Threshold sweep by recounting from scratch at every distinct score.
pub fn brute_sweep(labeled: &[(f64, Label)], n_images: usize, n_gt: usize) -> SweepResult {
    let mut thresholds: Vec<f64> = labeled
        .iter()
        .filter(|(_, l)| *l != Label::Ignored)
        .map(|(s, _)| *s)
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let count = |want: Label| labeled.iter().filter(|(s, l)| *l == want && *s >= t).count();
            let (tp, fp) = (count(Label::Tp), count(Label::Fp));
            (fp as f64 / n_images as f64, 1.0 - tp as f64 / n_gt as f64)
        })
        .collect();
    let reference_miss_rate: [f64; 9] = std::array::from_fn(|k| {
        let r = 10f64.powf(-2.0 + k as f64 / 4.0);
        let mut pick: Option<(f64, f64)> = None;
        for &(fppi, mr) in &points {
            if fppi <= r && pick.is_none_or(|(pf, pm)| fppi > pf || (fppi == pf && mr < pm)) {
                pick = Some((fppi, mr));
            }
        }
        pick.map_or(1.0, |p| p.1)
    });
    let floored = reference_miss_rate.map(|m| m.max(1e-4));
    let log_avg_mr = if floored.iter().all(|&m| m == floored[0]) {
        floored[0]
    } else {
        let mut s = 0.0;
        for m in floored {
            s += m.ln();
        }
        (s / 9.0).exp()
    };
    SweepResult {
        points,
        reference_miss_rate,
        log_avg_mr,
    }
}

/// Response of the root detector evaluated directly at image point `(x, y)`.
pub fn dense_root(field: &SceneField, x: f64, y: f64) -> f64 {
    field.response(Detector::Root, x, y)
}
