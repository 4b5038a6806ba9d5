//! Randomized invariants, each checked against an independent oracle where
//! one exists.

mod common;

use common::*;
use pedalign::alignment::{align, coarse_position, confidence_ratio, delta, window_at};
use pedalign::data::grid::{format_grid, parse_grid, Grid};
use pedalign::data::scene::{generate_scene, SceneParams, SyntheticBackend};
use pedalign::data::{load_dataset, save_dataset, AnnotationRecord, Dataset, DetectionRecord, ImageInfo};
use pedalign::evaluation::{curve, match_image, Annotation, DetLabel, LabeledDetection};
use pedalign::geometry::{expand_box, iou, nms_indices, MapFrame};
use pedalign::heatmap::{shift_and_stitch, stitch, upsample, ConfidenceMap, Detector};
use pedalign::parts::{merge, part_boxes, penalty, MergeParams, PartDetection, PartKind};
use pedalign::saliency::{reweight, saliency_ground_truth, SaliencyMap};
use pedalign::RunConfig;
use proptest::prelude::*;

fn int_box() -> impl Strategy<Value = [i64; 4]> {
    (0i64..40, 0i64..40, 1i64..25, 1i64..25).prop_map(|(x, y, w, h)| [x, y, w, h])
}

fn real_box() -> impl Strategy<Value = pedalign::BBox> {
    (-50.0..300.0f64, -50.0..300.0f64, 0.5..150.0f64, 0.5..150.0f64).prop_map(|(x, y, w, h)| bx(x, y, w, h))
}

fn to_box(b: [i64; 4]) -> pedalign::BBox {
    bx(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64)
}

fn map_from(rows: usize, cols: usize, values: Vec<f64>) -> ConfidenceMap {
    ConfidenceMap::new(rows, cols, values, MapFrame::new(0.5, 0.5, 1.0, 1.0, 1.0).unwrap()).unwrap()
}

fn random_map() -> impl Strategy<Value = ConfidenceMap> {
    (1usize..=30, 1usize..=30).prop_flat_map(|(r, c)| {
        // coarse levels make exact ties common
        prop::collection::vec((0u8..6).prop_map(|v| v as f64 / 5.0), r * c).prop_map(move |v| map_from(r, c, v))
    })
}

proptest! {
    #[test]
    fn iou_matches_rasterization(a in int_box(), b in int_box()) {
        let got = iou(&to_box(a), &to_box(b));
        prop_assert!((got - raster_iou(a, b)).abs() <= 1e-12);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in real_box(), b in real_box()) {
        let ab = iou(&a, &b);
        prop_assert_eq!(ab, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() <= 1e-12);
        prop_assert!((ab - corner_iou(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn expansion_keeps_center(b in real_box(), ratio in 0.0..2.0f64) {
        let e = expand_box(&b, ratio).unwrap();
        let (c0, c1) = (b.center(), e.center());
        prop_assert!((c0.0 - c1.0).abs() <= 1e-9 && (c0.1 - c1.1).abs() <= 1e-9);
        prop_assert!((e.w() - b.w() * (1.0 + ratio)).abs() <= 1e-9);
        prop_assert!((e.h() - b.h() * (1.0 + ratio)).abs() <= 1e-9);
    }

    #[test]
    fn nms_matches_brute_force(
        boxes in prop::collection::vec((int_box(), 0u8..10), 0..20),
        thr in prop::sample::select(vec![0.1, 0.3, 0.5, 0.7, 1.0]),
    ) {
        let cands: Vec<_> = boxes.iter().map(|(b, s)| pedalign::ScoredBox::new(to_box(*b), *s as f64 / 10.0).unwrap()).collect();
        let got = nms_indices(&cands, thr).unwrap();
        prop_assert_eq!(&got, &brute_nms(&cands, thr));
        for (i, &a) in got.iter().enumerate() {
            for &b in &got[i + 1..] {
                prop_assert!(iou(&cands[a].bbox, &cands[b].bbox) <= thr);
            }
        }
    }

    #[test]
    fn saliency_branch_above_threshold_is_identity(
        b in int_box(), s in 0.0..1.0f64, th in 0.0..1.0f64, fill in 0.0..1.0f64,
    ) {
        let map = SaliencyMap::constant(80, 80, fill).unwrap();
        let p = pedalign::ScoredBox::new(to_box(b), s).unwrap();
        let out = reweight(&p, &map, th).unwrap();
        if s > th {
            prop_assert_eq!(out.score().to_bits(), s.to_bits());
        } else {
            prop_assert!((out.score() - s * fill).abs() <= 1e-12);
        }
        prop_assert_eq!(out.bbox, p.bbox);
    }

    #[test]
    fn ground_truth_saliency_covers_exactly_the_boxes(gt in prop::collection::vec(int_box(), 0..5)) {
        let map = saliency_ground_truth(64, 64, &gt.iter().map(|b| to_box(*b)).collect::<Vec<_>>()).unwrap();
        let mut covered = 0usize;
        for y in 0..64i64 {
            for x in 0..64i64 {
                let inside = gt.iter().any(|b| x >= b[0] && x < b[0] + b[2] && y >= b[1] && y < b[1] + b[3]);
                prop_assert_eq!(map.get(y as usize, x as usize), if inside { 1.0 } else { 0.0 });
                covered += inside as usize;
            }
        }
        prop_assert_eq!(map.mean(), covered as f64 / 4096.0);
        for b in &gt {
            prop_assert_eq!(map.region_mean(&to_box(*b)).unwrap(), 1.0);
        }
    }

    #[test]
    fn coarse_position_matches_enumeration(map in random_map(), fw in 0.05..1.0f64, fh in 0.05..1.0f64) {
        let tw = (map.cols() as f64 * fw).max(0.5);
        let th = (map.rows() as f64 * fh).max(0.5);
        let got = coarse_position(&map, tw, th).unwrap();
        let (r, c, mean) = brute_window(map.values(), map.cols(), got.window.rows, got.window.cols);
        prop_assert_eq!((got.window.row, got.window.col), (r, c));
        prop_assert_eq!(got.mean_value, mean);
        prop_assert_eq!(got.window.rows, ((th).round() as usize).max(1));
        prop_assert_eq!(got.window.cols, ((tw).round() as usize).max(1));
        // unit cells centered at half-integers
        prop_assert_eq!(got.x_p, c as f64 + got.window.cols as f64 / 2.0);
        prop_assert_eq!(got.y_p, r as f64 + got.window.rows as f64 / 2.0);
    }

    #[test]
    fn ratio_stays_in_range(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..40)) {
        let (t, o): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = confidence_ratio(&t, &o).unwrap();
        prop_assert!((0.0..=2.0).contains(&r), "r = {}", r);
        prop_assert_eq!(confidence_ratio(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn delta_vanishes_at_the_original_center(map in random_map(), fw in 0.05..1.0f64, fh in 0.05..1.0f64) {
        let target = coarse_position(&map, (map.cols() as f64 * fw).max(0.5), (map.rows() as f64 * fh).max(0.5)).unwrap();
        let d = delta(&map, &target, (target.x_p, target.y_p), false).unwrap();
        prop_assert_eq!(d, (0.0, 0.0));
        let w = window_at(&map, target.window.rows, target.window.cols, (target.x_p, target.y_p)).unwrap();
        prop_assert_eq!(w, target.window);
    }

    #[test]
    fn opposite_deltas_keep_the_center(b in real_box(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let a = align(&b, (dx, dy), (-dx, -dy)).unwrap();
        prop_assert_eq!((a.x_a, a.y_a), b.center());
        let same = align(&b, (dx, dy), (dx, dy)).unwrap();
        prop_assert!((same.x_a - (b.center().0 + dx)).abs() <= 1e-9);
        prop_assert_eq!(same.aligned_box.w(), b.w());
    }

    #[test]
    fn stitched_map_interlaces_every_shift(f in 1usize..5, rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let frame = |i: usize| MapFrame::new((i % f) as f64 * 8.0 / f as f64 + 4.0, (i / f) as f64 * 8.0 / f as f64 + 4.0, 8.0, 1.0, 1.0).unwrap();
        let maps: Vec<ConfidenceMap> = (0..f * f)
            .map(|i| ConfidenceMap::from_fn(rows, cols, frame(i), |r, c| (seed % 97) as f64 + (i * 1000 + r * 10 + c) as f64).unwrap())
            .collect();
        let out = stitch(&maps, f).unwrap();
        let mut got: Vec<f64> = out.values().to_vec();
        let mut want: Vec<f64> = maps.iter().flat_map(|m| m.values().to_vec()).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        prop_assert_eq!(got, want);
        prop_assert_eq!(out.frame().stride(), 8.0 / f as f64);
    }

    #[test]
    fn upsampling_keeps_corners_and_range(map in random_map(), gr in 0usize..20, gc in 0usize..20) {
        let up = upsample(&map, map.rows() + gr, map.cols() + gc).unwrap();
        let (lo, hi) = map.min_max();
        prop_assert!(up.values().iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
        if map.rows() > 1 && map.cols() > 1 {
            let (ur, uc) = (up.rows() - 1, up.cols() - 1);
            let (mr, mc) = (map.rows() - 1, map.cols() - 1);
            prop_assert_eq!(up.get(0, 0), map.get(0, 0));
            prop_assert!((up.get(ur, uc) - map.get(mr, mc)).abs() <= 1e-12);
            let first = up.frame().cell_center(0.0, 0.0);
            let last = up.frame().cell_center(ur as f64, uc as f64);
            let (f0, l0) = (map.frame().cell_center(0.0, 0.0), map.frame().cell_center(mr as f64, mc as f64));
            prop_assert!((first.0 - f0.0).abs() < 1e-9 && (last.1 - l0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn penalty_depends_only_on_absolute_offsets(
        px in -100.0..100.0f64, py in -100.0..100.0f64, ax in -100.0..100.0f64, ay in -100.0..100.0f64,
        a in -2.0..2.0f64, b in -2.0..2.0f64,
    ) {
        let p = penalty((px, py), (ax, ay), a, b);
        prop_assert_eq!(p, penalty((ax, ay), (px, py), a, b));
        prop_assert!((p - penalty((2.0 * ax - px, 2.0 * ay - py), (ax, ay), a, b)).abs() <= 1e-9);
        prop_assert_eq!(penalty((px, py), (ax, ay), 0.0, 0.0), 0.0);
    }

    #[test]
    fn merge_is_linear_in_part_scores(
        root in -1.0..1.0f64,
        scores in prop::array::uniform3(0.0..1.0f64),
        positions in prop::array::uniform3((-20.0..20.0f64, -20.0..20.0f64)),
        raw in prop::array::uniform3(0.01..1.0f64),
        idx in 0usize..3,
        eps in -1e-3..1e-3f64,
    ) {
        let total: f64 = raw.iter().sum();
        let mut weights = raw.map(|w| w / total);
        weights[2] = 1.0 - weights[0] - weights[1];
        let params = MergeParams { weights, a: -0.1, b: 0.01 };
        let parts = |s: [f64; 3]| std::array::from_fn(|i| PartDetection { kind: PartKind::ALL[i], score: s[i], position: positions[i] });
        let base = merge(root, &parts(scores), (0.0, 0.0), &params).unwrap();
        let mut bumped = scores;
        bumped[idx] += eps;
        let moved = merge(root, &parts(bumped), (0.0, 0.0), &params).unwrap();
        prop_assert!((moved - base - weights[idx] * eps).abs() <= 1e-12);

        // moving all weight to the best part never lowers the score
        let terms: Vec<f64> = (0..3).map(|i| scores[i] + penalty(positions[i], (0.0, 0.0), params.a, params.b)).collect();
        let best = (0..3).max_by(|&i, &j| terms[i].total_cmp(&terms[j])).unwrap();
        let mut one_hot = [0.0; 3];
        one_hot[best] = 1.0;
        let peaked = merge(root, &parts(scores), (0.0, 0.0), &MergeParams { weights: one_hot, ..params }).unwrap();
        prop_assert!(peaked >= base - 1e-12);
    }

    #[test]
    fn part_boxes_tile_the_visible_box(b in real_box()) {
        let parts = part_boxes(&b);
        let area: f64 = parts.iter().map(|(_, p)| p.area()).sum();
        prop_assert!((area - b.area()).abs() <= 1e-9 * b.area().max(1.0));
        for i in 0..3 {
            prop_assert!(b.contains_box(&parts[i].1, 1e-9));
            for j in i + 1..3 {
                prop_assert_eq!(parts[i].1.intersection_area(&parts[j].1), 0.0);
            }
        }
        prop_assert_eq!(parts[0].1.y(), b.y());
        prop_assert_eq!(parts[2].1.bottom(), b.bottom());
    }
}

fn small_instance() -> impl Strategy<Value = (Vec<pedalign::ScoredBox>, Vec<Annotation>)> {
    // a 3x3 lattice of nearby positions keeps overlaps frequent
    let det = (0i64..3, 0i64..3, 0u8..4).prop_map(|(x, y, s)| sb(x as f64 * 4.0, y as f64 * 4.0, 20.0, 40.0, s as f64 / 4.0));
    let ann = (0i64..3, 0i64..3, prop::bool::weighted(0.25))
        .prop_map(|(x, y, ignore)| Annotation { ignore, ..Annotation::new("a", bx(x as f64 * 5.0, y as f64 * 5.0, 20.0, 40.0)) });
    (prop::collection::vec(det, 0..=3), prop::collection::vec(ann, 0..=3))
}

fn to_oracle(l: DetLabel) -> Label {
    match l {
        DetLabel::TruePositive => Label::Tp,
        DetLabel::FalsePositive => Label::Fp,
        DetLabel::Ignored => Label::Ignored,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matching_equals_exhaustive_assignment((dets, anns) in small_instance()) {
        let got = match_image(&dets, &anns, 0.5).unwrap();
        let want = exhaustive_match(&dets, &anns, 0.5);
        prop_assert_eq!(got.det_labels.iter().map(|l| to_oracle(*l)).collect::<Vec<_>>(), want);
        let tps = got.det_labels.iter().filter(|l| **l == DetLabel::TruePositive).count();
        let matched = got.gt_status.iter().filter(|g| matches!(g, pedalign::evaluation::GtStatus::Matched(_))).count();
        prop_assert_eq!(tps, matched);
    }
}

proptest! {
    #[test]
    fn curve_matches_brute_sweep(
        labeled in prop::collection::vec((0u8..12, 0u8..3), 0..60),
        n_images in 1usize..8,
        extra_gt in 0usize..10,
    ) {
        let labeled: Vec<(f64, Label)> = labeled
            .into_iter()
            .map(|(s, l)| (s as f64 / 12.0, [Label::Tp, Label::Fp, Label::Ignored][l as usize]))
            .collect();
        let n_gt = labeled.iter().filter(|(_, l)| *l == Label::Tp).count() + extra_gt;
        prop_assume!(n_gt > 0);
        let dets: Vec<LabeledDetection> = labeled
            .iter()
            .map(|(s, l)| LabeledDetection {
                score: *s,
                label: match l {
                    Label::Tp => DetLabel::TruePositive,
                    Label::Fp => DetLabel::FalsePositive,
                    Label::Ignored => DetLabel::Ignored,
                },
            })
            .collect();
        let c = curve(&dets, n_images, n_gt).unwrap();
        let want = brute_sweep(&labeled, n_images, n_gt);
        let got: Vec<(f64, f64)> = c.points.iter().map(|p| (p.fppi, p.miss_rate)).collect();
        prop_assert_eq!(got, want.points);
        prop_assert_eq!(c.reference_miss_rate, want.reference_miss_rate);
        prop_assert_eq!(c.log_avg_mr.to_bits(), want.log_avg_mr.to_bits());
        prop_assert!((1e-4..=1.0).contains(&c.log_avg_mr));
        for w in c.points.windows(2) {
            prop_assert!(w[0].fppi <= w[1].fppi && w[0].miss_rate >= w[1].miss_rate);
        }

        // ignored detections never move the curve
        let kept: Vec<LabeledDetection> = dets.iter().copied().filter(|d| d.label != DetLabel::Ignored).collect();
        prop_assert_eq!(curve(&kept, n_images, n_gt).unwrap(), c);
    }

    #[test]
    fn stitch_equals_dense_evaluation(seed in 0u64..50, fi in 0usize..4, ox in 0.0..200.0f64, oy in 0.0..100.0f64, w in 30.0..200.0f64) {
        let f = [1u32, 2, 4, 8][fi];
        let scene = generate_scene(&SceneParams::default(), seed).unwrap();
        let backend = SyntheticBackend::new().with_scene("s", scene.field.clone());
        let region = bx(ox, oy, w, w * 2.4);
        let map = shift_and_stitch(&backend, "s", Detector::Root, &region, f).unwrap();
        let (sx, sy) = (96.0 / region.w(), 160.0 / region.h());
        let step = 32.0 / f as f64;
        for i in 0..map.rows() {
            for j in 0..map.cols() {
                let x = region.x() + (16.0 + j as f64 * step) / sx;
                let y = region.y() + (16.0 + i as f64 * step) / sy;
                prop_assert!((map.get(i, j) - dense_root(&scene.field, x, y)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn grid_text_round_trips(rows in 1usize..6, cols in 1usize..6, values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 36), stride in 0.5..64.0f64) {
        let frame = MapFrame::new(values[0].abs().min(1e6), 3.25, stride, 0.6, 1.7).unwrap();
        let map = ConfidenceMap::new(rows, cols, values[..rows * cols].to_vec(), frame).unwrap();
        let grid = Grid::Confidence(map);
        prop_assert_eq!(parse_grid(&format_grid(&grid), "t").unwrap(), grid);
    }

    #[test]
    fn dataset_round_trips(
        boxes in prop::collection::vec((real_box(), any::<bool>(), 0.0..1.0f64), 0..12),
    ) {
        let mut ds = Dataset { images: vec![ImageInfo::new("a", 400, 400)], ..Dataset::default() };
        for (b, ignore, s) in &boxes {
            let Some(c) = b.clip(400.0, 400.0) else { continue };
            ds.annotations.push(AnnotationRecord::from(Annotation { ignore: *ignore, bb_vis: Some(c), ..Annotation::new("a", c) }));
            ds.proposals.push(DetectionRecord::new("a", c, *s).with_extra("note", "x"));
        }
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn config_toml_round_trips(seed in any::<u32>(), th_b in 0.0..1.0f64, enlarge in 0.1..2.0f64, a in -1.0..1.0f64, flag in any::<bool>()) {
        let cfg = RunConfig { seed: seed as u64, th_b, enlarge, penalty_a: a, no_saliency: flag, ..RunConfig::default() };
        prop_assert_eq!(RunConfig::from_toml(&cfg.to_toml(), "t").unwrap(), cfg);
    }
}
