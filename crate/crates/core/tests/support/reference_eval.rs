//! Loop-based reference evaluator and a randomized 10-image benchmark,
//! shared by the evaluator cross-checks and the acceptance suite.

use std::collections::BTreeMap;

use monopair::camera::Point3;
use monopair::eval::{ApMode, Metric};
use monopair::geometry::{bev_iou, iou_3d, Rect};
use monopair::kitti_io::{label_to_box3d, Difficulty, LabelRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_gt(rng: &mut ChaCha8Rng) -> LabelRecord {
    let class = [
        "Car",
        "Car",
        "Car",
        "Pedestrian",
        "Cyclist",
        "Van",
        "DontCare",
    ][rng.gen_range(0..7)];
    let left = rng.gen_range(0.0..1100.0);
    let top = rng.gen_range(100.0..250.0);
    LabelRecord {
        class: class.into(),
        truncated: [0.0, 0.1, 0.2, 0.4, 0.8][rng.gen_range(0..5)],
        occluded: rng.gen_range(0..4),
        alpha: rng.gen_range(-3.0..3.0),
        bbox: Rect::new(
            left,
            top,
            left + rng.gen_range(10.0..150.0),
            top + rng.gen_range(15.0..90.0),
        ),
        h: rng.gen_range(1.2..2.0),
        w: rng.gen_range(0.6..2.0),
        l: rng.gen_range(0.8..4.5),
        location: Point3::new(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(1.4..1.8),
            rng.gen_range(5.0..40.0),
        ),
        rotation_y: rng.gen_range(-3.0..3.0),
        score: None,
    }
}

pub fn jitter(rng: &mut ChaCha8Rng, g: &LabelRecord, scale: f64) -> LabelRecord {
    let mut d = g.clone();
    let mut n = |s: f64| rng.gen_range(-s..s) * scale;
    d.bbox = Rect::new(
        g.bbox.left + n(8.0),
        g.bbox.top + n(5.0),
        g.bbox.right + n(8.0),
        g.bbox.bottom + n(5.0),
    );
    d.location = Point3::new(
        g.location.x + n(0.6),
        g.location.y + n(0.1),
        g.location.z + n(1.5),
    );
    d.rotation_y = g.rotation_y + n(0.4);
    d.alpha = g.alpha + n(0.8);
    d.h = (g.h + n(0.2)).max(0.3);
    d.w = (g.w + n(0.2)).max(0.3);
    d.l = (g.l + n(0.4)).max(0.3);
    d
}

pub fn random_benchmark(
    seed: u64,
) -> (
    BTreeMap<String, Vec<LabelRecord>>,
    BTreeMap<String, Vec<LabelRecord>>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gts = BTreeMap::new();
    let mut dets = BTreeMap::new();
    for img in 0..10 {
        let gt: Vec<_> = (0..rng.gen_range(0..7))
            .map(|_| random_gt(&mut rng))
            .collect();
        let mut det = Vec::new();
        for g in gt.iter().filter(|g| !g.is_dont_care()) {
            for _ in 0..rng.gen_range(0..3) {
                let scale = rng.gen_range(0.1..1.5);
                let mut d = jitter(&mut rng, g, scale);
                if d.class == "Van" && rng.gen_bool(0.5) {
                    d.class = "Car".into();
                }
                d.score = Some(rng.gen_range(0.0..1.0));
                det.push(d);
            }
        }
        for _ in 0..rng.gen_range(0..3) {
            let mut d = random_gt(&mut rng);
            if d.is_dont_care() {
                d.class = "Car".into();
            }
            d.score = Some(rng.gen_range(0.0..1.0));
            det.push(d);
        }
        gts.insert(format!("{img:06}"), gt);
        dets.insert(format!("{img:06}"), det);
    }
    (gts, dets)
}

/// Straightforward per-detection loop with floating-point recall.
pub fn reference_ap(
    gts: &BTreeMap<String, Vec<LabelRecord>>,
    dets: &BTreeMap<String, Vec<LabelRecord>>,
    class: &str,
    metric: Metric,
    level: Difficulty,
    threshold: f64,
    mode: ApMode,
) -> f64 {
    let lvl = match level {
        Difficulty::Easy => 0,
        Difficulty::Moderate => 1,
        _ => 2,
    };
    let min_h = [40.0, 25.0, 25.0][lvl];
    let max_occ = [0, 1, 2][lvl];
    let max_trunc = [0.15, 0.30, 0.50][lvl];
    let alias = match class {
        "Car" => "Van",
        "Pedestrian" => "Person_sitting",
        _ => "",
    };
    let overlap = |a: &LabelRecord, b: &LabelRecord| -> f64 {
        match metric {
            Metric::Bbox2d | Metric::Aos => {
                let iw = a.bbox.right.min(b.bbox.right) - a.bbox.left.max(b.bbox.left);
                let ih = a.bbox.bottom.min(b.bbox.bottom) - a.bbox.top.max(b.bbox.top);
                if iw <= 0.0 || ih <= 0.0 {
                    return 0.0;
                }
                let area =
                    |r: &LabelRecord| (r.bbox.right - r.bbox.left) * (r.bbox.bottom - r.bbox.top);
                iw * ih / (area(a) + area(b) - iw * ih)
            }
            Metric::Bev => {
                bev_iou(&label_to_box3d(a).unwrap(), &label_to_box3d(b).unwrap()).unwrap()
            }
            Metric::Box3d => {
                iou_3d(&label_to_box3d(a).unwrap(), &label_to_box3d(b).unwrap()).unwrap()
            }
        }
    };

    // (score, tp, similarity)
    let mut ranked: Vec<(f64, bool, f64)> = Vec::new();
    let mut npos = 0usize;
    for (id, gt) in gts {
        let det = &dets[id];
        let mut order: Vec<usize> = (0..det.len()).filter(|&k| det[k].class == class).collect();
        order.sort_by(|&a, &b| {
            det[b]
                .score
                .unwrap()
                .partial_cmp(&det[a].score.unwrap())
                .unwrap()
        });
        let mut used = vec![false; gt.len()];
        let mut counted = 0;
        let mut consumed = 0;
        for g in gt {
            let ok = g.class == class
                && g.bbox.bottom - g.bbox.top >= min_h
                && g.occluded <= max_occ
                && g.truncated <= max_trunc;
            if ok {
                counted += 1;
            }
        }
        for &k in &order {
            let d = &det[k];
            let small = d.bbox.bottom - d.bbox.top < min_h;
            let mut best = -1i64;
            let mut best_iou = -1.0;
            for (gi, g) in gt.iter().enumerate() {
                if used[gi] || !(g.class == class || g.class == alias) {
                    continue;
                }
                let o = overlap(d, g);
                if o >= threshold && o > best_iou {
                    best_iou = o;
                    best = gi as i64;
                }
            }
            if best >= 0 {
                let g = &gt[best as usize];
                used[best as usize] = true;
                let counted_gt = g.class == class
                    && g.bbox.bottom - g.bbox.top >= min_h
                    && g.occluded <= max_occ
                    && g.truncated <= max_trunc;
                if counted_gt && !small {
                    ranked.push((
                        d.score.unwrap(),
                        true,
                        (1.0 + (d.alpha - g.alpha).cos()) / 2.0,
                    ));
                } else if counted_gt {
                    consumed += 1;
                }
                continue;
            }
            if small {
                continue;
            }
            let in_dont_care = gt.iter().filter(|g| g.class == "DontCare").any(|g| {
                let iw = d.bbox.right.min(g.bbox.right) - d.bbox.left.max(g.bbox.left);
                let ih = d.bbox.bottom.min(g.bbox.bottom) - d.bbox.top.max(g.bbox.top);
                iw > 0.0
                    && ih > 0.0
                    && iw * ih / ((d.bbox.right - d.bbox.left) * (d.bbox.bottom - d.bbox.top))
                        > threshold
            });
            if !in_dont_care {
                ranked.push((d.score.unwrap(), false, 0.0));
            }
        }
        npos += counted - consumed;
    }
    if npos == 0 {
        return 0.0;
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut sim) = (0.0, 0.0);
    for (k, (_, hit, s)) in ranked.iter().enumerate() {
        if *hit {
            tp += 1.0;
            sim += s;
        }
        recall.push(tp / npos as f64);
        precision.push(if metric == Metric::Aos { sim } else { tp } / (k + 1) as f64);
    }
    let positions: Vec<f64> = match mode {
        ApMode::Ap40 => (1..=40).map(|k| k as f64 / 40.0).collect(),
        ApMode::Ap11 => (0..=10).map(|k| k as f64 / 10.0).collect(),
    };
    let mut total = 0.0;
    for r in &positions {
        let mut best: f64 = 0.0;
        for k in 0..recall.len() {
            if recall[k] >= *r {
                best = best.max(precision[k]);
            }
        }
        total += best;
    }
    total / positions.len() as f64
}
