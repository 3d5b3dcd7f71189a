//! Cross-checks of the evaluator against a second, loop-based
//! implementation and against exhaustive assignment.

mod support;

use std::collections::BTreeMap;

use monopair::eval::{
    evaluate, match_detections, ApMode, EvalConfig, GtRole, Metric, Outcome, PrCurve,
};
use monopair::geometry::Rect;
use monopair::kitti_io::LabelRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::reference_eval::{random_benchmark, reference_ap};

#[test]
fn matches_reference_evaluator() {
    let config = EvalConfig::default();
    let mut fractional = 0;
    for seed in 0..5 {
        let (gts, dets) = random_benchmark(seed);
        let table = evaluate(&gts, &dets, &config).unwrap();
        assert_eq!(table.entries.len(), 3 * 4 * 3 * 2 * 2);
        fractional += table
            .entries
            .iter()
            .filter(|e| e.value > 0.0 && e.value < 1.0)
            .count();
        for e in &table.entries {
            let expected =
                reference_ap(&gts, &dets, &e.class, e.metric, e.difficulty, e.iou, e.mode);
            assert!(
                (e.value - expected).abs() <= 1e-9,
                "seed {seed} {} {} {:?} {} {:?}: {} vs {}",
                e.class,
                e.metric.name(),
                e.difficulty,
                e.iou,
                e.mode,
                e.value,
                expected
            );
        }
    }
    assert!(
        fractional > 100,
        "benchmark too easy: {fractional} fractional entries"
    );
}

#[test]
fn identical_and_empty_detections() {
    let (gts, _) = random_benchmark(11);
    let config = EvalConfig::default();
    let dets: BTreeMap<_, _> = gts
        .iter()
        .map(|(k, v)| {
            let d: Vec<_> = v
                .iter()
                .filter(|g| !g.is_dont_care())
                .map(|g| LabelRecord {
                    score: Some(0.9),
                    ..g.clone()
                })
                .collect();
            (k.clone(), d)
        })
        .collect();
    let table = evaluate(&gts, &dets, &config).unwrap();
    for e in &table.entries {
        let has_gt = gts.values().flatten().any(|g| {
            g.class == e.class
                && config
                    .difficulty
                    .admits(e.difficulty, g.bbox_height(), g.occluded, g.truncated)
        });
        let expected = if has_gt { 1.0 } else { 0.0 };
        assert_eq!(e.value, expected, "{:?}", e);
    }

    let empty: BTreeMap<_, _> = gts.keys().map(|k| (k.clone(), Vec::new())).collect();
    let table = evaluate(&gts, &empty, &config).unwrap();
    assert!(table.entries.iter().all(|e| e.value == 0.0));
}

#[test]
fn mismatched_ids_are_listed() {
    let (gts, mut dets) = random_benchmark(2);
    dets.remove("000003");
    dets.insert("999999".into(), Vec::new());
    let err = evaluate(&gts, &dets, &EvalConfig::default())
        .unwrap_err()
        .to_string();
    assert!(err.contains("000003") && err.contains("999999"), "{err}");
}

#[test]
fn aos_never_exceeds_ap_2d() {
    for seed in 20..30 {
        let (gts, dets) = random_benchmark(seed);
        let table = evaluate(&gts, &dets, &EvalConfig::default()).unwrap();
        for e in table.entries.iter().filter(|e| e.metric == Metric::Aos) {
            let ap = table
                .get(&e.class, Metric::Bbox2d, e.difficulty, e.iou, e.mode)
                .unwrap();
            assert!(e.value <= ap + 1e-15);
        }
    }
}

/// Higher scores are more likely to be hits.
fn random_curve(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, bool, f64)> {
    (0..n)
        .map(|_| {
            let s: f64 = rng.gen_range(0.0..1.0);
            (s, rng.gen_bool(s), 1.0)
        })
        .collect()
}

#[test]
fn ap_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let n = rng.gen_range(1..30);
        let entries = random_curve(&mut rng, n);
        let tps = entries.iter().filter(|e| e.1).count();
        let num_gt = tps + rng.gen_range(1..5);
        for mode in ApMode::ALL {
            let base = PrCurve::new(entries.clone(), num_gt).average_precision(mode);
            let mut top = entries.clone();
            top.push((2.0, true, 1.0));
            assert!(PrCurve::new(top, num_gt).average_precision(mode) >= base);
            let mut bottom = entries.clone();
            bottom.push((-1.0, false, 0.0));
            assert!(PrCurve::new(bottom, num_gt).average_precision(mode) <= base);
        }
    }
}

#[test]
fn ap40_and_ap11_agree_on_smooth_curves() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let n = rng.gen_range(200..600);
        let entries = random_curve(&mut rng, n);
        let num_gt = entries.iter().filter(|e| e.1).count() + rng.gen_range(0..20);
        let c = PrCurve::new(entries, num_gt);
        let (a40, a11) = (
            c.average_precision(ApMode::Ap40),
            c.average_precision(ApMode::Ap11),
        );
        assert!((a40 - a11).abs() < 0.1, "{a40} vs {a11}");
    }
}

/// Maximum number of true positives over all one-to-one assignments.
fn exhaustive_max(iou: &[Vec<f64>], threshold: f64, d: usize, used: &mut Vec<bool>) -> usize {
    if d == iou.len() {
        return 0;
    }
    let mut best = exhaustive_max(iou, threshold, d + 1, used);
    for g in 0..used.len() {
        if !used[g] && iou[d][g] >= threshold {
            used[g] = true;
            best = best.max(1 + exhaustive_max(iou, threshold, d + 1, used));
            used[g] = false;
        }
    }
    best
}

#[test]
fn greedy_matches_exhaustive_assignment() {
    // With non-overlapping ground truths and a threshold of at least 0.5, a
    // detection clears the threshold against at most one ground truth, so
    // score order cannot cost a match.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 500 {
        let ng = rng.gen_range(1..=3);
        let nd = rng.gen_range(1..=3);
        let mut gts: Vec<Rect<f64>> = Vec::new();
        while gts.len() < ng {
            let (x, y) = (rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0));
            let r = Rect::new(
                x,
                y,
                x + rng.gen_range(5.0..20.0),
                y + rng.gen_range(5.0..20.0),
            );
            if gts.iter().all(|g| g.intersection(&r) == 0.0) {
                gts.push(r);
            }
        }
        let dets: Vec<Rect<f64>> = (0..nd)
            .map(|_| {
                let g = gts[rng.gen_range(0..ng)];
                let mut n = || rng.gen_range(-3.0..3.0);
                Rect::new(g.left + n(), g.top + n(), g.right + n(), g.bottom + n())
            })
            .collect();
        let iou: Vec<Vec<f64>> = dets
            .iter()
            .map(|d| gts.iter().map(|g| d.iou(g)).collect())
            .collect();
        let threshold = [0.5, 0.7][rng.gen_range(0..2)];
        if iou.iter().flatten().any(|o| (o - threshold).abs() < 1e-9) {
            continue;
        }
        let roles = vec![GtRole::Counted; ng];
        let m = match_detections(
            &roles,
            &vec![false; nd],
            |d, g| iou[d][g],
            threshold,
            |_| 0.0,
        );
        let greedy = m
            .outcomes
            .iter()
            .filter(|o| matches!(o, Outcome::TruePositive { .. }))
            .count();
        assert_eq!(
            greedy,
            exhaustive_max(&iou, threshold, 0, &mut vec![false; ng])
        );
        checked += 1;
    }
}
