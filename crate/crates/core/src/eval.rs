//! Average precision in 2D, bird's-eye view and 3D, plus average
//! orientation similarity, following the KITTI object benchmark.
//!
//! Per class, difficulty level and IoU threshold, detections are matched
//! greedily in descending score order: each takes the highest-IoU unmatched
//! ground truth at or above the threshold. Ground truths outside the level,
//! alias classes (`Van` for `Car`, `Person_sitting` for `Pedestrian`) and
//! detections lower than the level's minimum box height are ignored: they
//! count neither as hits nor as misses. Unmatched detections mostly inside a
//! `DontCare` region are ignored too.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, iou_3d, Box3};
use crate::kitti_io::{label_to_box3d, Difficulty, DifficultyThresholds, LabelRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Bbox2d,
    Bev,
    Box3d,
    Aos,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Bbox2d, Metric::Bev, Metric::Box3d, Metric::Aos];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Bbox2d => "AP_2D",
            Metric::Bev => "AP_BEV",
            Metric::Box3d => "AP_3D",
            Metric::Aos => "AOS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ApMode {
    /// Recall positions `1/40, 2/40, ..., 1`.
    Ap40,
    /// Recall positions `0, 0.1, ..., 1`.
    Ap11,
}

impl ApMode {
    pub const ALL: [ApMode; 2] = [ApMode::Ap40, ApMode::Ap11];

    pub fn name(self) -> &'static str {
        match self {
            ApMode::Ap40 => "AP40",
            ApMode::Ap11 => "AP11",
        }
    }

    /// Recall positions as fractions `k / denominator`.
    fn positions(self) -> (std::ops::RangeInclusive<usize>, usize) {
        match self {
            ApMode::Ap40 => (1..=40, 40),
            ApMode::Ap11 => (0..=10, 10),
        }
    }
}

/// Role of a ground truth for one class and level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtRole {
    /// Must be found; a miss is a false negative.
    Counted,
    /// May be matched, but the match is neither a hit nor a miss.
    Ignored,
    /// Another class; never matched.
    Unrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive { gt: usize },
    FalsePositive,
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatch {
    /// One outcome per detection, in input order.
    pub outcomes: Vec<Outcome>,
    /// Counted ground truths that enter the recall denominator.
    pub num_gt: usize,
}

/// Greedy matching for one image.
///
/// `dets_ignored[d]` marks detections that may only absorb matches.
/// Detections must be sorted by descending score. `iou(d, g)` and
/// `dont_care(d)` (largest fraction of the detection's 2D box inside a
/// `DontCare` region) are evaluated lazily.
pub fn match_detections(
    gt_roles: &[GtRole],
    dets_ignored: &[bool],
    iou: impl Fn(usize, usize) -> f64,
    threshold: f64,
    dont_care: impl Fn(usize) -> f64,
) -> ImageMatch {
    let mut taken = vec![false; gt_roles.len()];
    let mut lost = 0;
    let mut outcomes = Vec::with_capacity(dets_ignored.len());
    for (d, &det_ignored) in dets_ignored.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, role) in gt_roles.iter().enumerate() {
            if taken[g] || *role == GtRole::Unrelated {
                continue;
            }
            let o = iou(d, g);
            if o >= threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        let outcome = match best {
            Some((g, _)) => {
                taken[g] = true;
                match (gt_roles[g], det_ignored) {
                    (GtRole::Counted, false) => Outcome::TruePositive { gt: g },
                    (GtRole::Counted, true) => {
                        lost += 1;
                        Outcome::Ignored
                    }
                    _ => Outcome::Ignored,
                }
            }
            None if det_ignored || dont_care(d) > threshold => Outcome::Ignored,
            None => Outcome::FalsePositive,
        };
        outcomes.push(outcome);
    }
    let counted = gt_roles.iter().filter(|r| **r == GtRole::Counted).count();
    ImageMatch {
        outcomes,
        num_gt: counted - lost,
    }
}

/// Ranked detections pooled over a dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    /// Descending.
    pub scores: Vec<f64>,
    pub true_positive: Vec<bool>,
    /// Orientation similarity `(1 + cos da) / 2` of each hit, 0 for misses.
    pub similarity: Vec<f64>,
    pub num_gt: usize,
    tp_cum: Vec<usize>,
    sim_cum: Vec<f64>,
}

impl PrCurve {
    /// Builds the curve from `(score, is_tp, similarity)` entries. Equal
    /// scores keep their input order.
    pub fn new(mut entries: Vec<(f64, bool, f64)>, num_gt: usize) -> Self {
        entries.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut curve = PrCurve {
            num_gt,
            ..Default::default()
        };
        let (mut tp, mut sim) = (0, 0.0);
        for (score, hit, s) in entries {
            tp += hit as usize;
            sim += if hit { s } else { 0.0 };
            curve.scores.push(score);
            curve.true_positive.push(hit);
            curve.similarity.push(if hit { s } else { 0.0 });
            curve.tp_cum.push(tp);
            curve.sim_cum.push(sim);
        }
        curve
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn recall(&self) -> Vec<f64> {
        self.tp_cum
            .iter()
            .map(|&tp| {
                if self.num_gt == 0 {
                    0.0
                } else {
                    tp as f64 / self.num_gt as f64
                }
            })
            .collect()
    }

    pub fn precision(&self) -> Vec<f64> {
        self.tp_cum
            .iter()
            .enumerate()
            .map(|(k, &tp)| tp as f64 / (k + 1) as f64)
            .collect()
    }

    /// Max of `value(rank)` over ranks whose recall reaches
    /// `numerator / denominator`; 0 when none does. Compared in integers.
    fn interpolate(
        &self,
        numerator: usize,
        denominator: usize,
        value: impl Fn(usize) -> f64,
    ) -> f64 {
        (0..self.len())
            .filter(|&k| self.tp_cum[k] * denominator >= numerator * self.num_gt)
            .map(value)
            .fold(0.0, f64::max)
    }

    fn average(&self, mode: ApMode, value: impl Fn(usize) -> f64 + Copy) -> f64 {
        if self.num_gt == 0 {
            return 0.0;
        }
        let (positions, denominator) = mode.positions();
        let count = positions.clone().count();
        let samples: Vec<f64> = positions
            .map(|k| self.interpolate(k, denominator, value))
            .collect();
        debug_assert!(samples.windows(2).all(|w| w[1] <= w[0]));
        samples.iter().sum::<f64>() / count as f64
    }

    pub fn average_precision(&self, mode: ApMode) -> f64 {
        self.average(mode, |k| self.tp_cum[k] as f64 / (k + 1) as f64)
    }

    /// AP where each hit contributes its orientation similarity instead of 1.
    pub fn orientation_similarity(&self, mode: ApMode) -> f64 {
        self.average(mode, |k| self.sim_cum[k] / (k + 1) as f64)
    }
}

/// `(1 + cos(a - b)) / 2`.
pub fn orientation_score(alpha_det: f64, alpha_gt: f64) -> f64 {
    (1.0 + (alpha_det - alpha_gt).cos()) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub classes: Vec<String>,
    pub iou_thresholds: Vec<f64>,
    pub difficulty: DifficultyThresholds,
    /// Treat `Van` as ignored for `Car` and `Person_sitting` as ignored for
    /// `Pedestrian`.
    pub ignore_aliases: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            classes: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
            iou_thresholds: vec![0.7, 0.5],
            difficulty: DifficultyThresholds::default(),
            ignore_aliases: true,
        }
    }
}

/// Neighbouring class whose ground truths are ignored rather than missed.
pub fn class_alias(class: &str) -> Option<&'static str> {
    match class {
        "Car" => Some("Van"),
        "Pedestrian" => Some("Person_sitting"),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalEntry {
    pub class: String,
    pub metric: Metric,
    pub difficulty: Difficulty,
    pub iou: f64,
    pub mode: ApMode,
    /// Ratio in `[0, 1]`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalTable {
    pub entries: Vec<EvalEntry>,
    pub images: usize,
}

impl EvalTable {
    pub fn get(
        &self,
        class: &str,
        metric: Metric,
        difficulty: Difficulty,
        iou: f64,
        mode: ApMode,
    ) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| {
                e.class == class
                    && e.metric == metric
                    && e.difficulty == difficulty
                    && e.iou == iou
                    && e.mode == mode
            })
            .map(|e| e.value)
    }

    /// `class metric difficulty iou mode value` per line, value as a ratio.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# class metric difficulty iou mode value");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                e.class,
                e.metric.name(),
                e.difficulty.name(),
                e.iou,
                e.mode.name(),
                e.value
            );
        }
        s
    }

    /// Aligned table in percent, one row per class, metric, IoU and mode.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(String, Metric, String, ApMode)> = Vec::new();
        for e in &self.entries {
            let key = (e.class.clone(), e.metric, e.iou.to_string(), e.mode);
            if !rows.contains(&key) {
                rows.push(key);
            }
        }
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:<7} {:>4} {:<5} {:>9} {:>9} {:>9}",
            "class", "metric", "IoU", "mode", "Easy", "Moderate", "Hard"
        );
        for (class, metric, iou, mode) in rows {
            let _ = write!(
                s,
                "{:<12} {:<7} {:>4} {:<5}",
                class,
                metric.name(),
                iou,
                mode.name()
            );
            for d in Difficulty::LEVELS {
                let v = self
                    .entries
                    .iter()
                    .find(|e| {
                        e.class == class
                            && e.metric == metric
                            && e.iou.to_string() == iou
                            && e.mode == mode
                            && e.difficulty == d
                    })
                    .map(|e| e.value);
                match v {
                    Some(v) => {
                        let _ = write!(s, " {:>9.2}", 100.0 * v);
                    }
                    None => {
                        let _ = write!(s, " {:>9}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Per-image data for one class, shared by every level and threshold.
struct ClassImage {
    gts: Vec<usize>,
    /// `true` for the class itself, `false` for its alias.
    gt_exact: Vec<bool>,
    dets: Vec<usize>,
    iou: [Vec<Vec<f64>>; 3],
    dont_care: Vec<f64>,
}

fn boxes(records: &[&LabelRecord], what: &str, image: &str) -> Result<Vec<Box3<f64>>> {
    records
        .iter()
        .map(|r| {
            label_to_box3d(r)
                .map_err(|e| Error::Validation(format!("{what} in image {image}: {e}")))
        })
        .collect()
}

fn prepare_class(
    image: &str,
    gt: &[LabelRecord],
    det: &[LabelRecord],
    class: &str,
    aliases: bool,
) -> Result<ClassImage> {
    let alias = if aliases { class_alias(class) } else { None };
    let gts: Vec<usize> = (0..gt.len())
        .filter(|&g| gt[g].class == class || Some(gt[g].class.as_str()) == alias)
        .collect();
    let gt_exact = gts.iter().map(|&g| gt[g].class == class).collect();
    let mut dets: Vec<usize> = (0..det.len()).filter(|&d| det[d].class == class).collect();
    // stable: equal scores keep file order
    dets.sort_by(|&a, &b| {
        let (sa, sb) = (det[a].score.unwrap_or(1.0), det[b].score.unwrap_or(1.0));
        sb.total_cmp(&sa)
    });
    let gt_refs: Vec<&LabelRecord> = gts.iter().map(|&g| &gt[g]).collect();
    let det_refs: Vec<&LabelRecord> = dets.iter().map(|&d| &det[d]).collect();
    let gt_boxes = boxes(&gt_refs, "ground truth", image)?;
    let det_boxes = boxes(&det_refs, "detection", image)?;
    let mut iou = [Vec::new(), Vec::new(), Vec::new()];
    for (d, dr) in det_refs.iter().enumerate() {
        iou[0].push(gt_refs.iter().map(|g| dr.bbox.iou(&g.bbox)).collect());
        iou[1].push(
            gt_boxes
                .iter()
                .map(|g| bev_iou(&det_boxes[d], g))
                .collect::<Result<_>>()?,
        );
        iou[2].push(
            gt_boxes
                .iter()
                .map(|g| iou_3d(&det_boxes[d], g))
                .collect::<Result<_>>()?,
        );
    }
    let dont_care = det_refs
        .iter()
        .map(|d| {
            let area = d.bbox.area();
            gt.iter()
                .filter(|g| g.is_dont_care())
                .map(|g| {
                    if area > 0.0 {
                        d.bbox.intersection(&g.bbox) / area
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(ClassImage {
        gts,
        gt_exact,
        dets,
        iou,
        dont_care,
    })
}

/// Curve for one class, overlap kind (0 = 2D, 1 = BEV, 2 = 3D), level and
/// threshold.
fn class_curve(
    images: &[(&[LabelRecord], &[LabelRecord], &ClassImage)],
    kind: usize,
    level: Difficulty,
    threshold: f64,
    config: &EvalConfig,
) -> PrCurve {
    let level_index = Difficulty::LEVELS
        .iter()
        .position(|d| *d == level)
        .expect("evaluation level");
    let min_height = config.difficulty.min_height[level_index];
    let mut entries = Vec::new();
    let mut num_gt = 0;
    for (gt, det, prep) in images {
        let roles: Vec<GtRole> = prep
            .gts
            .iter()
            .zip(&prep.gt_exact)
            .map(|(&g, &exact)| {
                let r = &gt[g];
                if exact
                    && config
                        .difficulty
                        .admits(level, r.bbox_height(), r.occluded, r.truncated)
                {
                    GtRole::Counted
                } else {
                    GtRole::Ignored
                }
            })
            .collect();
        let ignored: Vec<bool> = prep
            .dets
            .iter()
            .map(|&d| det[d].bbox_height() < min_height)
            .collect();
        let m = match_detections(
            &roles,
            &ignored,
            |d, g| prep.iou[kind][d][g],
            threshold,
            |d| prep.dont_care[d],
        );
        num_gt += m.num_gt;
        for (k, outcome) in m.outcomes.iter().enumerate() {
            let d = &det[prep.dets[k]];
            let score = d.score.unwrap_or(1.0);
            match outcome {
                Outcome::TruePositive { gt: g } => entries.push((
                    score,
                    true,
                    orientation_score(d.alpha, gt[prep.gts[*g]].alpha),
                )),
                Outcome::FalsePositive => entries.push((score, false, 0.0)),
                Outcome::Ignored => {}
            }
        }
    }
    PrCurve::new(entries, num_gt)
}

/// Evaluates `detections` against `ground_truth`, keyed by image id. Both
/// maps must hold the same ids.
pub fn evaluate(
    ground_truth: &BTreeMap<String, Vec<LabelRecord>>,
    detections: &BTreeMap<String, Vec<LabelRecord>>,
    config: &EvalConfig,
) -> Result<EvalTable> {
    let missing: Vec<&str> = ground_truth
        .keys()
        .filter(|k| !detections.contains_key(*k))
        .map(String::as_str)
        .collect();
    let extra: Vec<&str> = detections
        .keys()
        .filter(|k| !ground_truth.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Validation(format!(
            "image ids differ: no detections for [{}]; no ground truth for [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    for t in &config.iou_thresholds {
        if !(*t > 0.0 && *t <= 1.0) {
            return Err(Error::Validation(format!(
                "IoU threshold must lie in (0, 1], got {t}"
            )));
        }
    }

    let prepared: Vec<Vec<ClassImage>> = config
        .classes
        .par_iter()
        .map(|class| {
            ground_truth
                .iter()
                .map(|(id, gt)| {
                    prepare_class(id, gt, &detections[id], class, config.ignore_aliases)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for c in 0..config.classes.len() {
        for kind in 0..3 {
            for level in Difficulty::LEVELS {
                for &t in &config.iou_thresholds {
                    jobs.push((c, kind, level, t));
                }
            }
        }
    }
    let curves: Vec<PrCurve> = jobs
        .par_iter()
        .map(|&(c, kind, level, t)| {
            let images: Vec<_> = ground_truth
                .iter()
                .zip(&prepared[c])
                .map(|((id, gt), prep)| (gt.as_slice(), detections[id].as_slice(), prep))
                .collect();
            class_curve(&images, kind, level, t, config)
        })
        .collect();

    let mut entries = Vec::new();
    for (c, class) in config.classes.iter().enumerate() {
        for metric in Metric::ALL {
            let kind = match metric {
                Metric::Bbox2d | Metric::Aos => 0,
                Metric::Bev => 1,
                Metric::Box3d => 2,
            };
            for level in Difficulty::LEVELS {
                for &t in &config.iou_thresholds {
                    let idx = jobs
                        .iter()
                        .position(|j| *j == (c, kind, level, t))
                        .expect("curve computed");
                    for mode in ApMode::ALL {
                        let value = match metric {
                            Metric::Aos => curves[idx].orientation_similarity(mode),
                            _ => curves[idx].average_precision(mode),
                        };
                        entries.push(EvalEntry {
                            class: class.clone(),
                            metric,
                            difficulty: level,
                            iou: t,
                            mode,
                            value,
                        });
                    }
                }
            }
        }
    }
    Ok(EvalTable {
        entries,
        images: ground_truth.len(),
    })
}
