//! Pair selection and pairwise distance targets.
//!
//! Two objects of the same class form an effective pair when the circle
//! whose diameter joins their 2D box centers holds no other object center
//! strictly inside. The pair's keypoint is the midpoint of the two centers
//! rounded to the nearest feature cell. Its regression target is the
//! entrywise absolute displacement between the 3D centers, expressed in the
//! frame rotated onto the midpoint's viewing ray.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::camera::{viewing_angle, FeaturePoint, Point3, RotationY};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which centers may disqualify a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Blockers {
    /// Centers of every class block.
    #[default]
    AllClasses,
    /// Only centers of the pair's own class block.
    SameClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingConfig {
    pub blockers: Blockers,
    /// Detections scoring below this are ignored at inference.
    pub score_threshold: f64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            blockers: Blockers::AllClasses,
            score_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCandidate<T> {
    pub i: usize,
    pub j: usize,
    pub center_i: FeaturePoint<T>,
    pub center_j: FeaturePoint<T>,
    /// Rounded midpoint (integer feature cell).
    pub keypoint: (i64, i64),
}

/// Rounds half away from zero, per axis.
pub fn keypoint_cell<T: Real>(a: &FeaturePoint<T>, b: &FeaturePoint<T>) -> (i64, i64) {
    let m = a.midpoint(b);
    (
        m.u.round().to_i64().unwrap_or(i64::MAX),
        m.v.round().to_i64().unwrap_or(i64::MAX),
    )
}

/// Effective pairs among `centers`, sorted by `(i, j)`.
pub fn match_pairs<T: Real, C: PartialEq>(
    centers: &[FeaturePoint<T>],
    classes: &[C],
    blockers: Blockers,
) -> Vec<PairCandidate<T>> {
    assert_eq!(
        centers.len(),
        classes.len(),
        "every center needs a class label"
    );
    let n = centers.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if classes[i] != classes[j] {
                continue;
            }
            let mid = centers[i].midpoint(&centers[j]);
            let radius_sq = centers[i].distance_squared(&centers[j]) * T::lit(0.25);
            let blocked = (0..n).any(|k| {
                k != i
                    && k != j
                    && (blockers == Blockers::AllClasses || classes[k] == classes[i])
                    && centers[k].distance_squared(&mid) < radius_sq
            });
            if !blocked {
                out.push(PairCandidate {
                    i,
                    j,
                    center_i: centers[i],
                    center_j: centers[j],
                    keypoint: keypoint_cell(&centers[i], &centers[j]),
                });
            }
        }
    }
    out
}

/// Inference-time matching: only detections scoring at least
/// `config.score_threshold` take part. Returned indices refer to the full
/// input slices.
pub fn match_scored_pairs<T: Real, C: PartialEq + Clone>(
    centers: &[FeaturePoint<T>],
    classes: &[C],
    scores: &[T],
    config: &PairingConfig,
) -> Vec<PairCandidate<T>> {
    let threshold = T::lit(config.score_threshold);
    let kept: Vec<usize> = (0..centers.len())
        .filter(|&k| scores[k] >= threshold)
        .collect();
    let sub_centers: Vec<_> = kept.iter().map(|&k| centers[k]).collect();
    let sub_classes: Vec<_> = kept.iter().map(|&k| classes[k].clone()).collect();
    match_pairs(&sub_centers, &sub_classes, config.blockers)
        .into_iter()
        .map(|p| PairCandidate {
            i: kept[p.i],
            j: kept[p.j],
            ..p
        })
        .collect()
}

/// Pairwise regression target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTarget<T> {
    /// Entrywise absolute local-frame displacement `(kx, ky, kz)`.
    pub k: Point3<T>,
    /// Viewing angle of the 3D midpoint.
    pub gamma_mid: T,
}

/// Signed displacement `c_i - c_j` rotated onto the midpoint's viewing ray.
pub fn local_displacement<T: Real>(c_i: &Point3<T>, c_j: &Point3<T>) -> Result<(Point3<T>, T)> {
    let mid = c_i.midpoint(c_j);
    if !(mid.z > T::zero()) {
        return Err(Error::invalid(format!(
            "pair midpoint must lie in front of the camera, got z={}",
            mid.z
        )));
    }
    let gamma = viewing_angle(mid.x, mid.z)?;
    Ok((RotationY::new(gamma).apply(&(*c_i - *c_j)), gamma))
}

pub fn pair_target<T: Real>(c_i: &Point3<T>, c_j: &Point3<T>) -> Result<PairTarget<T>> {
    let (d, gamma_mid) = local_displacement(c_i, c_j)?;
    Ok(PairTarget {
        k: d.abs(),
        gamma_mid,
    })
}

/// Per-class totals over a labelled dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub objects: usize,
    pub pairs: usize,
    pub paired_objects: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairCountReport {
    /// Rows in reporting order.
    pub rows: Vec<(String, ClassCounts)>,
    pub images: usize,
}

impl PairCountReport {
    pub fn get(&self, class: &str) -> Option<&ClassCounts> {
        self.rows.iter().find(|(c, _)| c == class).map(|(_, n)| n)
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|(c, _)| c.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$} | {:>8} | {:>8} | {:>14}",
            "Count", "object", "pair", "paired object"
        );
        let _ = writeln!(s, "{}", "-".repeat(width + 40));
        for (class, n) in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$} | {:>8} | {:>8} | {:>14}",
                class, n.objects, n.pairs, n.paired_objects
            );
        }
        s
    }
}

/// Counts objects, effective pairs and paired objects per class.
///
/// `report_classes` fixes the row order and restricts which objects take part
/// in matching at all (they are the detector's categories). When empty, every
/// class seen is reported in sorted order.
pub fn pair_count_report<'a, T, S, I>(
    images: I,
    report_classes: &[String],
    blockers: Blockers,
) -> PairCountReport
where
    T: Real,
    S: AsRef<str> + 'a,
    I: IntoIterator<Item = &'a [(S, FeaturePoint<T>)]>,
{
    let mut counts: BTreeMap<String, ClassCounts> = report_classes
        .iter()
        .map(|c| (c.clone(), ClassCounts::default()))
        .collect();
    let mut images_seen = 0;
    for objects in images {
        images_seen += 1;
        let kept: Vec<&(S, FeaturePoint<T>)> = objects
            .iter()
            .filter(|(c, _)| {
                report_classes.is_empty() || report_classes.iter().any(|r| r == c.as_ref())
            })
            .collect();
        let centers: Vec<_> = kept.iter().map(|(_, p)| *p).collect();
        let classes: Vec<&str> = kept.iter().map(|(c, _)| c.as_ref()).collect();
        let pairs = match_pairs(&centers, &classes, blockers);
        let mut paired = vec![false; kept.len()];
        for p in &pairs {
            paired[p.i] = true;
            paired[p.j] = true;
            counts.entry(classes[p.i].to_string()).or_default().pairs += 1;
        }
        for (k, class) in classes.iter().enumerate() {
            let row = counts.entry(class.to_string()).or_default();
            row.objects += 1;
            if paired[k] {
                row.paired_objects += 1;
            }
        }
    }
    let rows = if report_classes.is_empty() {
        counts.into_iter().collect()
    } else {
        report_classes
            .iter()
            .map(|c| (c.clone(), counts[c]))
            .collect()
    };
    PairCountReport {
        rows,
        images: images_seen,
    }
}
