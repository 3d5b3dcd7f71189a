//! One image end to end: prediction file in, refined KITTI labels out.

use crate::camera::PinholeCamera;
use crate::error::Result;
use crate::kitti_io::{hypothesis_from_record, update_record, LabelRecord, PredictionFile};
use crate::optimizer::{refine, Diagnostics, LmConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedImage {
    /// One label per object line, in file order, without uncertainties.
    pub labels: Vec<LabelRecord>,
    /// `true` where the object took part in at least one pair.
    pub refined: Vec<bool>,
    pub diagnostics: Diagnostics,
}

/// Refines the objects of one prediction file. Pairs touching an object
/// scoring below `score_threshold` are dropped before solving; objects left
/// without pairs come back unchanged.
pub fn refine_predictions(
    file: &PredictionFile,
    cam: &PinholeCamera<f64>,
    config: &LmConfig,
    score_threshold: f64,
) -> Result<RefinedImage> {
    let hypotheses = file
        .objects
        .iter()
        .map(|o| hypothesis_from_record(o, cam))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = file
        .constraints()
        .into_iter()
        .filter(|p| {
            p.j < hypotheses.len()
                && hypotheses[p.i].score >= score_threshold
                && hypotheses[p.j].score >= score_threshold
        })
        .collect();
    let solution = refine(&hypotheses, &pairs, cam, config)?;
    let moved = solution.diagnostics.iterations > 0;
    let labels = file
        .objects
        .iter()
        .zip(&solution.objects)
        .zip(&solution.refined)
        .map(|((orig, hyp), &refined)| {
            if refined && moved {
                update_record(&orig.label, hyp, cam)
            } else {
                Ok(orig.label.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RefinedImage {
        labels,
        refined: solution.refined,
        diagnostics: solution.diagnostics,
    })
}
