//! Workflows behind the `monopair` binary: pair statistics over a labelled
//! set, batch post-optimization of prediction files, KITTI-style
//! evaluation and synthetic experiments.
//!
//! Every command returns an [`Outcome`] instead of exiting, so the same code
//! runs from `main` and from tests. Per-image work runs on the rayon pool of
//! the caller; results are always assembled in image-id order.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use monopair::camera::FeaturePoint;
use monopair::eval::evaluate;
use monopair::kitti_io::{emit_labels, parse_calib, parse_labels, parse_predictions, LabelRecord};
use monopair::pairing::{match_pairs, pair_count_report, pair_target, PairCountReport};
use monopair::pipeline::refine_predictions;
use monopair::synthetic::{run_experiment, run_experiment_with_dump, ExperimentReport, SceneSpec};

pub use config::RunConfig;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitStatus {
    Success = 0,
    /// Validation or parse failure, or a failed synthetic gate.
    Failure = 1,
    /// The solver hit a non-finite cost.
    Diverged = 2,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Errors that stop a command before any per-image work.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        source: monopair::Error,
    },
    #[error(transparent)]
    Config(#[from] monopair::Error),
}

impl CliError {
    pub fn status(&self) -> ExitStatus {
        match self {
            CliError::Io { .. } => ExitStatus::Failure,
            CliError::Input { source, .. } | CliError::Config(source) => status_of(source),
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: ExitStatus,
    /// Text for standard output.
    pub stdout: String,
    /// One message per failed image.
    pub errors: Vec<String>,
}

impl Outcome {
    fn new(stdout: String, failures: Vec<(ExitStatus, String)>) -> Self {
        let status = failures
            .iter()
            .map(|(s, _)| *s)
            .max()
            .unwrap_or(ExitStatus::Success);
        Outcome {
            status,
            stdout,
            errors: failures.into_iter().map(|(_, m)| m).collect(),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

/// Stems of the `*.txt` files in `dir`, sorted.
pub fn list_ids(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let path = entry.map_err(CliError::io(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Image ids of a split file, one or more per line.
pub fn read_split(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read(path)?.split_whitespace().map(str::to_string).collect())
}

fn file_error(path: &Path, e: impl std::fmt::Display) -> (ExitStatus, String) {
    (ExitStatus::Failure, format!("{}: {e}", path.display()))
}

fn status_of(e: &monopair::Error) -> ExitStatus {
    match e {
        monopair::Error::Diverged { .. } => ExitStatus::Diverged,
        _ => ExitStatus::Failure,
    }
}

/// Objects of one labelled image that take part in pairing: their line
/// index in the label file, class and 2D box center on the feature map.
fn pairing_inputs(
    labels: &[LabelRecord],
    cfg: &RunConfig,
) -> Vec<(usize, String, FeaturePoint<f64>)> {
    let s = cfg.downsample as f64;
    labels
        .iter()
        .enumerate()
        .filter(|(_, r)| cfg.eval.classes.contains(&r.class))
        .map(|(k, r)| {
            let (u, v) = r.bbox.center();
            (k, r.class.clone(), FeaturePoint::new(u / s, v / s))
        })
        .collect()
}

/// `class i j keypoint_u keypoint_v kx ky kz gamma_mid proj_i_u proj_i_v
/// proj_j_u proj_j_v`; indices are label-file lines (0-based), projections
/// are the 3D centers on the feature map.
fn pair_file(
    labels: &[LabelRecord],
    cfg: &RunConfig,
    cam: &monopair::CameraModel,
) -> monopair::Result<String> {
    let objects = pairing_inputs(labels, cfg);
    let centers: Vec<_> = objects.iter().map(|o| o.2).collect();
    let classes: Vec<&str> = objects.iter().map(|o| o.1.as_str()).collect();
    let mut s = String::from(
        "# class i j keypoint_u keypoint_v kx ky kz gamma_mid proj_i_u proj_i_v proj_j_u proj_j_v\n",
    );
    for p in match_pairs(&centers, &classes, cfg.blockers) {
        let (a, b) = (&labels[objects[p.i].0], &labels[objects[p.j].0]);
        let ca = monopair::kitti_io::label_to_box3d(a)?.center;
        let cb = monopair::kitti_io::label_to_box3d(b)?.center;
        let t = pair_target(&ca, &cb)?;
        let (pa, pb) = (cam.project(&ca)?, cam.project(&cb)?);
        let mut line = format!(
            "{} {} {} {} {}",
            classes[p.i], objects[p.i].0, objects[p.j].0, p.keypoint.0, p.keypoint.1
        );
        for v in [t.k.x, t.k.y, t.k.z, t.gamma_mid, pa.u, pa.v, pb.u, pb.v] {
            line.push(' ');
            cfg.float_format.write(&mut line, v);
        }
        s.push_str(&line);
        s.push('\n');
    }
    Ok(s)
}

/// Pair-count table over a labelled set. With `out_dir`, also writes one
/// pair file per image plus `pair_counts.report` (table and config echo).
/// `split` restricts the run to the listed ids.
pub fn cmd_pairs(
    labels_dir: &Path,
    calib_dir: &Path,
    out_dir: Option<&Path>,
    split: Option<&Path>,
    cfg: &RunConfig,
) -> Result<(Outcome, PairCountReport), CliError> {
    let ids = match split {
        Some(path) => read_split(path)?,
        None => list_ids(labels_dir)?,
    };
    if let Some(dir) = out_dir {
        create_dir(dir)?;
    }
    let per_image: Vec<Result<Vec<LabelRecord>, (ExitStatus, String)>> = ids
        .par_iter()
        .map(|id| {
            let name = format!("{id}.txt");
            let label_path = labels_dir.join(&name);
            let calib_path = calib_dir.join(&name);
            let text = fs::read_to_string(&label_path).map_err(|e| file_error(&label_path, e))?;
            let labels = parse_labels(&text).map_err(|e| file_error(&label_path, e))?;
            let calib = fs::read_to_string(&calib_path).map_err(|e| file_error(&calib_path, e))?;
            let cam =
                parse_calib(&calib, cfg.downsample).map_err(|e| file_error(&calib_path, e))?;
            let pairs = pair_file(&labels, cfg, &cam).map_err(|e| file_error(&label_path, e))?;
            if let Some(dir) = out_dir {
                let path = dir.join(&name);
                fs::write(&path, pairs).map_err(|e| file_error(&path, e))?;
            }
            Ok(labels)
        })
        .collect();

    let mut failures = Vec::new();
    let mut images = Vec::new();
    for r in per_image {
        match r {
            Ok(labels) => images.push(
                pairing_inputs(&labels, cfg)
                    .into_iter()
                    .map(|(_, c, p)| (c, p))
                    .collect::<Vec<_>>(),
            ),
            Err(f) => failures.push(f),
        }
    }
    let report = pair_count_report(
        images.iter().map(Vec::as_slice),
        &cfg.eval.classes,
        cfg.blockers,
    );
    let mut text = report.to_table();
    let _ = writeln!(text, "images = {}", report.images);
    if let Some(dir) = out_dir {
        write(
            &dir.join("pair_counts.report"),
            &format!("{}{text}", cfg.echo()),
        )?;
    }
    Ok((Outcome::new(text, failures), report))
}

/// Refines every prediction file in `pred_dir` with the calibration of the
/// same id and writes KITTI labels to `out_dir`, plus
/// `diagnostics.report` with one solver line per image.
pub fn cmd_optimize(
    pred_dir: &Path,
    calib_dir: &Path,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<Outcome, CliError> {
    let ids = list_ids(pred_dir)?;
    create_dir(out_dir)?;
    let results: Vec<Result<String, (ExitStatus, String)>> = ids
        .par_iter()
        .map(|id| {
            let name = format!("{id}.txt");
            let pred_path = pred_dir.join(&name);
            let calib_path = calib_dir.join(&name);
            let text = fs::read_to_string(&pred_path).map_err(|e| file_error(&pred_path, e))?;
            let file = parse_predictions(&text).map_err(|e| file_error(&pred_path, e))?;
            let calib = fs::read_to_string(&calib_path).map_err(|e| file_error(&calib_path, e))?;
            let cam =
                parse_calib(&calib, cfg.downsample).map_err(|e| file_error(&calib_path, e))?;
            let refined = refine_predictions(&file, &cam, &cfg.lm, cfg.score_threshold)
                .map_err(|e| (status_of(&e), format!("{}: {e}", pred_path.display())))?;
            let out = out_dir.join(&name);
            fs::write(&out, emit_labels(&refined.labels, cfg.float_format))
                .map_err(|e| file_error(&out, e))?;
            Ok(refined.diagnostics.to_line(id))
        })
        .collect();

    let mut report = cfg.echo();
    report.push_str("# image_id vertices edges initial_cost final_cost iterations converged\n");
    let mut failures = Vec::new();
    let mut done = 0;
    for r in results {
        match r {
            Ok(line) => {
                report.push_str(&line);
                report.push('\n');
                done += 1;
            }
            Err(f) => failures.push(f),
        }
    }
    write(&out_dir.join("diagnostics.report"), &report)?;
    let stdout = format!("optimized {done} of {} files\n", ids.len());
    Ok(Outcome::new(stdout, failures))
}

fn read_label_dir(
    dir: &Path,
    ids: &[String],
) -> (
    BTreeMap<String, Vec<LabelRecord>>,
    Vec<(ExitStatus, String)>,
) {
    let parsed: Vec<_> = ids
        .par_iter()
        .map(|id| {
            let path = dir.join(format!("{id}.txt"));
            fs::read_to_string(&path)
                .map_err(|e| file_error(&path, e))
                .and_then(|t| parse_labels(&t).map_err(|e| file_error(&path, e)))
                .map(|labels| (id.clone(), labels))
        })
        .collect();
    let mut map = BTreeMap::new();
    let mut failures = Vec::new();
    for r in parsed {
        match r {
            Ok((id, labels)) => {
                map.insert(id, labels);
            }
            Err(f) => failures.push(f),
        }
    }
    (map, failures)
}

/// Evaluates the detections in `det_dir` against `gt_dir`. The table goes to
/// standard output; `metrics_file` receives the machine-readable form.
pub fn cmd_eval(
    gt_dir: &Path,
    det_dir: &Path,
    metrics_file: &Path,
    cfg: &RunConfig,
) -> Result<Outcome, CliError> {
    let (gt, mut failures) = read_label_dir(gt_dir, &list_ids(gt_dir)?);
    let (det, det_failures) = read_label_dir(det_dir, &list_ids(det_dir)?);
    failures.extend(det_failures);
    if !failures.is_empty() {
        return Ok(Outcome::new(String::new(), failures));
    }
    let table = match evaluate(&gt, &det, &cfg.eval) {
        Ok(t) => t,
        Err(e) => {
            return Ok(Outcome::new(
                String::new(),
                vec![(ExitStatus::Failure, e.to_string())],
            ))
        }
    };
    write(
        metrics_file,
        &format!("{}{}", cfg.echo(), table.to_key_values()),
    )?;
    Ok(Outcome::new(table.to_text(), Vec::new()))
}

/// Report text of a synthetic run: config echo, then the experiment report.
pub fn synth_report_text(report: &ExperimentReport, cfg: &RunConfig) -> String {
    format!("{}{}", cfg.echo(), report.to_text())
}

/// Runs the experiment described by `spec_file`. With `out_dir`, writes
/// `report.txt` and a replayable dump of every trial under `trials/`.
/// Succeeds iff the improvement gate passes.
pub fn cmd_synth(
    spec_file: &Path,
    out_dir: Option<&Path>,
    cfg: &RunConfig,
) -> Result<(Outcome, ExperimentReport), CliError> {
    let text = read(spec_file)?;
    let mut spec = SceneSpec::parse(&text).map_err(|source| CliError::Input {
        path: spec_file.to_path_buf(),
        source,
    })?;
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    let report = match out_dir {
        Some(dir) => {
            create_dir(dir)?;
            run_experiment_with_dump(&spec, &cfg.lm, &dir.join("trials"))?
        }
        None => run_experiment(&spec, &cfg.lm)?,
    };
    let text = synth_report_text(&report, cfg);
    if let Some(dir) = out_dir {
        write(&dir.join("report.txt"), &text)?;
    }
    let failures = if report.gate_passed() {
        Vec::new()
    } else {
        vec![(ExitStatus::Failure, "improvement gate failed".to_string())]
    };
    Ok((Outcome::new(text, failures), report))
}
