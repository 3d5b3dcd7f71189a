//! KITTI label and calibration files, plus the prediction format that adds
//! per-object uncertainties and pair lines.
//!
//! Label lines hold 15 whitespace-separated fields (16 with a score):
//! `type truncated occluded alpha left top right bottom h w l x y z ry [score]`.
//! `(x, y, z)` is the bottom-face center in the camera frame.
//!
//! Prediction files reuse the 16-field layout and append
//! `sigma_z sigma_uv [score_raw]`. Pair lines read
//! `PAIR i j kx ky kz sigma_k` with `i < j` indexing the object lines in
//! order. Lines starting with `#` are comments.

use std::fmt::Write as _;

use crate::camera::{wrap_angle, FeaturePoint, PinholeCamera, Point3};
use crate::detection::{Dimensions, ObjectHypothesis, PairConstraint};
use crate::error::{Error, Result};
use crate::geometry::{Box3, Rect};

pub const DONT_CARE: &str = "DontCare";
pub const PAIR_TAG: &str = "PAIR";

/// One object line of a KITTI label or result file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub class: String,
    /// Fraction in `[0, 1]`; result files use `-1`.
    pub truncated: f64,
    /// `0..=3`; result files use `-1`.
    pub occluded: i32,
    pub alpha: f64,
    pub bbox: Rect<f64>,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    /// Bottom-face center.
    pub location: Point3<f64>,
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    pub fn is_dont_care(&self) -> bool {
        self.class == DONT_CARE
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox.bottom - self.bbox.top
    }

    pub fn dims(&self) -> Dimensions<f64> {
        Dimensions {
            w: self.w,
            h: self.h,
            l: self.l,
        }
    }
}

/// Float rendering for emitted files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FloatFormat {
    /// Shortest text that parses back to the same value.
    #[default]
    Exact,
    /// Fixed number of decimals, like `%.2f`.
    Fixed(usize),
}

impl FloatFormat {
    pub fn write(self, out: &mut String, v: f64) {
        let _ = match self {
            FloatFormat::Exact => write!(out, "{v}"),
            FloatFormat::Fixed(n) => write!(out, "{v:.n$}"),
        };
    }
}

impl std::str::FromStr for FloatFormat {
    type Err = Error;

    /// `exact` or `fixed:N`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(FloatFormat::Exact);
        }
        s.strip_prefix("fixed:")
            .and_then(|n| n.parse().ok())
            .map(FloatFormat::Fixed)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "float format must be `exact` or `fixed:N`, got `{s}`"
                ))
            })
    }
}

impl std::fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FloatFormat::Exact => f.write_str("exact"),
            FloatFormat::Fixed(n) => write!(f, "fixed:{n}"),
        }
    }
}

fn is_skipped(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn float(field: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(line, format!("{name}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(
            line,
            format!("{name}: `{field}` is not finite"),
        ));
    }
    Ok(v)
}

fn label_from_fields(fields: &[&str], line: usize) -> Result<LabelRecord> {
    let f = |k: usize, name: &str| float(fields[k], name, line);
    let occluded: i32 = fields[2]
        .parse()
        .map_err(|_| Error::parse(line, format!("occluded: `{}` is not an integer", fields[2])))?;
    if !(-1..=3).contains(&occluded) {
        return Err(Error::parse(
            line,
            format!("occluded must be in -1..=3, got {occluded}"),
        ));
    }
    let bbox = Rect::new(f(4, "left")?, f(5, "top")?, f(6, "right")?, f(7, "bottom")?);
    if bbox.right < bbox.left || bbox.bottom < bbox.top {
        return Err(Error::parse(line, "2D box has negative extent"));
    }
    Ok(LabelRecord {
        class: fields[0].to_string(),
        truncated: f(1, "truncated")?,
        occluded,
        alpha: f(3, "alpha")?,
        bbox,
        h: f(8, "h")?,
        w: f(9, "w")?,
        l: f(10, "l")?,
        location: Point3::new(f(11, "x")?, f(12, "y")?, f(13, "z")?),
        rotation_y: f(14, "rotation_y")?,
        score: if fields.len() > 15 {
            Some(f(15, "score")?)
        } else {
            None
        },
    })
}

/// Parses one label line; `line` is 1-based and only used in errors.
pub fn parse_label_line(text: &str, line: usize) -> Result<LabelRecord> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(Error::parse(
            line,
            format!("expected 15 or 16 fields, found {}", fields.len()),
        ));
    }
    label_from_fields(&fields, line)
}

/// Parses a whole label file. Blank and `#` lines are skipped.
pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !is_skipped(l))
        .map(|(k, l)| parse_label_line(l, k + 1))
        .collect()
}

fn write_label(out: &mut String, r: &LabelRecord, fmt: FloatFormat) {
    out.push_str(&r.class);
    out.push(' ');
    fmt.write(out, r.truncated);
    let _ = write!(out, " {}", r.occluded);
    let tail = [
        r.alpha,
        r.bbox.left,
        r.bbox.top,
        r.bbox.right,
        r.bbox.bottom,
        r.h,
        r.w,
        r.l,
        r.location.x,
        r.location.y,
        r.location.z,
        r.rotation_y,
    ];
    for v in tail {
        out.push(' ');
        fmt.write(out, v);
    }
    if let Some(s) = r.score {
        out.push(' ');
        fmt.write(out, s);
    }
}

pub fn emit_label(r: &LabelRecord, fmt: FloatFormat) -> String {
    let mut s = String::new();
    write_label(&mut s, r, fmt);
    s
}

/// One line per record, each terminated by `\n`.
pub fn emit_labels(records: &[LabelRecord], fmt: FloatFormat) -> String {
    let mut s = String::new();
    for r in records {
        write_label(&mut s, r, fmt);
        s.push('\n');
    }
    s
}

/// Reads the `P2` projection matrix. The feature-map downsampling factor is
/// not part of the file and is supplied by the caller.
///
/// Missing `P2` is reported as a parse error on line 0.
pub fn parse_calib(text: &str, downsample: u32) -> Result<PinholeCamera<f64>> {
    let mut found: Option<(usize, [f64; 12])> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let Some(rest) = raw.trim_start().strip_prefix("P2:") else {
            continue;
        };
        if let Some((first, _)) = found {
            log::warn!("calibration has a second P2 on line {line}; keeping line {first}");
            continue;
        }
        let values: Vec<&str> = rest.split_whitespace().collect();
        if values.len() != 12 {
            return Err(Error::parse(
                line,
                format!("P2 needs 12 values, found {}", values.len()),
            ));
        }
        let mut p = [0.0; 12];
        for (dst, v) in p.iter_mut().zip(&values) {
            *dst = float(v, "P2", line)?;
        }
        found = Some((line, p));
    }
    let (line, p) = found.ok_or_else(|| Error::parse(0, "no P2 line in calibration"))?;
    PinholeCamera::new(p[0], p[5], p[2], p[6], p[3], p[7], downsample)
        .map_err(|e| Error::parse(line, e.to_string()))
}

/// `P2:` line for `cam` (other entries of the 3x4 matrix are zero, apart
/// from `P[2][2] = 1`).
pub fn emit_calib(cam: &PinholeCamera<f64>, fmt: FloatFormat) -> String {
    let p = [
        cam.fx, 0.0, cam.ax, cam.tx, 0.0, cam.fy, cam.ay, cam.ty, 0.0, 0.0, 1.0, 0.0,
    ];
    let mut s = String::from("P2:");
    for v in p {
        s.push(' ');
        fmt.write(&mut s, v);
    }
    s.push('\n');
    s
}

/// Box with its true center: KITTI anchors `y` at the bottom face.
pub fn label_to_box3d(r: &LabelRecord) -> Result<Box3<f64>> {
    Box3::new(
        Point3::new(r.location.x, r.location.y - r.h / 2.0, r.location.z),
        r.w,
        r.h,
        r.l,
        r.rotation_y,
    )
}

/// Inverse of the `y` shift in [`label_to_box3d`].
pub fn bottom_center(b: &Box3<f64>) -> Point3<f64> {
    Point3::new(b.center.x, b.center.y + b.h / 2.0, b.center.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    /// The three evaluation levels, easiest first.
    pub const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Moderate => "Moderate",
            Difficulty::Hard => "Hard",
            Difficulty::Ignored => "Ignored",
        }
    }

    fn index(self) -> Option<usize> {
        match self {
            Difficulty::Easy => Some(0),
            Difficulty::Moderate => Some(1),
            Difficulty::Hard => Some(2),
            Difficulty::Ignored => None,
        }
    }
}

/// Per-level limits, indexed Easy, Moderate, Hard. Defaults are the KITTI
/// benchmark values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyThresholds {
    /// Minimum 2D box height in pixels (inclusive).
    pub min_height: [f64; 3],
    pub max_occlusion: [i32; 3],
    pub max_truncation: [f64; 3],
}

impl Default for DifficultyThresholds {
    fn default() -> Self {
        Self {
            min_height: [40.0, 25.0, 25.0],
            max_occlusion: [0, 1, 2],
            max_truncation: [0.15, 0.30, 0.50],
        }
    }
}

impl DifficultyThresholds {
    /// Whether an object meets the limits of `level`. Levels are cumulative:
    /// an Easy object is also admitted at Moderate and Hard.
    pub fn admits(&self, level: Difficulty, height: f64, occluded: i32, truncated: f64) -> bool {
        let Some(k) = level.index() else {
            return false;
        };
        height >= self.min_height[k]
            && occluded <= self.max_occlusion[k]
            && truncated <= self.max_truncation[k]
    }

    /// Easiest level admitting the record.
    pub fn classify(&self, r: &LabelRecord) -> Difficulty {
        Difficulty::LEVELS
            .into_iter()
            .find(|&d| self.admits(d, r.bbox_height(), r.occluded, r.truncated))
            .unwrap_or(Difficulty::Ignored)
    }
}

/// Difficulty under the default thresholds.
pub fn difficulty(r: &LabelRecord) -> Difficulty {
    DifficultyThresholds::default().classify(r)
}

/// Object line of a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub label: LabelRecord,
    pub sigma_z: f64,
    pub sigma_uv: f64,
    /// Heatmap score before any calibration, when the producer wrote one.
    pub score_raw: Option<f64>,
}

/// Pair line of a prediction file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub k: [f64; 3],
    pub sigma_k: f64,
}

impl PairRecord {
    pub fn to_constraint(&self) -> PairConstraint<f64> {
        PairConstraint {
            i: self.i,
            j: self.j,
            k: Point3::new(self.k[0], self.k[1], self.k[2]),
            sigma_k: self.sigma_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionFile {
    pub objects: Vec<PredictionRecord>,
    pub pairs: Vec<PairRecord>,
}

impl PredictionFile {
    pub fn constraints(&self) -> Vec<PairConstraint<f64>> {
        self.pairs.iter().map(PairRecord::to_constraint).collect()
    }
}

fn parse_pair_line(fields: &[&str], line: usize) -> Result<PairRecord> {
    if fields.len() != 7 {
        return Err(Error::parse(
            line,
            format!(
                "pair line needs `PAIR i j kx ky kz sigma_k`, found {} fields",
                fields.len()
            ),
        ));
    }
    let index = |k: usize, name: &str| -> Result<usize> {
        fields[k]
            .parse()
            .map_err(|_| Error::parse(line, format!("{name}: `{}` is not an index", fields[k])))
    };
    let (i, j) = (index(1, "i")?, index(2, "j")?);
    if i >= j {
        return Err(Error::parse(
            line,
            format!("pair indices must satisfy i < j, got ({i}, {j})"),
        ));
    }
    let k = [
        float(fields[3], "kx", line)?,
        float(fields[4], "ky", line)?,
        float(fields[5], "kz", line)?,
    ];
    if k.iter().any(|v| *v < 0.0) {
        return Err(Error::parse(line, "pair distance components must be >= 0"));
    }
    let sigma_k = float(fields[6], "sigma_k", line)?;
    if sigma_k <= 0.0 {
        return Err(Error::parse(
            line,
            format!("sigma_k must be positive, got {sigma_k}"),
        ));
    }
    Ok(PairRecord { i, j, k, sigma_k })
}

fn parse_object_line(fields: &[&str], line: usize) -> Result<PredictionRecord> {
    if fields.len() != 18 && fields.len() != 19 {
        return Err(Error::parse(
            line,
            format!(
                "object line needs 16 label fields plus `sigma_z sigma_uv [score_raw]`, found {} fields",
                fields.len()
            ),
        ));
    }
    let label = label_from_fields(&fields[..16], line)?;
    let sigma_z = float(fields[16], "sigma_z", line)?;
    let sigma_uv = float(fields[17], "sigma_uv", line)?;
    for (name, v) in [("sigma_z", sigma_z), ("sigma_uv", sigma_uv)] {
        if v <= 0.0 {
            return Err(Error::parse(
                line,
                format!("{name} must be positive, got {v}"),
            ));
        }
    }
    let score_raw = match fields.get(18) {
        Some(f) => Some(float(f, "score_raw", line)?),
        None => None,
    };
    Ok(PredictionRecord {
        label,
        sigma_z,
        sigma_uv,
        score_raw,
    })
}

/// Parses a prediction file and checks every pair against the object list.
pub fn parse_predictions(text: &str) -> Result<PredictionFile> {
    let mut file = PredictionFile::default();
    let mut pair_lines = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        if is_skipped(raw) {
            continue;
        }
        let line = k + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields[0] == PAIR_TAG {
            file.pairs.push(parse_pair_line(&fields, line)?);
            pair_lines.push(line);
        } else {
            file.objects.push(parse_object_line(&fields, line)?);
        }
    }
    let n = file.objects.len();
    for (p, line) in file.pairs.iter().zip(pair_lines) {
        if p.j >= n {
            return Err(Error::Validation(format!(
                "line {line}: pair ({}, {}) references object {} but the file has {n}",
                p.i, p.j, p.j
            )));
        }
    }
    Ok(file)
}

pub fn emit_predictions(file: &PredictionFile, fmt: FloatFormat) -> String {
    let mut s = String::new();
    for o in &file.objects {
        write_label(&mut s, &o.label, fmt);
        if o.label.score.is_none() {
            // the prediction layout always carries a score column
            s.push(' ');
            fmt.write(&mut s, 1.0);
        }
        for v in [o.sigma_z, o.sigma_uv].into_iter().chain(o.score_raw) {
            s.push(' ');
            fmt.write(&mut s, v);
        }
        s.push('\n');
    }
    for p in &file.pairs {
        let _ = write!(s, "{PAIR_TAG} {} {}", p.i, p.j);
        for v in p.k.into_iter().chain([p.sigma_k]) {
            s.push(' ');
            fmt.write(&mut s, v);
        }
        s.push('\n');
    }
    s
}

/// Detector view of a prediction line on `cam`'s feature map.
///
/// The keypoint is the feature cell containing the 2D box center; the offset
/// points from it to the projection of the 3D center.
pub fn hypothesis_from_record(
    rec: &PredictionRecord,
    cam: &PinholeCamera<f64>,
) -> Result<ObjectHypothesis<f64>> {
    let r = &rec.label;
    let s = cam.downsample() as f64;
    let center = Point3::new(r.location.x, r.location.y - r.h / 2.0, r.location.z);
    let projected = cam.project(&center)?;
    let (bu, bv) = r.bbox.center();
    let bbox_center = FeaturePoint::new(bu / s, bv / s);
    let keypoint = FeaturePoint::new(bbox_center.u.floor(), bbox_center.v.floor());
    let hyp = ObjectHypothesis {
        class: r.class.clone(),
        keypoint,
        offset: FeaturePoint::new(projected.u - keypoint.u, projected.v - keypoint.v),
        depth: r.location.z,
        sigma_z: rec.sigma_z,
        sigma_uv: rec.sigma_uv,
        dims: r.dims(),
        alpha: r.alpha,
        bbox_center,
        bbox_size: (r.bbox.width() / s, r.bbox.height() / s),
        score: r.score.unwrap_or(1.0),
    };
    Ok(hyp)
}

/// Writes a refined hypothesis back into its label. Location moves to the
/// hypothesis' 3D center; the local orientation is kept, so the global yaw
/// turns with the change in viewing angle.
pub fn update_record(
    original: &LabelRecord,
    refined: &ObjectHypothesis<f64>,
    cam: &PinholeCamera<f64>,
) -> Result<LabelRecord> {
    let c = refined.center(cam)?;
    let old = &original.location;
    let gamma_old = old.x.atan2(old.z);
    let gamma_new = c.x.atan2(c.z);
    let mut out = original.clone();
    out.location = Point3::new(c.x, c.y + original.h / 2.0, c.z);
    out.rotation_y = wrap_angle(original.rotation_y + gamma_new - gamma_old);
    Ok(out)
}
