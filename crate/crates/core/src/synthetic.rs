//! Seeded scenes with exact pair constraints, noisy predictions derived from
//! them, and before/after error statistics of the refinement.
//!
//! A trial places objects on a ground plane with disjoint footprints,
//! projects them into a KITTI-sized image, pairs them on their 2D box
//! centers and computes the exact pairwise targets. Predictions perturb
//! depth, projected center and pair distances with zero-mean noise and
//! carry uncertainty fields derived from the injected noise scale. The
//! predictions then go through the same file-level pipeline as real data.

use std::f64::consts::{FRAC_2_PI, PI, SQRT_2};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::camera::{
    global_to_local_yaw, local_to_global_yaw, viewing_angle, PinholeCamera, Point3,
};
use crate::config::{parse_entries, parse_list, parse_value};
use crate::detection::Dimensions;
use crate::error::{Error, Result};
use crate::geometry::{bev_iou, Box3, Rect};
use crate::kitti_io::{
    emit_calib, emit_labels, emit_predictions, label_to_box3d, Difficulty, DifficultyThresholds,
    FloatFormat, LabelRecord, PairRecord, PredictionFile, PredictionRecord,
};
use crate::optimizer::{Diagnostics, LmConfig};
use crate::pairing::{match_pairs, pair_target, Blockers, PairCandidate, PairTarget};
use crate::pipeline::refine_predictions;

/// Depth given to a noisy prediction that would land behind this.
pub const MIN_PREDICTED_DEPTH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    Gaussian,
    Laplace,
}

impl NoiseModel {
    /// Zero-mean sample with standard deviation `scale`.
    pub fn sample<R: Rng + ?Sized>(self, scale: f64, rng: &mut R) -> f64 {
        match self {
            NoiseModel::Gaussian => scale * rng.sample::<f64, _>(StandardNormal),
            NoiseModel::Laplace => {
                let magnitude: f64 = rng.sample(Exp1);
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                sign * magnitude * scale / SQRT_2
            }
        }
    }

    /// `E|e|` for standard deviation `scale`.
    pub fn mean_abs(self, scale: f64) -> f64 {
        match self {
            NoiseModel::Gaussian => scale * FRAC_2_PI.sqrt(),
            NoiseModel::Laplace => scale / SQRT_2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            NoiseModel::Gaussian => "gaussian",
            NoiseModel::Laplace => "laplace",
        }
    }
}

/// Mean KITTI dimensions `(w, h, l)` for the classes the generator knows.
pub fn class_dimensions(class: &str) -> Option<Dimensions<f64>> {
    let (w, h, l) = match class {
        "Car" => (1.63, 1.53, 3.88),
        "Van" => (1.90, 2.21, 5.08),
        "Pedestrian" => (0.66, 1.76, 0.84),
        "Cyclist" => (0.60, 1.74, 1.76),
        _ => return None,
    };
    Some(Dimensions { w, h, l })
}

/// Everything that defines an experiment. Parsed from `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub trials: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub lateral_min: f64,
    pub lateral_max: f64,
    pub classes: Vec<String>,
    /// Relative standard deviation of each dimension around the class mean.
    pub dim_jitter: f64,
    /// Ground plane height below the camera.
    pub camera_height: f64,
    /// Noise standard deviations: depth (m), projected center (feature
    /// cells), pair distance components (m).
    pub sigma_z: f64,
    pub sigma_uv: f64,
    pub sigma_k: f64,
    pub noise: NoiseModel,
    /// Multiplies every written uncertainty.
    pub miscalibration: f64,
    pub sigma_floor: f64,
    pub fx: f64,
    pub fy: f64,
    pub ax: f64,
    pub ay: f64,
    pub tx: f64,
    pub ty: f64,
    pub downsample: u32,
    pub image_width: f64,
    pub image_height: f64,
    pub max_attempts: usize,
    pub gate_min_improvement: f64,
    pub gate_min_fraction: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 200,
            min_objects: 4,
            max_objects: 4,
            depth_min: 5.0,
            depth_max: 45.0,
            lateral_min: -10.0,
            lateral_max: 10.0,
            classes: vec!["Car".into()],
            dim_jitter: 0.1,
            camera_height: 1.65,
            sigma_z: 2.0,
            sigma_uv: 0.5,
            sigma_k: 0.1,
            noise: NoiseModel::Gaussian,
            miscalibration: 1.0,
            sigma_floor: 1e-6,
            fx: 721.5377,
            fy: 721.5377,
            ax: 609.5593,
            ay: 172.854,
            tx: 44.85728,
            ty: 0.2163791,
            downsample: 4,
            image_width: 1242.0,
            image_height: 375.0,
            max_attempts: 1000,
            gate_min_improvement: 0.2,
            gate_min_fraction: 0.9,
        }
    }
}

impl SceneSpec {
    /// Parses `key = value` lines over the defaults. Unknown keys are
    /// rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SceneSpec::default();
        for e in parse_entries(text)? {
            spec.set(&e.key, &e.value)
                .map_err(|err| Error::Validation(format!("line {}: {err}", e.line)))?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "trials" => self.trials = parse_value(key, v)?,
            "min_objects" => self.min_objects = parse_value(key, v)?,
            "max_objects" => self.max_objects = parse_value(key, v)?,
            "depth_min" => self.depth_min = parse_value(key, v)?,
            "depth_max" => self.depth_max = parse_value(key, v)?,
            "lateral_min" => self.lateral_min = parse_value(key, v)?,
            "lateral_max" => self.lateral_max = parse_value(key, v)?,
            "classes" => self.classes = parse_list(key, v)?,
            "dim_jitter" => self.dim_jitter = parse_value(key, v)?,
            "camera_height" => self.camera_height = parse_value(key, v)?,
            "sigma_z" => self.sigma_z = parse_value(key, v)?,
            "sigma_uv" => self.sigma_uv = parse_value(key, v)?,
            "sigma_k" => self.sigma_k = parse_value(key, v)?,
            "noise" => {
                self.noise = match v {
                    "gaussian" => NoiseModel::Gaussian,
                    "laplace" => NoiseModel::Laplace,
                    _ => {
                        return Err(Error::Validation(format!(
                            "noise: expected gaussian or laplace, got `{v}`"
                        )))
                    }
                }
            }
            "miscalibration" => self.miscalibration = parse_value(key, v)?,
            "sigma_floor" => self.sigma_floor = parse_value(key, v)?,
            "fx" => self.fx = parse_value(key, v)?,
            "fy" => self.fy = parse_value(key, v)?,
            "ax" => self.ax = parse_value(key, v)?,
            "ay" => self.ay = parse_value(key, v)?,
            "tx" => self.tx = parse_value(key, v)?,
            "ty" => self.ty = parse_value(key, v)?,
            "downsample" => self.downsample = parse_value(key, v)?,
            "image_width" => self.image_width = parse_value(key, v)?,
            "image_height" => self.image_height = parse_value(key, v)?,
            "max_attempts" => self.max_attempts = parse_value(key, v)?,
            "gate_min_improvement" => self.gate_min_improvement = parse_value(key, v)?,
            "gate_min_fraction" => self.gate_min_fraction = parse_value(key, v)?,
            _ => return Err(Error::Validation(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: String| Err(Error::Validation(format!("{field}: {why}")));
        if self.trials == 0 {
            return fail("trials", "must be at least 1".into());
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return fail(
                "min_objects",
                format!(
                    "need 1 <= min_objects <= max_objects, got {} and {}",
                    self.min_objects, self.max_objects
                ),
            );
        }
        if !(self.depth_min > 0.0 && self.depth_min < self.depth_max) {
            return fail(
                "depth_min",
                format!(
                    "need 0 < depth_min < depth_max, got {} and {}",
                    self.depth_min, self.depth_max
                ),
            );
        }
        if !(self.lateral_min < self.lateral_max) {
            return fail(
                "lateral_min",
                format!(
                    "need lateral_min < lateral_max, got {} and {}",
                    self.lateral_min, self.lateral_max
                ),
            );
        }
        if self.classes.is_empty() {
            return fail("classes", "at least one class is required".into());
        }
        if let Some(c) = self.classes.iter().find(|c| class_dimensions(c).is_none()) {
            return fail("classes", format!("no dimension prior for `{c}`"));
        }
        for (field, v) in [
            ("sigma_z", self.sigma_z),
            ("sigma_uv", self.sigma_uv),
            ("sigma_k", self.sigma_k),
            ("dim_jitter", self.dim_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(field, format!("must be finite and >= 0, got {v}"));
            }
        }
        for (field, v) in [
            ("miscalibration", self.miscalibration),
            ("sigma_floor", self.sigma_floor),
            ("image_width", self.image_width),
            ("image_height", self.image_height),
            ("camera_height", self.camera_height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(field, format!("must be positive, got {v}"));
            }
        }
        if self.max_attempts == 0 {
            return fail("max_attempts", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gate_min_fraction) {
            return fail(
                "gate_min_fraction",
                format!("must lie in [0, 1], got {}", self.gate_min_fraction),
            );
        }
        self.camera()
            .map(|_| ())
            .map_err(|e| Error::Validation(format!("camera: {e}")))
    }

    pub fn camera(&self) -> Result<PinholeCamera<f64>> {
        PinholeCamera::new(
            self.fx,
            self.fy,
            self.ax,
            self.ay,
            self.tx,
            self.ty,
            self.downsample,
        )
    }

    /// The written uncertainty for injected noise of standard deviation
    /// `scale`: `sqrt(2) * E|noise| * miscalibration`, floored.
    pub fn written_sigma(&self, scale: f64) -> f64 {
        (SQRT_2 * self.noise.mean_abs(scale) * self.miscalibration).max(self.sigma_floor)
    }

    /// `key = value` lines that parse back to this spec.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("trials", self.trials.to_string());
        kv("min_objects", self.min_objects.to_string());
        kv("max_objects", self.max_objects.to_string());
        kv("depth_min", self.depth_min.to_string());
        kv("depth_max", self.depth_max.to_string());
        kv("lateral_min", self.lateral_min.to_string());
        kv("lateral_max", self.lateral_max.to_string());
        kv("classes", self.classes.join(","));
        kv("dim_jitter", self.dim_jitter.to_string());
        kv("camera_height", self.camera_height.to_string());
        kv("sigma_z", self.sigma_z.to_string());
        kv("sigma_uv", self.sigma_uv.to_string());
        kv("sigma_k", self.sigma_k.to_string());
        kv("noise", self.noise.name().to_string());
        kv("miscalibration", self.miscalibration.to_string());
        kv("sigma_floor", self.sigma_floor.to_string());
        kv("fx", self.fx.to_string());
        kv("fy", self.fy.to_string());
        kv("ax", self.ax.to_string());
        kv("ay", self.ay.to_string());
        kv("tx", self.tx.to_string());
        kv("ty", self.ty.to_string());
        kv("downsample", self.downsample.to_string());
        kv("image_width", self.image_width.to_string());
        kv("image_height", self.image_height.to_string());
        kv("max_attempts", self.max_attempts.to_string());
        kv(
            "gate_min_improvement",
            self.gate_min_improvement.to_string(),
        );
        kv("gate_min_fraction", self.gate_min_fraction.to_string());
        s
    }
}

/// A ground-truth object.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthObject {
    pub class: String,
    pub center: Point3<f64>,
    pub dims: Dimensions<f64>,
    pub yaw: f64,
    pub alpha: f64,
    /// Projected corners' bounding rectangle clipped to the image, pixels.
    pub bbox: Rect<f64>,
    pub truncation: f64,
    pub difficulty: Difficulty,
}

impl TruthObject {
    pub fn to_label(&self) -> LabelRecord {
        LabelRecord {
            class: self.class.clone(),
            truncated: self.truncation,
            occluded: 0,
            alpha: self.alpha,
            bbox: self.bbox,
            h: self.dims.h,
            w: self.dims.w,
            l: self.dims.l,
            location: Point3::new(
                self.center.x,
                self.center.y + self.dims.h / 2.0,
                self.center.z,
            ),
            rotation_y: self.yaw,
            score: None,
        }
    }

    fn box3(&self) -> Result<Box3<f64>> {
        Box3::new(self.center, self.dims.w, self.dims.h, self.dims.l, self.yaw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub camera: PinholeCamera<f64>,
    pub objects: Vec<TruthObject>,
    /// Effective pairs on the 2D box centers with their exact targets.
    pub pairs: Vec<(PairCandidate<f64>, PairTarget<f64>)>,
}

/// Rectangle around the projected corners in pixels, or `None` if a corner
/// lies behind the camera.
fn projected_rect(b: &Box3<f64>, pixel_cam: &PinholeCamera<f64>) -> Option<Rect<f64>> {
    let mut r = Rect::new(f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for c in b.corners() {
        if c.z <= 0.1 {
            return None;
        }
        let p = pixel_cam.project(&c).ok()?;
        r.left = r.left.min(p.u);
        r.top = r.top.min(p.v);
        r.right = r.right.max(p.u);
        r.bottom = r.bottom.max(p.v);
    }
    Some(r)
}

fn place_object<R: Rng + ?Sized>(
    spec: &SceneSpec,
    cam: &PinholeCamera<f64>,
    pixel_cam: &PinholeCamera<f64>,
    placed: &[TruthObject],
    rng: &mut R,
) -> Result<Option<TruthObject>> {
    let class = spec.classes[rng.gen_range(0..spec.classes.len())].clone();
    let mean = class_dimensions(&class).expect("validated class");
    let mut jitter = |m: f64| {
        let n: f64 = rng.sample(StandardNormal);
        m * (1.0 + spec.dim_jitter * n).clamp(0.5, 1.5)
    };
    let dims = Dimensions {
        w: jitter(mean.w),
        h: jitter(mean.h),
        l: jitter(mean.l),
    };
    let yaw = rng.gen_range(-PI..PI);
    let x = rng.gen_range(spec.lateral_min..spec.lateral_max);
    let z = rng.gen_range(spec.depth_min..spec.depth_max);
    let center = Point3::new(x, spec.camera_height - dims.h / 2.0, z);
    let b = Box3::new(center, dims.w, dims.h, dims.l, yaw)?;

    for other in placed {
        if bev_iou(&b, &other.box3()?)? > 0.0 {
            return Ok(None);
        }
    }
    let Some(full) = projected_rect(&b, pixel_cam) else {
        return Ok(None);
    };
    let p = cam.project(&center)?;
    let s = cam.downsample() as f64;
    let (pu, pv) = (p.u * s, p.v * s);
    if !(0.0..spec.image_width).contains(&pu) || !(0.0..spec.image_height).contains(&pv) {
        return Ok(None);
    }
    let clipped = Rect::new(
        full.left.max(0.0),
        full.top.max(0.0),
        full.right.min(spec.image_width),
        full.bottom.min(spec.image_height),
    );
    if clipped.area() <= 0.0 {
        return Ok(None);
    }
    let truncation = 1.0 - clipped.area() / full.area();
    let alpha = global_to_local_yaw(yaw, viewing_angle(x, z)?);
    let label = LabelRecord {
        class: class.clone(),
        truncated: truncation,
        occluded: 0,
        alpha,
        bbox: clipped,
        h: dims.h,
        w: dims.w,
        l: dims.l,
        location: center,
        rotation_y: yaw,
        score: None,
    };
    Ok(Some(TruthObject {
        class,
        center,
        dims,
        yaw: b.yaw,
        alpha,
        bbox: clipped,
        truncation,
        difficulty: DifficultyThresholds::default().classify(&label),
    }))
}

/// Draws one scene. Each object gets `spec.max_attempts` placements before
/// generation fails.
pub fn generate_scene<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<Scene> {
    let cam = spec.camera()?;
    let pixel_cam = cam.with_downsample(1)?;
    let n = rng.gen_range(spec.min_objects..=spec.max_objects);
    let mut objects = Vec::with_capacity(n);
    while objects.len() < n {
        let mut attempt = 0;
        let obj = loop {
            if attempt == spec.max_attempts {
                return Err(Error::Generation(format!(
                    "could not place object {} of {n} after {attempt} attempts",
                    objects.len() + 1
                )));
            }
            attempt += 1;
            if let Some(o) = place_object(spec, &cam, &pixel_cam, &objects, rng)? {
                break o;
            }
        };
        objects.push(obj);
    }
    let s = cam.downsample() as f64;
    let centers: Vec<_> = objects
        .iter()
        .map(|o| {
            let (u, v) = o.bbox.center();
            crate::camera::FeaturePoint::new(u / s, v / s)
        })
        .collect();
    let classes: Vec<&str> = objects.iter().map(|o| o.class.as_str()).collect();
    let pairs = match_pairs(&centers, &classes, Blockers::AllClasses)
        .into_iter()
        .map(|p| Ok((p, pair_target(&objects[p.i].center, &objects[p.j].center)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        camera: cam,
        objects,
        pairs,
    })
}

/// Noisy predictions for `scene` in the prediction file layout.
pub fn corrupt<R: Rng + ?Sized>(
    scene: &Scene,
    spec: &SceneSpec,
    rng: &mut R,
) -> Result<PredictionFile> {
    let cam = &scene.camera;
    let (sz, suv, sk) = (
        spec.written_sigma(spec.sigma_z),
        spec.written_sigma(spec.sigma_uv),
        spec.written_sigma(spec.sigma_k),
    );
    let mut objects = Vec::with_capacity(scene.objects.len());
    for o in &scene.objects {
        let p = cam.project(&o.center)?;
        let u = p.u + spec.noise.sample(spec.sigma_uv, rng);
        let v = p.v + spec.noise.sample(spec.sigma_uv, rng);
        let z = (o.center.z + spec.noise.sample(spec.sigma_z, rng)).max(MIN_PREDICTED_DEPTH);
        let c = cam.back_project(u, v, z)?;
        let label = LabelRecord {
            location: Point3::new(c.x, c.y + o.dims.h / 2.0, c.z),
            rotation_y: local_to_global_yaw(o.alpha, viewing_angle(c.x, c.z)?),
            score: Some(1.0),
            ..o.to_label()
        };
        objects.push(PredictionRecord {
            label,
            sigma_z: sz,
            sigma_uv: suv,
            score_raw: None,
        });
    }
    let pairs = scene
        .pairs
        .iter()
        .map(|(p, t)| {
            let mut k = t.k.to_array();
            for c in k.iter_mut() {
                *c = (*c + spec.noise.sample(spec.sigma_k, rng)).max(0.0);
            }
            PairRecord {
                i: p.i,
                j: p.j,
                k,
                sigma_k: sk,
            }
        })
        .collect();
    Ok(PredictionFile { objects, pairs })
}

/// Sums over the paired objects of one trial or a whole experiment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorTotals {
    pub objects: usize,
    pub depth_before: f64,
    pub depth_after: f64,
    pub center_before: f64,
    pub center_after: f64,
}

impl ErrorTotals {
    fn add(&mut self, other: &ErrorTotals) {
        self.objects += other.objects;
        self.depth_before += other.depth_before;
        self.depth_after += other.depth_after;
        self.center_before += other.center_before;
        self.center_after += other.center_after;
    }

    fn mean(&self, sum: f64) -> f64 {
        if self.objects == 0 {
            0.0
        } else {
            sum / self.objects as f64
        }
    }

    pub fn mean_depth_before(&self) -> f64 {
        self.mean(self.depth_before)
    }

    pub fn mean_depth_after(&self) -> f64 {
        self.mean(self.depth_after)
    }

    pub fn mean_center_before(&self) -> f64 {
        self.mean(self.center_before)
    }

    pub fn mean_center_after(&self) -> f64 {
        self.mean(self.center_after)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub scene: Scene,
    pub predictions: PredictionFile,
    pub refined: Vec<LabelRecord>,
    pub diagnostics: Diagnostics,
    pub totals: ErrorTotals,
    /// Indexed Easy, Moderate, Hard, Ignored.
    pub by_difficulty: [ErrorTotals; 4],
}

impl TrialResult {
    /// `None` when the trial had no pairs.
    pub fn improved(&self) -> Option<bool> {
        (self.totals.objects > 0).then_some(self.totals.depth_after < self.totals.depth_before)
    }
}

fn difficulty_slot(d: Difficulty) -> usize {
    match d {
        Difficulty::Easy => 0,
        Difficulty::Moderate => 1,
        Difficulty::Hard => 2,
        Difficulty::Ignored => 3,
    }
}

/// Random stream of trial `trial`: the master seed picks the generator, the
/// trial index picks the stream.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// generate, corrupt, refine and score one trial.
pub fn run_trial(spec: &SceneSpec, trial: usize, lm: &LmConfig) -> Result<TrialResult> {
    let mut rng = trial_rng(spec.seed, trial);
    let scene = generate_scene(spec, &mut rng)?;
    let predictions = corrupt(&scene, spec, &mut rng)?;
    let out = refine_predictions(&predictions, &scene.camera, lm, 0.0)?;
    let mut totals = ErrorTotals::default();
    let mut by_difficulty = [ErrorTotals::default(); 4];
    for (k, truth) in scene.objects.iter().enumerate() {
        if !out.refined[k] {
            continue;
        }
        let before = label_to_box3d(&predictions.objects[k].label)?.center;
        let after = label_to_box3d(&out.labels[k])?.center;
        let e = ErrorTotals {
            objects: 1,
            depth_before: (before.z - truth.center.z).abs(),
            depth_after: (after.z - truth.center.z).abs(),
            center_before: (before - truth.center).norm(),
            center_after: (after - truth.center).norm(),
        };
        totals.add(&e);
        by_difficulty[difficulty_slot(truth.difficulty)].add(&e);
    }
    Ok(TrialResult {
        scene,
        predictions,
        refined: out.labels,
        diagnostics: out.diagnostics,
        totals,
        by_difficulty,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub spec: SceneSpec,
    pub trials: usize,
    /// Trials with at least one pair.
    pub paired_trials: usize,
    pub improved_trials: usize,
    pub totals: ErrorTotals,
    pub by_difficulty: [ErrorTotals; 4],
}

impl ExperimentReport {
    /// `1 - after / before` on the mean depth error of paired objects; 0 when
    /// there was no error to begin with.
    pub fn depth_improvement(&self) -> f64 {
        let before = self.totals.mean_depth_before();
        if before == 0.0 {
            0.0
        } else {
            1.0 - self.totals.mean_depth_after() / before
        }
    }

    pub fn fraction_improved(&self) -> f64 {
        if self.paired_trials == 0 {
            0.0
        } else {
            self.improved_trials as f64 / self.paired_trials as f64
        }
    }

    /// Passes when the mean depth error drops by the configured fraction and
    /// enough trials improve, or when there was no error before and none
    /// after.
    pub fn gate_passed(&self) -> bool {
        let (before, after) = (self.totals.depth_before, self.totals.depth_after);
        if before == 0.0 && after == 0.0 {
            return true;
        }
        self.depth_improvement() >= self.spec.gate_min_improvement
            && self.fraction_improved() >= self.spec.gate_min_fraction
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# synthetic refinement experiment");
        let _ = writeln!(
            s,
            "# written sigma = sqrt(2) * E|noise| * miscalibration (floor {}), the minimizer of the aleatoric L1 loss",
            self.spec.sigma_floor
        );
        let _ = writeln!(
            s,
            "# errors are means over objects that took part in a pair"
        );
        for line in self.spec.to_key_values().lines() {
            let _ = writeln!(s, "spec.{line}");
        }
        let t = &self.totals;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("trials", self.trials.to_string());
        kv("paired_trials", self.paired_trials.to_string());
        kv("paired_objects", t.objects.to_string());
        kv("depth_error_before", t.mean_depth_before().to_string());
        kv("depth_error_after", t.mean_depth_after().to_string());
        kv("depth_improvement", self.depth_improvement().to_string());
        kv("center_error_before", t.mean_center_before().to_string());
        kv("center_error_after", t.mean_center_after().to_string());
        kv("improved_trials", self.improved_trials.to_string());
        kv("fraction_improved", self.fraction_improved().to_string());
        for (k, d) in [
            Difficulty::Easy,
            Difficulty::Moderate,
            Difficulty::Hard,
            Difficulty::Ignored,
        ]
        .iter()
        .enumerate()
        {
            let b = &self.by_difficulty[k];
            let name = d.name();
            kv(&format!("{name}.objects"), b.objects.to_string());
            kv(
                &format!("{name}.depth_error_before"),
                b.mean_depth_before().to_string(),
            );
            kv(
                &format!("{name}.depth_error_after"),
                b.mean_depth_after().to_string(),
            );
        }
        kv(
            "gate",
            if self.gate_passed() { "pass" } else { "fail" }.to_string(),
        );
        s
    }
}

/// Runs every trial of `spec`, in parallel, and aggregates in trial order.
pub fn run_experiment(spec: &SceneSpec, lm: &LmConfig) -> Result<ExperimentReport> {
    run_experiment_with(spec, lm, |_| Ok(()))
}

/// Like [`run_experiment`], additionally writing each trial under `dir`:
/// `pred/`, `calib/` and `label/` hold the replayable inputs and ground
/// truth, `refined/` the in-process result. Files are named by trial index.
pub fn run_experiment_with_dump(
    spec: &SceneSpec,
    lm: &LmConfig,
    dir: &Path,
) -> Result<ExperimentReport> {
    let io = |e: std::io::Error| Error::InvalidInput(format!("{}: {e}", dir.display()));
    for sub in ["pred", "calib", "label", "refined"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(io)?;
    }
    run_experiment_with(spec, lm, |t| {
        let name = format!("{:06}.txt", t.index);
        let fmt = FloatFormat::Exact;
        let truth: Vec<_> = t
            .result
            .scene
            .objects
            .iter()
            .map(TruthObject::to_label)
            .collect();
        let files = [
            ("pred", emit_predictions(&t.result.predictions, fmt)),
            ("calib", emit_calib(&t.result.scene.camera, fmt)),
            ("label", emit_labels(&truth, fmt)),
            ("refined", emit_labels(&t.result.refined, fmt)),
        ];
        for (sub, text) in files {
            std::fs::write(dir.join(sub).join(&name), text).map_err(io)?;
        }
        Ok(())
    })
}

struct IndexedTrial<'a> {
    index: usize,
    result: &'a TrialResult,
}

fn run_experiment_with(
    spec: &SceneSpec,
    lm: &LmConfig,
    sink: impl Fn(IndexedTrial<'_>) -> Result<()> + Sync,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let results: Vec<ErrorTotalsRow> = (0..spec.trials)
        .into_par_iter()
        .map(|index| {
            let result = run_trial(spec, index, lm)?;
            sink(IndexedTrial {
                index,
                result: &result,
            })?;
            Ok(ErrorTotalsRow {
                improved: result.improved(),
                totals: result.totals,
                by_difficulty: result.by_difficulty,
            })
        })
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport {
        spec: spec.clone(),
        trials: spec.trials,
        paired_trials: 0,
        improved_trials: 0,
        totals: ErrorTotals::default(),
        by_difficulty: [ErrorTotals::default(); 4],
    };
    for r in &results {
        if let Some(improved) = r.improved {
            report.paired_trials += 1;
            report.improved_trials += improved as usize;
        }
        report.totals.add(&r.totals);
        for (acc, b) in report.by_difficulty.iter_mut().zip(&r.by_difficulty) {
            acc.add(b);
        }
    }
    log::info!(
        "{} trials, depth error {:.4} -> {:.4}",
        report.trials,
        report.totals.mean_depth_before(),
        report.totals.mean_depth_after()
    );
    Ok(report)
}

struct ErrorTotalsRow {
    improved: Option<bool>,
    totals: ErrorTotals,
    by_difficulty: [ErrorTotals; 4],
}
