//! Run configuration shared by every subcommand.

use std::fmt::Write as _;

use monopair::config::{parse_bool, parse_entries, parse_list, parse_value};
use monopair::eval::EvalConfig;
use monopair::kitti_io::FloatFormat;
use monopair::optimizer::LmConfig;
use monopair::pairing::{Blockers, PairingConfig};
use monopair::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Backbone downsampling factor `s`.
    pub downsample: u32,
    /// Objects scoring below this take part in no pair during `optimize`.
    pub score_threshold: f64,
    pub lm: LmConfig,
    /// Classes, IoU thresholds, difficulty limits and aliasing for `eval`;
    /// `classes` also fixes the rows of the pair-count table.
    pub eval: EvalConfig,
    pub blockers: Blockers,
    pub float_format: FloatFormat,
    /// Overrides the seed of a synthetic spec.
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core. Never affects results.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            downsample: 4,
            score_threshold: PairingConfig::default().score_threshold,
            lm: LmConfig::default(),
            eval: EvalConfig::default(),
            blockers: Blockers::AllClasses,
            float_format: FloatFormat::Exact,
            seed: None,
            jobs: 0,
        }
    }
}

fn triple<V: std::str::FromStr + Copy>(key: &str, value: &str) -> Result<[V; 3]>
where
    V::Err: std::fmt::Display,
{
    let items: Vec<V> = parse_list(key, value)?;
    items.try_into().map_err(|v: Vec<V>| {
        Error::Validation(format!(
            "{key}: expected 3 values (easy, moderate, hard), got {}",
            v.len()
        ))
    })
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

impl RunConfig {
    /// Reads `key = value` lines over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for e in parse_entries(text)? {
            cfg.set(&e.key, &e.value)
                .map_err(|err| Error::Validation(format!("line {}: {err}", e.line)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        let d = &mut self.eval.difficulty;
        match key {
            "downsample" => self.downsample = parse_value(key, v)?,
            "score_threshold" => self.score_threshold = parse_value(key, v)?,
            "lm_initial_lambda" => self.lm.initial_lambda = parse_value(key, v)?,
            "lm_lambda_factor" => self.lm.lambda_factor = parse_value(key, v)?,
            "lm_max_iterations" => self.lm.max_iterations = parse_value(key, v)?,
            "lm_cost_tolerance" => self.lm.cost_tolerance = parse_value(key, v)?,
            "lm_step_tolerance" => self.lm.step_tolerance = parse_value(key, v)?,
            "lm_min_depth" => self.lm.min_depth = parse_value(key, v)?,
            "lm_max_step_halvings" => self.lm.max_step_halvings = parse_value(key, v)?,
            "max_weight" => self.lm.max_weight = parse_value(key, v)?,
            "weight_rule" => self.lm.weight_rule = parse_value(key, v)?,
            "min_height" => d.min_height = triple(key, v)?,
            "max_occlusion" => d.max_occlusion = triple(key, v)?,
            "max_truncation" => d.max_truncation = triple(key, v)?,
            "classes" => self.eval.classes = parse_list(key, v)?,
            "iou_thresholds" => self.eval.iou_thresholds = parse_list(key, v)?,
            "ignore_aliases" => self.eval.ignore_aliases = parse_bool(key, v)?,
            "blockers" => {
                self.blockers = match v {
                    "all_classes" => Blockers::AllClasses,
                    "same_class" => Blockers::SameClass,
                    _ => {
                        return Err(Error::Validation(format!(
                            "blockers: expected all_classes or same_class, got `{v}`"
                        )))
                    }
                }
            }
            "float_format" => self.float_format = parse_value(key, v)?,
            "seed" => self.seed = Some(parse_value(key, v)?),
            "jobs" => self.jobs = parse_value(key, v)?,
            _ => return Err(Error::Validation(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Validation(format!("{key}: {why}")));
        let lm = &self.lm;
        if !(1..=64).contains(&self.downsample) {
            return bad("downsample", "must be in 1..=64");
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad("score_threshold", "must be in [0, 1]");
        }
        if !(lm.initial_lambda > 0.0 && lm.initial_lambda.is_finite()) {
            return bad("lm_initial_lambda", "must be positive");
        }
        if !(lm.lambda_factor > 1.0 && lm.lambda_factor.is_finite()) {
            return bad("lm_lambda_factor", "must be greater than 1");
        }
        if lm.max_iterations == 0 {
            return bad("lm_max_iterations", "must be at least 1");
        }
        for (key, v) in [
            ("lm_cost_tolerance", lm.cost_tolerance),
            ("lm_step_tolerance", lm.step_tolerance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, "must be finite and >= 0");
            }
        }
        if !(lm.min_depth > 0.0 && lm.min_depth.is_finite()) {
            return bad("lm_min_depth", "must be positive");
        }
        if !(lm.max_weight > 0.0) {
            return bad("max_weight", "must be positive");
        }
        let d = &self.eval.difficulty;
        if d.min_height.iter().any(|h| !(*h >= 0.0)) {
            return bad("min_height", "must be >= 0");
        }
        if d.max_occlusion.iter().any(|o| !(-1..=3).contains(o)) {
            return bad("max_occlusion", "must be in -1..=3");
        }
        if d.max_truncation.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("max_truncation", "must be in [0, 1]");
        }
        if self.eval.classes.is_empty() {
            return bad("classes", "must name at least one class");
        }
        if self.eval.iou_thresholds.is_empty()
            || self
                .eval
                .iou_thresholds
                .iter()
                .any(|t| !(*t > 0.0 && *t <= 1.0))
        {
            return bad("iou_thresholds", "must be one or more values in (0, 1]");
        }
        Ok(())
    }

    /// Effective configuration as `key = value` lines. `jobs` is left out;
    /// it does not change any output.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let lm = &self.lm;
        let d = &self.eval.difficulty;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("downsample", self.downsample.to_string());
        kv("score_threshold", self.score_threshold.to_string());
        kv("lm_initial_lambda", lm.initial_lambda.to_string());
        kv("lm_lambda_factor", lm.lambda_factor.to_string());
        kv("lm_max_iterations", lm.max_iterations.to_string());
        kv("lm_cost_tolerance", lm.cost_tolerance.to_string());
        kv("lm_step_tolerance", lm.step_tolerance.to_string());
        kv("lm_min_depth", lm.min_depth.to_string());
        kv("lm_max_step_halvings", lm.max_step_halvings.to_string());
        kv("max_weight", lm.max_weight.to_string());
        kv("weight_rule", lm.weight_rule.to_string());
        kv("min_height", join(&d.min_height));
        kv("max_occlusion", join(&d.max_occlusion));
        kv("max_truncation", join(&d.max_truncation));
        kv("classes", self.eval.classes.join(", "));
        kv("iou_thresholds", join(&self.eval.iou_thresholds));
        kv("ignore_aliases", self.eval.ignore_aliases.to_string());
        let blockers = match self.blockers {
            Blockers::AllClasses => "all_classes",
            Blockers::SameClass => "same_class",
        };
        kv("blockers", blockers.to_string());
        kv("float_format", self.float_format.to_string());
        if let Some(seed) = self.seed {
            kv("seed", seed.to_string());
        }
        s
    }

    /// The effective configuration as `# config.key = value` comment lines.
    pub fn echo(&self) -> String {
        self.to_key_values()
            .lines()
            .map(|l| format!("# config.{l}\n"))
            .collect()
    }
}
