//! Flat `key = value` run configuration with dotted section keys.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;
use unroll_core::evaluation::PositiveClass;
use unroll_core::ink_model::{ModelSpec, TrainConfig};
use unroll_core::labeling::ThresholdMethod;
use unroll_core::phantom::{PhantomKind, PhantomSpec};
use unroll_core::segmentation::TraceParams;
use unroll_core::unwrap::Reduction;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("unknown key `{0}`")]
    Unknown(String),
    #[error("key `{key}` is set twice (lines {first} and {second})")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("`{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("cannot read config {path}: {msg}")]
    Read { path: PathBuf, msg: String },
}

fn invalid(key: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub depth: usize,
    pub step: f64,
    pub px_per_voxel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelConfig {
    pub method: ThresholdMethod,
    /// Side of the landmark lattice when landmarks come from the phantom.
    pub landmark_grid: usize,
    /// `px py u v` rows; overrides the phantom-derived landmarks.
    pub landmarks: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub threshold: f64,
    pub positive_class: PositiveClass,
    pub oracle_steps: usize,
    pub transcription_truth: Option<PathBuf>,
    pub transcription_pred: Option<PathBuf>,
    pub strict: bool,
}

/// Everything one run needs; every stochastic stage derives from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub trace: TraceParams,
    pub trace_spacing: f64,
    pub trace_margin: f64,
    pub trace_seed_every: f64,
    pub trace_z_start: usize,
    /// Inclusive; `None` is the last slice.
    pub trace_z_end: Option<usize>,
    pub sample: SampleConfig,
    pub texture_reduction: Reduction,
    pub texture_half_width: usize,
    pub label: LabelConfig,
    pub region_cols: usize,
    pub region_rows: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub predict_stride: usize,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Defaults with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            phantom: PhantomSpec {
                seed,
                ..PhantomSpec::default()
            },
            trace: TraceParams::default(),
            trace_spacing: 2.0,
            trace_margin: 4.0,
            trace_seed_every: 8.0,
            trace_z_start: 0,
            trace_z_end: None,
            sample: SampleConfig {
                depth: 33,
                step: 1.0,
                px_per_voxel: 1.0,
            },
            texture_reduction: Reduction::Mean,
            texture_half_width: 4,
            label: LabelConfig {
                method: ThresholdMethod::Otsu,
                landmark_grid: 5,
                landmarks: None,
            },
            region_cols: 2,
            region_rows: 2,
            model: ModelSpec::default(),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            predict_stride: 2,
            eval: EvalConfig {
                threshold: 0.5,
                positive_class: PositiveClass::Ink,
                oracle_steps: 256,
                transcription_truth: None,
                transcription_pred: None,
                strict: true,
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if let Some((first, _)) = entries.get(&k) {
                return Err(ConfigError::Duplicate {
                    key: k,
                    first: *first,
                    second: i + 1,
                });
            }
            entries.insert(k, (i + 1, v));
        }
        let (_, seed_text) = entries.remove("seed").ok_or(ConfigError::Missing("seed"))?;
        let seed: u64 = seed_text.parse().map_err(|e| invalid("seed", e))?;
        let mut cfg = Self::with_seed(seed);
        // A scroll starts from the scroll defaults; other phantom keys refine them.
        if let Some((_, kind)) = entries.remove("phantom.kind") {
            let kind: PhantomKind = kind.parse().map_err(|e| invalid("phantom.kind", e))?;
            if kind == PhantomKind::Scroll {
                cfg.phantom = PhantomSpec { seed, ..PhantomSpec::default_scroll() };
            }
        }
        for (key, (_, value)) in &entries {
            cfg.set(key, value, base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), ConfigError> {
        let (section, field) = key.split_once('.').ok_or_else(|| ConfigError::Unknown(key.to_string()))?;
        // An empty value clears an optional path.
        let path = |v: &str| {
            let p = PathBuf::from(v);
            (!v.is_empty()).then(|| if p.is_absolute() { p } else { base.join(p) })
        };
        match (section, field) {
            ("phantom", "seed") => return Err(invalid(key, "the phantom uses the top-level `seed`")),
            ("phantom", f) => self.phantom.set(f, value).map_err(|m| map_unknown(key, m))?,
            ("trace", "spacing") => self.trace_spacing = num(key, value)?,
            ("trace", "margin") => self.trace_margin = num(key, value)?,
            ("trace", "seed_every") => self.trace_seed_every = num(key, value)?,
            ("trace", "z_start") => self.trace_z_start = num(key, value)?,
            ("trace", "z_end") => self.trace_z_end = if value == "last" { None } else { Some(num(key, value)?) },
            ("trace", "step_dz") => self.trace.step_dz = num(key, value)?,
            ("trace", "search_radius") => self.trace.search_radius = num(key, value)?,
            ("trace", "alpha_stiffness") => self.trace.alpha_stiffness = num(key, value)?,
            ("trace", "beta_spacing") => self.trace.beta_spacing = num(key, value)?,
            ("trace", "relax_iters") => self.trace.relax_iters = num(key, value)?,
            ("trace", "min_intensity") => self.trace.min_intensity = num(key, value)?,
            ("trace", "smooth_sigma") => self.trace.smooth_sigma = num(key, value)?,
            ("sample", "depth") => self.sample.depth = num(key, value)?,
            ("sample", "step") => self.sample.step = num(key, value)?,
            ("sample", "px_per_voxel") => self.sample.px_per_voxel = num(key, value)?,
            ("texture", "reduction") => self.texture_reduction = num(key, value)?,
            ("texture", "half_width") => self.texture_half_width = num(key, value)?,
            ("label", "method") => {
                self.label.method = match value {
                    "otsu" => ThresholdMethod::Otsu,
                    v => ThresholdMethod::Fixed(v.parse().map_err(|_| invalid(key, "expected `otsu` or a number"))?),
                }
            }
            ("label", "landmark_grid") => self.label.landmark_grid = num(key, value)?,
            ("label", "landmarks") => self.label.landmarks = path(value),
            ("regions", "cols") => self.region_cols = num(key, value)?,
            ("regions", "rows") => self.region_rows = num(key, value)?,
            ("model", "patch") => {
                let v = list(key, value)?;
                if v.len() != 3 {
                    return Err(invalid(key, "expected `w,h,d`"));
                }
                self.model.patch = (v[0], v[1], v[2]);
            }
            ("model", "hidden") => self.model.hidden = if value.is_empty() { Vec::new() } else { list(key, value)? },
            ("model", "normalize") => self.model.normalize = num(key, value)?,
            ("model", "stride") => self.model.stride = num(key, value)?,
            ("train", "learning_rate") => self.train.learning_rate = num(key, value)?,
            ("train", "batch_size") => self.train.batch_size = num(key, value)?,
            ("train", "total_batches") => self.train.total_batches = num(key, value)?,
            ("train", "balance") => self.train.balance = num(key, value)?,
            ("train", "eval_every") => self.train.eval_every = num(key, value)?,
            ("train", "momentum") => self.train.momentum = num(key, value)?,
            ("train", "weight_decay") => self.train.weight_decay = num(key, value)?,
            ("predict", "stride") => self.predict_stride = num(key, value)?,
            ("eval", "threshold") => self.eval.threshold = num(key, value)?,
            ("eval", "positive_class") => {
                self.eval.positive_class = match value {
                    "ink" => PositiveClass::Ink,
                    "non_ink" => PositiveClass::NonInk,
                    _ => return Err(invalid(key, "expected ink|non_ink")),
                }
            }
            ("eval", "oracle_steps") => self.eval.oracle_steps = num(key, value)?,
            ("eval", "transcription_truth") => self.eval.transcription_truth = path(value),
            ("eval", "transcription_pred") => self.eval.transcription_pred = path(value),
            ("eval", "strict") => self.eval.strict = num(key, value)?,
            _ => return Err(ConfigError::Unknown(key.to_string())),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.phantom.validate().map_err(|e| invalid("phantom", e))?;
        self.trace.validate().map_err(|e| invalid("trace", e))?;
        self.train.validate().map_err(|e| invalid("train", e))?;
        let positive = |key: &str, ok: bool| if ok { Ok(()) } else { Err(invalid(key, "must be positive")) };
        positive("trace.spacing", self.trace_spacing > 0.0)?;
        positive("trace.seed_every", self.trace_seed_every > 0.0)?;
        positive("sample.depth", self.sample.depth > 0)?;
        positive("sample.step", self.sample.step > 0.0)?;
        positive("sample.px_per_voxel", self.sample.px_per_voxel > 0.0)?;
        positive("regions.cols", self.region_cols > 0)?;
        positive("regions.rows", self.region_rows > 0)?;
        positive("model.stride", self.model.stride > 0)?;
        positive("predict.stride", self.predict_stride > 0)?;
        positive("eval.oracle_steps", self.eval.oracle_steps > 1)?;
        if self.region_cols * self.region_rows < 2 {
            return Err(invalid("regions", "cross-validation needs at least 2 regions"));
        }
        if self.label.landmark_grid < 2 {
            return Err(invalid("label.landmark_grid", "must be at least 2"));
        }
        let (pw, ph, pd) = self.model.patch;
        if pw == 0 || ph == 0 || pd == 0 {
            return Err(invalid("model.patch", "dimensions must be positive"));
        }
        if pd > self.sample.depth {
            return Err(invalid("model.patch", format!("depth {pd} exceeds sample.depth {}", self.sample.depth)));
        }
        if self.texture_half_width > self.sample.depth / 2 {
            return Err(invalid("texture.half_width", "must not exceed sample.depth / 2"));
        }
        if self.eval.transcription_truth.is_some() != self.eval.transcription_pred.is_some() {
            return Err(invalid("eval", "transcription_truth and transcription_pred go together"));
        }
        if let Some(z1) = self.trace_z_end {
            if z1 <= self.trace_z_start {
                return Err(invalid("trace.z_end", "must exceed trace.z_start"));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` listing of every resolved setting.
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<String, String> = BTreeMap::new();
        m.insert("seed".into(), self.seed.to_string());
        for line in self.phantom.to_config_string().lines() {
            if let Some((k, v)) = line.split_once('=') {
                let k = k.trim();
                if k != "seed" {
                    m.insert(format!("phantom.{k}"), v.trim().to_string());
                }
            }
        }
        let t = &self.trace;
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("trace.spacing", self.trace_spacing.to_string());
        put("trace.margin", self.trace_margin.to_string());
        put("trace.seed_every", self.trace_seed_every.to_string());
        put("trace.z_start", self.trace_z_start.to_string());
        put("trace.z_end", self.trace_z_end.map_or("last".into(), |z| z.to_string()));
        put("trace.step_dz", t.step_dz.to_string());
        put("trace.search_radius", t.search_radius.to_string());
        put("trace.alpha_stiffness", t.alpha_stiffness.to_string());
        put("trace.beta_spacing", t.beta_spacing.to_string());
        put("trace.relax_iters", t.relax_iters.to_string());
        put("trace.min_intensity", t.min_intensity.to_string());
        put("trace.smooth_sigma", t.smooth_sigma.to_string());
        put("sample.depth", self.sample.depth.to_string());
        put("sample.step", self.sample.step.to_string());
        put("sample.px_per_voxel", self.sample.px_per_voxel.to_string());
        put("texture.reduction", self.texture_reduction.to_string());
        put("texture.half_width", self.texture_half_width.to_string());
        put(
            "label.method",
            match self.label.method {
                ThresholdMethod::Otsu => "otsu".into(),
                ThresholdMethod::Fixed(v) => v.to_string(),
            },
        );
        put("label.landmark_grid", self.label.landmark_grid.to_string());
        put("label.landmarks", opt_path(&self.label.landmarks));
        put("regions.cols", self.region_cols.to_string());
        put("regions.rows", self.region_rows.to_string());
        let (pw, ph, pd) = self.model.patch;
        put("model.patch", format!("{pw},{ph},{pd}"));
        put("model.hidden", self.model.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
        put("model.normalize", self.model.normalize.to_string());
        put("model.stride", self.model.stride.to_string());
        let tr = &self.train;
        put("train.learning_rate", tr.learning_rate.to_string());
        put("train.batch_size", tr.batch_size.to_string());
        put("train.total_batches", tr.total_batches.to_string());
        put("train.balance", tr.balance.to_string());
        put("train.eval_every", tr.eval_every.to_string());
        put("train.momentum", tr.momentum.to_string());
        put("train.weight_decay", tr.weight_decay.to_string());
        put("predict.stride", self.predict_stride.to_string());
        put("eval.threshold", self.eval.threshold.to_string());
        put(
            "eval.positive_class",
            match self.eval.positive_class {
                PositiveClass::Ink => "ink".into(),
                PositiveClass::NonInk => "non_ink".into(),
            },
        );
        put("eval.oracle_steps", self.eval.oracle_steps.to_string());
        put("eval.transcription_truth", opt_path(&self.eval.transcription_truth));
        put("eval.transcription_pred", opt_path(&self.eval.transcription_pred));
        put("eval.strict", self.eval.strict.to_string());
        m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or(String::new(), |p| p.display().to_string())
}

fn map_unknown(key: &str, msg: String) -> ConfigError {
    if msg.starts_with("unknown phantom key") {
        ConfigError::Unknown(key.to_string())
    } else {
        invalid(key, msg)
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| invalid(key, e))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value.split(',').map(|t| num(key, t.trim())).collect()
}
