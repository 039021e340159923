//! Experiment configuration files.
//!
//! A config is one JSON document. Unknown keys anywhere are rejected and
//! every field is validated when the file is loaded. Relative paths are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Benchmark, Dataset};
use crate::error::{Error, Result};
use crate::pqc::Design;
use crate::qsim::MAX_QUBITS;
use crate::train::{NoiseSource, TrainConfig};

fn config_err<T>(field: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config { field: field.into(), message: message.into() })
}

fn default_train_cap() -> usize {
    1000
}

fn default_test_cap() -> usize {
    500
}

fn default_repeats() -> usize {
    1
}

/// Where training and test samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// IDX files. Without separate test files, train and test subsets are
    /// drawn disjointly from the same file pair.
    Idx {
        #[serde(default = "default_benchmark")]
        benchmark: Benchmark,
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_train_cap")]
        train_cap: usize,
        #[serde(default = "default_test_cap")]
        test_cap: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Gaussian blobs around per-class anchors.
    Synthetic {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_benchmark() -> Benchmark {
    Benchmark::Mnist4
}

impl DataConfig {
    pub fn classes(&self) -> usize {
        match self {
            DataConfig::Idx { benchmark, .. } => benchmark.classes(),
            DataConfig::Synthetic { classes, .. } => *classes,
        }
    }

    /// Short name used in summaries.
    pub fn name(&self) -> String {
        match self {
            DataConfig::Idx { benchmark, .. } => benchmark.name().to_string(),
            DataConfig::Synthetic { classes, .. } => format!("synthetic-{classes}"),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DataConfig::Idx { images, labels, test_images, test_labels, train_cap, test_cap, .. } => {
                if test_images.is_some() != test_labels.is_some() {
                    return config_err("data.test_images", "test_images and test_labels go together");
                }
                if *train_cap == 0 || *test_cap == 0 {
                    return config_err("data.train_cap", "caps must be at least 1");
                }
                for (field, p) in [("data.images", images), ("data.labels", labels)] {
                    if p.as_os_str().is_empty() {
                        return config_err(field, "empty path");
                    }
                }
                Ok(())
            }
            DataConfig::Synthetic { classes, train_per_class, test_per_class, separation, .. } => {
                if *classes != 2 && *classes != 4 {
                    return config_err("data.classes", format!("{classes} must be 2 or 4"));
                }
                if *train_per_class == 0 || *test_per_class == 0 {
                    return config_err("data.train_per_class", "per-class counts must be at least 1");
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    return config_err("data.separation", format!("{separation} must be finite and ≥ 0"));
                }
                Ok(())
            }
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DataConfig::Idx { images, labels, test_images, test_labels, .. } = self {
            for p in [images, labels] {
                *p = resolve(base, p);
            }
            for p in [test_images, test_labels].into_iter().flatten() {
                *p = resolve(base, p);
            }
        }
    }

    /// Loads and splits the data.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DataConfig::Idx { benchmark, images, labels, test_images, test_labels, train_cap, test_cap, seed } => {
                let raw = data::load_idx(images, labels)?;
                match (test_images, test_labels) {
                    (Some(ti), Some(tl)) => {
                        let test_raw = data::load_idx(ti, tl)?;
                        data::make_benchmark_from_splits(&raw, &test_raw, *benchmark, *train_cap, *test_cap, *seed)
                    }
                    _ => data::make_benchmark(&raw, *benchmark, *train_cap, *test_cap, *seed),
                }
            }
            DataConfig::Synthetic { classes, train_per_class, test_per_class, separation, seed } => {
                let all = data::synthetic_blobs(*classes, train_per_class + test_per_class, *separation, *seed)?;
                let mut seen = vec![0usize; *classes];
                let (mut train, mut test) = (Vec::new(), Vec::new());
                for s in all.samples {
                    let k = &mut seen[s.label];
                    if *k < *train_per_class {
                        train.push(s);
                    } else {
                        test.push(s);
                    }
                    *k += 1;
                }
                Ok((Dataset { classes: *classes, samples: train }, Dataset { classes: *classes, samples: test }))
            }
        }
    }
}

/// Grid for the design × step size × loss-setting table and the layer
/// sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub designs: Vec<Design>,
    pub step_sizes: Vec<usize>,
    /// Forward-backward weights compared in every cell; 0 is the baseline.
    pub alpha_fb: Vec<f64>,
    /// Layer counts for the depth sweep; empty skips the sweep.
    pub layer_sweep: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            designs: vec![Design::RX, Design::U2, Design::U3],
            step_sizes: vec![4, 2, 1],
            alpha_fb: vec![0.0, 1.0],
            layer_sweep: Vec::new(),
        }
    }
}

impl AblationConfig {
    pub fn table_rows(&self) -> usize {
        self.designs.len() * self.step_sizes.len() * self.alpha_fb.len()
    }

    fn validate(&self, train: &TrainConfig) -> Result<()> {
        if self.alpha_fb.is_empty() {
            return config_err("ablation.alpha_fb", "empty grid");
        }
        let table_axes = [self.designs.is_empty(), self.step_sizes.is_empty()];
        if table_axes.iter().any(|&e| e) && table_axes.iter().any(|&e| !e) {
            return config_err("ablation.designs", "designs and step_sizes must both be empty or both be set");
        }
        if self.table_rows() == 0 && self.layer_sweep.is_empty() {
            return config_err("ablation", "empty grid");
        }
        for &a in &self.alpha_fb {
            if !(a.is_finite() && a >= 0.0) {
                return config_err("ablation.alpha_fb", format!("{a} must be finite and ≥ 0"));
            }
            if a == 0.0 && train.loss_weights.alpha_task == 0.0 {
                return config_err("ablation.alpha_fb", "α_fb = 0 with α_task = 0 leaves no loss");
            }
        }
        for &k in &self.step_sizes {
            if k == 0 || !train.layers.is_multiple_of(k) {
                return config_err("ablation.step_sizes", format!("{k} does not divide {} layers", train.layers));
            }
        }
        for &l in &self.layer_sweep {
            if l == 0 || l % train.step_size != 0 {
                return config_err(
                    "ablation.layer_sweep",
                    format!("{l} layers not divisible by step size {}", train.step_size),
                );
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceChannel {
    /// Pauli-Lindblad noise with seeded rates from the device range.
    Pauli,
    /// Every single-qubit Pauli at `rate`.
    Depolarizing,
    /// Amplitude damping with probability `gamma` on every qubit.
    AmplitudeDamping,
}

/// Divergence-trace settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub channel: TraceChannel,
    pub operations: usize,
    /// Rényi order.
    pub alpha: f64,
    pub rate: f64,
    pub gamma: f64,
    pub qubits: usize,
    pub seed: u64,
    /// Initial window over which amplitude-damping traces are checked.
    pub window: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            channel: TraceChannel::Depolarizing,
            operations: 500,
            alpha: 2.0,
            rate: 0.01,
            gamma: 0.01,
            qubits: 4,
            seed: 0,
            window: 100,
        }
    }
}

impl TraceConfig {
    fn validate(&self) -> Result<()> {
        if self.operations == 0 {
            return config_err("trace.operations", "must be at least 1");
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.alpha != 1.0) {
            return config_err("trace.alpha", format!("{} must be positive, finite and ≠ 1", self.alpha));
        }
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return config_err("trace.rate", format!("{} must be finite and ≥ 0", self.rate));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return config_err("trace.gamma", format!("{} outside [0, 1]", self.gamma));
        }
        if self.qubits == 0 || self.qubits > MAX_QUBITS {
            return config_err("trace.qubits", format!("{} outside 1..={MAX_QUBITS}", self.qubits));
        }
        if self.window == 0 || self.window > self.operations {
            return config_err("trace.window", format!("{} outside 1..={}", self.window, self.operations));
        }
        Ok(())
    }
}

/// One experiment: data, training hyperparameters and per-command settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Output directory used when `--out` is not given. Not echoed into
    /// outputs, so reruns into different directories stay byte-identical.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub ablation: Option<AblationConfig>,
    #[serde(default)]
    pub trace: Option<TraceConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { data: None, train: TrainConfig::default(), repeats: 1, output: None, ablation: None, trace: None }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config { field: "<document>".into(), message: e.to_string() })?;
        if let Some(d) = &mut config.data {
            d.resolve_paths(base);
        }
        if let NoiseSource::File(p) = &config.train.noise {
            config.train.noise = NoiseSource::File(resolve(base, p));
        }
        if let Some(o) = &config.output {
            config.output = Some(resolve(base, o));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            field: "<file>".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    /// Checks every field, including the training hyperparameters.
    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::Config { field: format!("train.{field}"), message },
            other => other,
        })?;
        if self.repeats == 0 {
            return config_err("repeats", "must be at least 1");
        }
        if let Some(d) = &self.data {
            d.validate()?;
        }
        if let Some(a) = &self.ablation {
            a.validate(&self.train)?;
        }
        if let Some(t) = &self.trace {
            t.validate()?;
        }
        Ok(())
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data.as_ref().ok_or_else(|| Error::Config { field: "data".into(), message: "missing".into() })
    }

    /// Compact JSON echo of the resolved config.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
