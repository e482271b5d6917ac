//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key has a default,
//! so an empty file is a valid configuration. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ExperimentError;
use crate::network::{Activation, NetworkSpec};
use crate::ole_loss::OleConfig;
use crate::optim::{AdamParams, OptimizerConfig, OptimizerKind, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Blobs,
    Csv,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Softmax,
    Ole,
    Combined,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Softmax => "softmax",
            LossMode::Ole => "ole",
            LossMode::Combined => "softmax+ole",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerChoice {
    SgdNesterov,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalRule {
    /// 1-NN cosine for the standalone embedding loss, argmax otherwise.
    Auto,
    Argmax,
    Knn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub blob_dim: usize,
    pub blob_classes: usize,
    pub blob_train_per_class: usize,
    pub blob_test_per_class: usize,
    pub blob_spread: f64,
    pub data_seed: u64,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Classes withheld from training and used as the novel set.
    pub novel_classes: Vec<usize>,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub batchnorm: bool,
    pub mode: LossMode,
    pub lambda: f64,
    pub delta_clamp: f64,
    pub sv_threshold: f64,
    pub optimizer: OptimizerChoice,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_all: bool,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub stratified: bool,
    pub val_fraction: f64,
    pub eval: EvalRule,
    pub seed: u64,
    pub repeats: usize,
    pub lambdas: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Blobs,
            blob_dim: 16,
            blob_classes: 3,
            blob_train_per_class: 200,
            blob_test_per_class: 50,
            blob_spread: 0.1,
            data_seed: 0,
            train_path: None,
            test_path: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            novel_classes: Vec::new(),
            hidden: vec![100, 100, 100],
            feature_dim: 100,
            batchnorm: true,
            mode: LossMode::Combined,
            lambda: 0.25,
            delta_clamp: 1.0,
            sv_threshold: 1e-6,
            optimizer: OptimizerChoice::SgdNesterov,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_all: true,
            schedule: Schedule::Step,
            epochs: 164,
            batch_size: 64,
            stratified: false,
            val_fraction: 0.1,
            eval: EvalRule::Auto,
            seed: 0,
            repeats: 1,
            lambdas: vec![0.0, 0.0625, 0.25, 0.5],
            checkpoint: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ExperimentError> {
    value
        .parse()
        .map_err(|_| ExperimentError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ExperimentError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ExperimentError::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ExperimentError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

/// Accepts plain decimals and simple fractions like `1/16`.
fn parse_real(key: &str, value: &str) -> Result<f64, ExperimentError> {
    if let Some((a, b)) = value.split_once('/') {
        let a: f64 = parse_num(key, a.trim())?;
        let b: f64 = parse_num(key, b.trim())?;
        return Ok(a / b);
    }
    parse_num(key, value)
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut cfg = Self::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ExperimentError::Config(format!("line {}: expected key = value", k + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ExperimentError> {
        match key {
            "dataset" => {
                self.dataset = match value {
                    "blobs" => DatasetKind::Blobs,
                    "csv" => DatasetKind::Csv,
                    "idx" => DatasetKind::Idx,
                    _ => return Err(ExperimentError::Config(format!("dataset: unknown kind {value:?}"))),
                }
            }
            "blob_dim" => self.blob_dim = parse_num(key, value)?,
            "blob_classes" => self.blob_classes = parse_num(key, value)?,
            "blob_train_per_class" => self.blob_train_per_class = parse_num(key, value)?,
            "blob_test_per_class" => self.blob_test_per_class = parse_num(key, value)?,
            "blob_spread" => self.blob_spread = parse_real(key, value)?,
            "data_seed" => self.data_seed = parse_num(key, value)?,
            "train_path" => self.train_path = opt_path(value),
            "test_path" => self.test_path = opt_path(value),
            "train_images" => self.train_images = opt_path(value),
            "train_labels" => self.train_labels = opt_path(value),
            "test_images" => self.test_images = opt_path(value),
            "test_labels" => self.test_labels = opt_path(value),
            "novel_classes" => self.novel_classes = parse_list(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "feature_dim" => self.feature_dim = parse_num(key, value)?,
            "batchnorm" => self.batchnorm = parse_bool(key, value)?,
            "mode" => {
                self.mode = match value {
                    "softmax" => LossMode::Softmax,
                    "ole" => LossMode::Ole,
                    "softmax+ole" | "combined" => LossMode::Combined,
                    _ => return Err(ExperimentError::Config(format!("mode: unknown {value:?}"))),
                }
            }
            "lambda" => self.lambda = parse_real(key, value)?,
            "delta_clamp" => self.delta_clamp = parse_real(key, value)?,
            "sv_threshold" => self.sv_threshold = parse_real(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "sgd_nesterov" | "sgd" => OptimizerChoice::SgdNesterov,
                    "adam" => OptimizerChoice::Adam,
                    _ => return Err(ExperimentError::Config(format!("optimizer: unknown {value:?}"))),
                }
            }
            "lr" => self.lr = parse_real(key, value)?,
            "momentum" => self.momentum = parse_real(key, value)?,
            "weight_decay" => self.weight_decay = parse_real(key, value)?,
            "decay_all" => self.decay_all = parse_bool(key, value)?,
            "schedule" => {
                self.schedule = match value {
                    "step" => Schedule::Step,
                    "constant" => Schedule::Constant,
                    _ => return Err(ExperimentError::Config(format!("schedule: unknown {value:?}"))),
                }
            }
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "stratified" => self.stratified = parse_bool(key, value)?,
            "val_fraction" => self.val_fraction = parse_real(key, value)?,
            "eval" => {
                self.eval = match value {
                    "auto" => EvalRule::Auto,
                    "argmax" => EvalRule::Argmax,
                    "knn" => EvalRule::Knn,
                    _ => return Err(ExperimentError::Config(format!("eval: unknown {value:?}"))),
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "repeats" => self.repeats = parse_num(key, value)?,
            "lambdas" => {
                self.lambdas = value
                    .split(',')
                    .filter(|v| !v.trim().is_empty())
                    .map(|v| parse_real(key, v.trim()))
                    .collect::<Result<_, _>>()?
            }
            "checkpoint" => self.checkpoint = opt_path(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(ExperimentError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` strings, as given to `--set`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ExperimentError> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| ExperimentError::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        if self.repeats < 1 {
            return fail("repeats must be >= 1".into());
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if self.mode != LossMode::Softmax && !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        self.ole_config()
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn ole_config(&self) -> OleConfig {
        OleConfig {
            delta_clamp: self.delta_clamp,
            sv_threshold: self.sv_threshold,
        }
    }

    /// λ applied to the embedding term in the combined objective. The
    /// standalone embedding objective is `L_o` alone and ignores λ.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            LossMode::Softmax => 0.0,
            LossMode::Ole => 1.0,
            LossMode::Combined => self.lambda,
        }
    }

    pub fn uses_knn(&self) -> bool {
        match self.eval {
            EvalRule::Knn => true,
            EvalRule::Argmax => false,
            EvalRule::Auto => self.mode == LossMode::Ole,
        }
    }

    pub fn network_spec(&self, input_dim: usize, class_count: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            class_count,
            use_batchnorm: self.batchnorm,
            activation: Activation::Relu,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: match self.optimizer {
                OptimizerChoice::SgdNesterov => OptimizerKind::SgdNesterov {
                    momentum: self.momentum,
                },
                OptimizerChoice::Adam => OptimizerKind::Adam(AdamParams::default()),
            },
            base_lr: self.lr,
            weight_decay: self.weight_decay,
            decay_all: self.decay_all,
            schedule: self.schedule,
        }
    }

    /// Serializes back to the `key = value` format.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let kind = match self.dataset {
            DatasetKind::Blobs => "blobs",
            DatasetKind::Csv => "csv",
            DatasetKind::Idx => "idx",
        };
        let _ = writeln!(s, "dataset = {kind}");
        let _ = writeln!(s, "blob_dim = {}", self.blob_dim);
        let _ = writeln!(s, "blob_classes = {}", self.blob_classes);
        let _ = writeln!(s, "blob_train_per_class = {}", self.blob_train_per_class);
        let _ = writeln!(s, "blob_test_per_class = {}", self.blob_test_per_class);
        let _ = writeln!(s, "blob_spread = {}", self.blob_spread);
        let _ = writeln!(s, "data_seed = {}", self.data_seed);
        let _ = writeln!(s, "train_path = {}", path(&self.train_path));
        let _ = writeln!(s, "test_path = {}", path(&self.test_path));
        let _ = writeln!(s, "train_images = {}", path(&self.train_images));
        let _ = writeln!(s, "train_labels = {}", path(&self.train_labels));
        let _ = writeln!(s, "test_images = {}", path(&self.test_images));
        let _ = writeln!(s, "test_labels = {}", path(&self.test_labels));
        let _ = writeln!(s, "novel_classes = {}", list(&self.novel_classes));
        let _ = writeln!(s, "hidden = {}", list(&self.hidden));
        let _ = writeln!(s, "feature_dim = {}", self.feature_dim);
        let _ = writeln!(s, "batchnorm = {}", self.batchnorm);
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "delta_clamp = {}", self.delta_clamp);
        let _ = writeln!(s, "sv_threshold = {}", self.sv_threshold);
        let opt = match self.optimizer {
            OptimizerChoice::SgdNesterov => "sgd_nesterov",
            OptimizerChoice::Adam => "adam",
        };
        let _ = writeln!(s, "optimizer = {opt}");
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "decay_all = {}", self.decay_all);
        let sched = match self.schedule {
            Schedule::Step => "step",
            Schedule::Constant => "constant",
        };
        let _ = writeln!(s, "schedule = {sched}");
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "stratified = {}", self.stratified);
        let _ = writeln!(s, "val_fraction = {}", self.val_fraction);
        let eval = match self.eval {
            EvalRule::Auto => "auto",
            EvalRule::Argmax => "argmax",
            EvalRule::Knn => "knn",
        };
        let _ = writeln!(s, "eval = {eval}");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "repeats = {}", self.repeats);
        let lambdas = self.lambdas.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "lambdas = {lambdas}");
        let _ = writeln!(s, "checkpoint = {}", path(&self.checkpoint));
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        s
    }
}
