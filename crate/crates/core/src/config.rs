//! Flat `key = value` run configuration with `#` comments.
//!
//! Every key is optional except where a subcommand declares it required;
//! unknown and duplicate keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

use crate::data::{AugmentationConfig, SyntheticSpec};
use crate::eval::ProbeConfig;
use crate::loss::LossWeights;
use crate::model::ModelDims;
use crate::tensor::DType;
use crate::train::{AdamParams, Objective, SuperInfoConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { key: String, line: usize },
    #[error("line {line}: unknown key `{key}`")]
    Unknown { key: String, line: usize },
    #[error("key `{key}`: cannot use {value:?}: {reason}")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key `{0}`")]
    Missing(String),
}

/// Raw parsed document: key -> (value, line).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDoc {
    entries: BTreeMap<String, (String, usize)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            }
            if entries.insert(k.to_string(), (v.to_string(), line)).is_some() {
                return Err(ConfigError::Duplicate {
                    key: k.to_string(),
                    line,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<(), ConfigError> {
        let mut unknown: Vec<(&String, usize)> = self
            .entries
            .iter()
            .filter(|(k, _)| !known.contains(&k.as_str()))
            .map(|(k, (_, line))| (k, *line))
            .collect();
        unknown.sort_by_key(|(_, line)| *line);
        match unknown.first() {
            Some((k, line)) => Err(ConfigError::Unknown {
                key: k.to_string(),
                line: *line,
            }),
            None => Ok(()),
        }
    }

    pub fn require(&self, keys: &[&str]) -> Result<(), ConfigError> {
        match keys.iter().find(|k| !self.contains(k)) {
            Some(k) => Err(ConfigError::Missing(k.to_string())),
            None => Ok(()),
        }
    }

    fn value<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| invalid(key, v, e)),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some("") => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|e: T::Err| invalid(key, v, e)))
                .collect(),
        }
    }
}

fn invalid(key: &str, value: &str, reason: impl Display) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "seed",
    "epochs",
    "batch_size",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "tau",
    "dtype",
    "objective",
    "freeze_heads",
    "metrics_wall_clock",
    "input_dim",
    "hidden",
    "repr_dim",
    "proj_hidden",
    "proj_dim",
    "decoder_hidden",
    "aug_crop_lo",
    "aug_crop_hi",
    "aug_flip_prob",
    "aug_noise_std",
    "aug_scale_lo",
    "aug_scale_hi",
];

pub const DATA_KEYS: &[&str] = &[
    "n_classes",
    "d_shared",
    "d_specific",
    "d_nuisance",
    "n_samples",
    "n_test",
    "mixing_seed",
    "noise_std",
    "nuisance_scale",
    "jitter_std",
    "specific_jitter_std",
    "shared_mixing",
    "transfer_nuisance_scales",
    "transfer_samples",
];

pub const PROBE_KEYS: &[&str] = &["probe_lr", "probe_iterations", "probe_tol"];

pub const ABLATION_KEYS: &[&str] = &["ablation_seeds"];

/// Keys the generator needs to know the block structure.
pub const REQUIRED_DATA_KEYS: &[&str] = &["n_classes", "d_shared", "d_specific", "d_nuisance", "n_samples"];

/// Everything a CLI run can configure.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: SuperInfoConfig,
    pub data: SyntheticSpec,
    pub n_test: usize,
    /// Nuisance multipliers of the transfer tasks, one task per entry.
    pub transfer_nuisance_scales: Vec<f64>,
    /// Train samples per transfer task (the test split uses `n_test`).
    pub transfer_samples: usize,
    pub probe: ProbeConfig,
    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: SuperInfoConfig::default(),
            data: SyntheticSpec::default(),
            n_test: 512,
            transfer_nuisance_scales: vec![2.0, 3.0],
            transfer_samples: 512,
            probe: ProbeConfig::default(),
            ablation_seeds: vec![0],
        }
    }
}

fn parse_dtype(doc: &KvDoc) -> Result<DType, ConfigError> {
    match doc.get("dtype") {
        None => Ok(DType::F32),
        Some(v) => DType::parse(v).ok_or_else(|| invalid("dtype", v, "expected f32 or f64")),
    }
}

fn parse_objective(doc: &KvDoc) -> Result<Objective, ConfigError> {
    match doc.get("objective") {
        None => Ok(Objective::SuperInfo),
        Some(v) => Objective::parse(v).ok_or_else(|| invalid("objective", v, "expected superinfo or contrastive")),
    }
}

/// Reads the training keys of `doc` on top of the defaults.
pub fn parse_train(doc: &KvDoc) -> Result<SuperInfoConfig, ConfigError> {
    let d = SuperInfoConfig::default();
    let w = d.weights;
    let a = d.augmentation;
    let m = &d.model;
    let cfg = SuperInfoConfig {
        weights: LossWeights {
            lambda1: doc.value("lambda1", w.lambda1)?,
            lambda2: doc.value("lambda2", w.lambda2)?,
            lambda3: doc.value("lambda3", w.lambda3)?,
            lambda4: doc.value("lambda4", w.lambda4)?,
            tau: doc.value("tau", w.tau)?,
        },
        epochs: doc.value("epochs", d.epochs)?,
        batch_size: doc.value("batch_size", d.batch_size)?,
        adam: AdamParams {
            lr: doc.value("learning_rate", d.adam.lr)?,
            beta1: doc.value("adam_beta1", d.adam.beta1)?,
            beta2: doc.value("adam_beta2", d.adam.beta2)?,
            eps: doc.value("adam_eps", d.adam.eps)?,
        },
        seed: doc.value("seed", d.seed)?,
        dtype: parse_dtype(doc)?,
        augmentation: AugmentationConfig {
            crop_lo: doc.value("aug_crop_lo", a.crop_lo)?,
            crop_hi: doc.value("aug_crop_hi", a.crop_hi)?,
            flip_prob: doc.value("aug_flip_prob", a.flip_prob)?,
            pixel_noise_std: doc.value("aug_noise_std", a.pixel_noise_std)?,
            scale_lo: doc.value("aug_scale_lo", a.scale_lo)?,
            scale_hi: doc.value("aug_scale_hi", a.scale_hi)?,
        },
        model: ModelDims {
            input_dim: doc.value("input_dim", m.input_dim)?,
            hidden: doc.list("hidden", m.hidden.clone())?,
            repr_dim: doc.value("repr_dim", m.repr_dim)?,
            proj_hidden: doc.list("proj_hidden", m.proj_hidden.clone())?,
            proj_dim: doc.value("proj_dim", m.proj_dim)?,
            decoder_hidden: doc.list("decoder_hidden", m.decoder_hidden.clone())?,
        },
        objective: parse_objective(doc)?,
        freeze_heads: doc.value("freeze_heads", d.freeze_heads)?,
        metrics_wall_clock: doc.value("metrics_wall_clock", d.metrics_wall_clock)?,
    };
    if cfg.batch_size < 2 {
        return Err(invalid("batch_size", &cfg.batch_size.to_string(), "must be >= 2"));
    }
    Ok(cfg)
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Canonical text of a training configuration; parsing it back with
/// [`parse_train`] gives the same value.
pub fn train_echo(c: &SuperInfoConfig) -> String {
    let lines: Vec<(&str, String)> = vec![
        ("seed", c.seed.to_string()),
        ("epochs", c.epochs.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("learning_rate", c.adam.lr.to_string()),
        ("adam_beta1", c.adam.beta1.to_string()),
        ("adam_beta2", c.adam.beta2.to_string()),
        ("adam_eps", c.adam.eps.to_string()),
        ("lambda1", c.weights.lambda1.to_string()),
        ("lambda2", c.weights.lambda2.to_string()),
        ("lambda3", c.weights.lambda3.to_string()),
        ("lambda4", c.weights.lambda4.to_string()),
        ("tau", c.weights.tau.to_string()),
        ("dtype", c.dtype.name().to_string()),
        ("objective", c.objective.name().to_string()),
        ("freeze_heads", c.freeze_heads.to_string()),
        ("metrics_wall_clock", c.metrics_wall_clock.to_string()),
        ("input_dim", c.model.input_dim.to_string()),
        ("hidden", join(&c.model.hidden)),
        ("repr_dim", c.model.repr_dim.to_string()),
        ("proj_hidden", join(&c.model.proj_hidden)),
        ("proj_dim", c.model.proj_dim.to_string()),
        ("decoder_hidden", join(&c.model.decoder_hidden)),
        ("aug_crop_lo", c.augmentation.crop_lo.to_string()),
        ("aug_crop_hi", c.augmentation.crop_hi.to_string()),
        ("aug_flip_prob", c.augmentation.flip_prob.to_string()),
        ("aug_noise_std", c.augmentation.pixel_noise_std.to_string()),
        ("aug_scale_lo", c.augmentation.scale_lo.to_string()),
        ("aug_scale_hi", c.augmentation.scale_hi.to_string()),
    ];
    lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Reads the data-generation keys of `doc` on top of the defaults.
pub fn parse_data(doc: &KvDoc) -> Result<SyntheticSpec, ConfigError> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_classes: doc.value("n_classes", d.n_classes)?,
        d_shared: doc.value("d_shared", d.d_shared)?,
        d_specific: doc.value("d_specific", d.d_specific)?,
        d_nuisance: doc.value("d_nuisance", d.d_nuisance)?,
        n_samples: doc.value("n_samples", d.n_samples)?,
        mixing_seed: doc.value("mixing_seed", d.mixing_seed)?,
        noise_std: doc.value("noise_std", d.noise_std)?,
        nuisance_scale: doc.value("nuisance_scale", d.nuisance_scale)?,
        jitter_std: doc.value("jitter_std", d.jitter_std)?,
        specific_jitter_std: doc.value("specific_jitter_std", d.specific_jitter_std)?,
        shared_mixing: doc.value("shared_mixing", d.shared_mixing)?,
    };
    Ok(spec)
}

impl RunConfig {
    pub fn known_keys() -> Vec<&'static str> {
        [TRAIN_KEYS, DATA_KEYS, PROBE_KEYS, ABLATION_KEYS].concat()
    }

    pub fn from_doc(doc: &KvDoc) -> Result<Self, ConfigError> {
        doc.reject_unknown(&Self::known_keys())?;
        let d = RunConfig::default();
        let train = parse_train(doc)?;
        let probe = ProbeConfig {
            lr: doc.value("probe_lr", d.probe.lr)?,
            iterations: doc.value("probe_iterations", d.probe.iterations)?,
            tol: doc.value("probe_tol", d.probe.tol)?,
            seed: train.seed,
        };
        Ok(Self {
            data: parse_data(doc)?,
            n_test: doc.value("n_test", d.n_test)?,
            transfer_nuisance_scales: doc.list("transfer_nuisance_scales", d.transfer_nuisance_scales)?,
            transfer_samples: doc.value("transfer_samples", d.transfer_samples)?,
            ablation_seeds: doc.list("ablation_seeds", vec![train.seed])?,
            probe,
            train,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_doc(&KvDoc::parse(text)?)
    }
}
