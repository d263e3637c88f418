//! Run configuration: one TOML document describing the dataset, the
//! protocol, the model, the trainer and the methods to compare.

use crate::HarnessError;
use manip_core::augment::{AugmentParams, ContinuousAugment, GumbelConfig, TokenAugment};
use manip_core::data::{
    self, default_blob_means, load_external, Dataset, ExternalFormat, Splits,
};
use manip_core::model::ModelKind;
use manip_core::trainer::{MetaMode, StepOrder, TrainerConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, HarnessError>;

fn invalid(field: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(format!("{field}: {}", msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run identifier; defaults to the config file stem.
    #[serde(default)]
    pub name: Option<String>,
    /// Explicit seed list. Mutually exclusive with `seed_count`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Shorthand for seeds `1..=seed_count`. Default 15.
    #[serde(default)]
    pub seed_count: Option<u64>,
    pub data: DataConfig,
    pub protocol: ProtocolConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub augment: Option<AugmentConfig>,
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Feature dimension for blob data.
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_stddev")]
    pub stddev: f64,
    /// Blob means; defaults to spacing of four standard deviations along
    /// the first axis.
    #[serde(default)]
    pub means: Option<Vec<Vec<f64>>>,
    /// Pool size generated per class before subsampling.
    #[serde(default = "default_pool")]
    pub pool_per_class: usize,
    /// Token-task vocabulary size.
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    /// Token-task sequence length.
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    /// File path for csv/idx sources.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_classes() -> usize {
    2
}
fn default_dim() -> usize {
    2
}
fn default_stddev() -> f64 {
    1.0
}
fn default_pool() -> usize {
    2500
}
fn default_vocab() -> usize {
    32
}
fn default_seq_len() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs,
    Tokens,
    Csv,
    Idx,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolConfig {
    /// Balanced few-shot split: the same counts for every class.
    LowData {
        train_per_class: usize,
        val_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
    },
    /// Binary imbalance: `minority` examples of class 0 vs `majority` of
    /// class 1, balanced validation and test.
    Imbalanced {
        minority: usize,
        #[serde(default = "default_majority")]
        majority: usize,
        #[serde(default = "default_val_imbalanced")]
        val_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
    },
}

fn default_majority() -> usize {
    1000
}
fn default_val_imbalanced() -> usize {
    10
}
fn default_test_per_class() -> usize {
    1000
}

impl ProtocolConfig {
    /// Column label for report tables. The classic imbalance ratios keep
    /// their bare `minority:majority` form; anything else is marked custom.
    pub fn setting_label(&self) -> String {
        match self {
            ProtocolConfig::LowData {
                train_per_class,
                val_per_class,
                ..
            } => format!("{train_per_class}+{val_per_class}"),
            ProtocolConfig::Imbalanced {
                minority, majority, ..
            } => {
                if [20, 50, 100].contains(minority) && *majority == 1000 {
                    format!("{minority}:{majority}")
                } else {
                    format!("custom({minority}:{majority})")
                }
            }
        }
    }

    pub fn test_per_class(&self) -> usize {
        match self {
            ProtocolConfig::LowData { test_per_class, .. }
            | ProtocolConfig::Imbalanced { test_per_class, .. } => *test_per_class,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKindConfig,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindConfig {
    Logistic,
    Mlp,
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self.kind {
            ModelKindConfig::Logistic => ModelKind::Logistic,
            ModelKindConfig::Mlp => ModelKind::Mlp {
                hidden: self.hidden,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    #[serde(default = "default_theta_lr")]
    pub theta_lr: f64,
    #[serde(default = "default_phi_lr")]
    pub phi_lr: f64,
    #[serde(default)]
    pub lookahead_lr: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_phi_steps")]
    pub phi_steps: usize,
    #[serde(default)]
    pub meta_mode: MetaModeConfig,
    #[serde(default = "default_hvp_delta")]
    pub hvp_delta: f64,
    #[serde(default)]
    pub order: OrderConfig,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_divergence_limit")]
    pub divergence_limit: f64,
}

fn default_theta_lr() -> f64 {
    0.1
}
fn default_phi_lr() -> f64 {
    0.1
}
fn default_batch_size() -> usize {
    16
}
fn default_epochs() -> usize {
    5
}
fn default_phi_steps() -> usize {
    1
}
fn default_hvp_delta() -> f64 {
    1e-2
}
fn default_weight_decay() -> f64 {
    0.1
}
fn default_divergence_limit() -> f64 {
    1e6
}

impl Default for TrainerSection {
    fn default() -> Self {
        toml::from_str("").expect("all trainer fields have defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetaModeConfig {
    #[default]
    Analytic,
    HvpFd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderConfig {
    #[default]
    PhiFirst,
    ThetaFirst,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub variant: AugmentVariant,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_anneal")]
    pub anneal: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default = "default_substitutions")]
    pub substitutions: usize,
    #[serde(default = "default_samples_per_original")]
    pub samples_per_original: usize,
    /// Perturbation-net hidden width (continuous variant).
    #[serde(default = "default_aug_hidden")]
    pub hidden: usize,
    /// Perturbation sup-norm bound (continuous variant).
    #[serde(default = "default_bound")]
    pub bound: f64,
    /// Exploration noise scale (continuous variant).
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    /// Augmenter learning rate; falls back to `trainer.phi_lr`.
    #[serde(default)]
    pub phi_lr: Option<f64>,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_anneal() -> f64 {
    0.7
}
fn default_floor() -> f64 {
    0.1
}
fn default_substitutions() -> usize {
    1
}
fn default_samples_per_original() -> usize {
    2
}
fn default_aug_hidden() -> usize {
    8
}
fn default_bound() -> f64 {
    1.0
}
fn default_noise_sigma() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentVariant {
    Continuous,
    Token,
}

/// The comparison methods a run can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain training on the train split, best epoch picked on validation.
    Base,
    /// Plain training on train+validation for a fixed number of epochs set
    /// to the average epoch the `base` method selected.
    BaseMerged,
    /// Learned per-example weighting.
    Weight,
    /// Frozen inverse-class-frequency weighting.
    Proportion,
    /// Weights re-estimated from scratch every step.
    Ren,
    /// Learned augmentation, fine-tuned jointly.
    Augment,
    /// Augmentation without manipulation updates.
    AugmentFrozen,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::BaseMerged => "base_merged",
            Method::Weight => "weight",
            Method::Proportion => "proportion",
            Method::Ren => "ren",
            Method::Augment => "augment",
            Method::AugmentFrozen => "augment_frozen",
        }
    }

    pub fn uses_augmenter(&self) -> bool {
        matches!(self, Method::Augment | Method::AugmentFrozen)
    }

    pub fn uses_weight_table(&self) -> bool {
        matches!(self, Method::Weight | Method::Proportion)
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if config.name.is_none() {
            config.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned());
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str, name: &str) -> Result<Self> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.name.get_or_insert_with(|| name.to_string());
        config.validate()?;
        Ok(config)
    }

    pub fn run_id(&self) -> String {
        self.name.clone().unwrap_or_else(|| "run".into())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match (&self.seeds, self.seed_count) {
            (Some(s), _) => s.clone(),
            (None, Some(n)) => (1..=n).collect(),
            (None, None) => (1..=15).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method is required"));
        }
        if let (Some(_), Some(_)) = (&self.seeds, self.seed_count) {
            return Err(invalid("seeds", "give either `seeds` or `seed_count`, not both"));
        }
        if self.seed_list().is_empty() {
            return Err(invalid("seeds", "the seed list is empty"));
        }
        if self.data.classes < 2 {
            return Err(invalid("data.classes", "need at least two classes"));
        }
        match self.data.source {
            DataSource::Blobs => {
                if self.data.dim == 0 {
                    return Err(invalid("data.dim", "blob dimension must be positive"));
                }
                if let Some(means) = &self.data.means {
                    if means.len() != self.data.classes {
                        return Err(invalid(
                            "data.means",
                            format!("{} means for {} classes", means.len(), self.data.classes),
                        ));
                    }
                }
            }
            DataSource::Tokens => {
                if self.data.classes != 2 {
                    return Err(invalid("data.classes", "the token task is binary"));
                }
                if self.data.vocab < 4 || self.data.seq_len < 2 {
                    return Err(invalid("data", "token task needs vocab >= 4 and seq_len >= 2"));
                }
            }
            DataSource::Csv | DataSource::Idx => {
                if self.data.path.is_none() {
                    return Err(invalid("data.path", "csv/idx sources need a path"));
                }
            }
        }
        match &self.protocol {
            ProtocolConfig::LowData {
                train_per_class,
                val_per_class,
                test_per_class,
            } => {
                if *train_per_class == 0 || *val_per_class == 0 {
                    return Err(invalid("protocol", "train and validation counts must be positive"));
                }
                let need = train_per_class + val_per_class + test_per_class;
                if matches!(self.data.source, DataSource::Blobs | DataSource::Tokens)
                    && need > self.data.pool_per_class
                {
                    return Err(invalid(
                        "data.pool_per_class",
                        format!("protocol needs {need} examples per class, pool has {}", self.data.pool_per_class),
                    ));
                }
            }
            ProtocolConfig::Imbalanced {
                minority,
                majority,
                val_per_class,
                test_per_class,
            } => {
                if self.data.classes != 2 {
                    return Err(invalid("protocol", "the imbalance protocol is binary"));
                }
                if *minority == 0 || *majority == 0 || *val_per_class == 0 {
                    return Err(invalid("protocol", "counts must be positive"));
                }
                let need = majority.max(minority) + val_per_class + test_per_class;
                if matches!(self.data.source, DataSource::Blobs | DataSource::Tokens)
                    && need > self.data.pool_per_class
                {
                    return Err(invalid(
                        "data.pool_per_class",
                        format!("protocol needs {need} examples per class, pool has {}", self.data.pool_per_class),
                    ));
                }
            }
        }
        let needs_augmenter = self.methods.iter().any(Method::uses_augmenter);
        if needs_augmenter {
            let aug = self
                .augment
                .as_ref()
                .ok_or_else(|| invalid("augment", "augment methods need an [augment] section"))?;
            match aug.variant {
                AugmentVariant::Token => {
                    if self.data.source != DataSource::Tokens {
                        return Err(invalid(
                            "augment.variant",
                            "token augmentation needs data.source = \"tokens\"",
                        ));
                    }
                    if aug.substitutions == 0 || aug.substitutions > self.data.seq_len {
                        return Err(invalid(
                            "augment.substitutions",
                            format!("must be in 1..={}", self.data.seq_len),
                        ));
                    }
                }
                AugmentVariant::Continuous => {
                    if self.data.source == DataSource::Tokens {
                        return Err(invalid(
                            "augment.variant",
                            "continuous augmentation needs real-valued features",
                        ));
                    }
                }
            }
            let temp_ok = aug.temperature > 0.0;
            let floor_ok = aug.floor > 0.0;
            if !temp_ok || !floor_ok {
                return Err(invalid("augment", "temperature and floor must be positive"));
            }
        }
        if self.methods.contains(&Method::BaseMerged) && !self.methods.contains(&Method::Base) {
            // base_merged needs the base pass for its step budget; run it
            // implicitly but say so here to keep configs explicit
            return Err(invalid(
                "methods",
                "base_merged needs base in the method list (its epoch budget comes from base)",
            ));
        }
        if self.model.kind == ModelKindConfig::Mlp && self.model.hidden == 0 {
            return Err(invalid("model.hidden", "mlp hidden width must be positive"));
        }
        Ok(())
    }

    /// Generate the source pool and apply the protocol for one seed.
    pub fn build_splits(&self, seed: u64) -> Result<Splits> {
        let pool = self.build_pool(seed)?;
        let splits = match &self.protocol {
            ProtocolConfig::LowData {
                train_per_class,
                val_per_class,
                test_per_class,
            } => data::subsample_low_data(&pool, seed, *train_per_class, *val_per_class, *test_per_class)?,
            ProtocolConfig::Imbalanced {
                minority,
                majority,
                val_per_class,
                test_per_class,
            } => data::subsample_imbalanced(
                &pool,
                seed,
                *minority,
                *majority,
                *val_per_class,
                *test_per_class,
            )?,
        };
        Ok(splits)
    }

    fn build_pool(&self, seed: u64) -> Result<Dataset> {
        let pool = match self.data.source {
            DataSource::Blobs => {
                let means = self.data.means.clone().unwrap_or_else(|| {
                    default_blob_means(self.data.classes, self.data.dim, self.data.stddev)
                });
                data::gen_blobs(
                    seed,
                    &vec![self.data.pool_per_class; self.data.classes],
                    &means,
                    self.data.stddev,
                )?
            }
            DataSource::Tokens => data::gen_token_task(
                seed,
                self.data.vocab,
                self.data.seq_len,
                &[self.data.pool_per_class, self.data.pool_per_class],
            )?,
            DataSource::Csv => {
                let path = self.data.path.as_ref().expect("validated");
                load_external(path, ExternalFormat::Csv)?
            }
            DataSource::Idx => {
                let path = self.data.path.as_ref().expect("validated");
                load_external(path, ExternalFormat::Idx)?
            }
        };
        Ok(pool)
    }

    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            theta_lr: self.trainer.theta_lr,
            phi_lr: self.trainer.phi_lr,
            lookahead_lr: self.trainer.lookahead_lr,
            batch_size: self.trainer.batch_size,
            epochs: self.trainer.epochs,
            phi_steps: self.trainer.phi_steps,
            meta_mode: match self.trainer.meta_mode {
                MetaModeConfig::Analytic => MetaMode::Analytic,
                MetaModeConfig::HvpFd => MetaMode::HvpFd,
            },
            hvp_delta: self.trainer.hvp_delta,
            order: match self.trainer.order {
                OrderConfig::PhiFirst => StepOrder::PhiFirst,
                OrderConfig::ThetaFirst => StepOrder::ThetaFirst,
            },
            weight_decay: self.trainer.weight_decay,
            divergence_limit: self.trainer.divergence_limit,
            seed,
        }
    }

    pub fn gumbel_config(&self) -> GumbelConfig {
        match &self.augment {
            Some(a) => GumbelConfig {
                temperature: a.temperature,
                anneal: a.anneal,
                floor: a.floor,
                substitutions: a.substitutions,
                samples_per_original: a.samples_per_original,
            },
            None => GumbelConfig::default(),
        }
    }

    pub fn build_augmenter(&self, splits: &Splits, seed: u64) -> Result<AugmentParams> {
        let aug = self
            .augment
            .as_ref()
            .ok_or_else(|| invalid("augment", "missing [augment] section"))?;
        match aug.variant {
            AugmentVariant::Token => Ok(AugmentParams::Token(TokenAugment::init(
                self.data.classes,
                self.data.vocab,
            )?)),
            AugmentVariant::Continuous => Ok(AugmentParams::Continuous(ContinuousAugment::init(
                splits.train.model_dim(),
                self.data.classes,
                aug.hidden,
                aug.bound,
                aug.noise_sigma,
                seed,
            )?)),
        }
    }

    /// Augmenter learning rate (override or the trainer-wide value).
    pub fn augment_phi_lr(&self) -> f64 {
        self.augment
            .as_ref()
            .and_then(|a| a.phi_lr)
            .unwrap_or(self.trainer.phi_lr)
    }
}
