//! Experiment configuration, stored as TOML with one table per module.

use std::path::{Path, PathBuf};

use protoadapt_core::episodes::{DatasetLayout, ImageTarget, SplitFractions, TaskShape};
use protoadapt_core::{AdaptationConfig, EncoderConfig, Error, Result};
use protoadapt_tensor::OptimizerKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Omniglot,
    Cifar100,
    Miniimagenet,
}

impl Dataset {
    pub fn layout(self) -> DatasetLayout {
        match self {
            Dataset::Omniglot => DatasetLayout::OmniglotLike,
            Dataset::Cifar100 | Dataset::Miniimagenet => DatasetLayout::CifarLike,
        }
    }

    pub fn target(self) -> ImageTarget {
        match self {
            Dataset::Omniglot => ImageTarget::Omniglot28,
            Dataset::Cifar100 => ImageTarget::Cifar32,
            Dataset::Miniimagenet => ImageTarget::MiniImageNet84,
        }
    }

    /// Omniglot strokes are dark on white; inverting puts ink at high values.
    pub fn invert(self) -> bool {
        self == Dataset::Omniglot
    }

    pub fn base_encoder(self) -> EncoderConfig {
        match self {
            Dataset::Omniglot => EncoderConfig::omniglot(),
            Dataset::Cifar100 => EncoderConfig::cifar(),
            Dataset::Miniimagenet => EncoderConfig::miniimagenet(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Optim {
    Sgd,
    Adam,
}

impl From<Optim> for OptimizerKind {
    fn from(o: Optim) -> Self {
        match o {
            Optim::Sgd => OptimizerKind::Sgd,
            Optim::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub dataset: Dataset,
    pub data_root: PathBuf,
    pub master_seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub hidden_channels: usize,
    pub num_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSection {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    /// Class fractions for meta-train, meta-val and meta-test.
    pub split: [f64; 3],
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: usize,
    pub lr: f64,
    pub optimizer: Optim,
    pub log_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationSection {
    /// `omniglot`, `cifar_1shot`, `cifar_5shot` or `miniimagenet`.
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine_tune_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Optim>,
    pub keep_extra_blocks: bool,
    pub step_grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    /// Split manifest; written on first use and reloaded afterwards.
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub encoder: EncoderSection,
    pub episodes: EpisodeSection,
    pub train: TrainSection,
    pub adaptation: AdaptationSection,
    pub paths: PathsSection,
}

impl ExperimentConfig {
    /// Defaults for `dataset` in 5-way 1-shot.
    pub fn preset(dataset: Dataset) -> Self {
        let (name, split, preset) = match dataset {
            Dataset::Omniglot => ("omniglot", [0.8, 0.0, 0.2], "omniglot"),
            Dataset::Cifar100 => ("cifar100", [0.64, 0.16, 0.2], "cifar_1shot"),
            Dataset::Miniimagenet => ("miniimagenet", [0.8, 0.0, 0.2], "miniimagenet"),
        };
        let runs = PathBuf::from("runs").join(name);
        ExperimentConfig {
            experiment: ExperimentSection {
                dataset,
                data_root: PathBuf::from("data").join(name),
                master_seed: 0,
                workers: 1,
            },
            encoder: EncoderSection {
                hidden_channels: 64,
                num_blocks: 4,
            },
            episodes: EpisodeSection {
                way: 5,
                shot: 1,
                query: 15,
                split,
                eval_episodes: 600,
            },
            train: TrainSection {
                episodes: 60_000,
                lr: 1e-3,
                optimizer: Optim::Adam,
                log_every: 100,
            },
            adaptation: AdaptationSection {
                preset: preset.to_string(),
                fine_tune_lr: None,
                steps: None,
                optimizer: None,
                keep_extra_blocks: false,
                step_grid: vec![0, 5, 10, 15, 20, 50],
            },
            paths: PathsSection {
                checkpoint: runs.join("encoder.ckpt"),
                report: runs.join("report.csv"),
                manifest: runs.join("splits.tsv"),
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.episodes;
        if e.way < 2 || e.shot == 0 || e.query == 0 {
            return Err(Error::Config(format!(
                "need way >= 2 and positive shot and query, got {}-way {}-shot {}-query",
                e.way, e.shot, e.query
            )));
        }
        if self.experiment.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.train.lr.is_finite() && self.train.lr >= 0.0) {
            return Err(Error::Config(format!("meta-train lr {} must be finite and >= 0", self.train.lr)));
        }
        if let Some(lr) = self.adaptation.fine_tune_lr {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("fine_tune_lr {lr} must be finite and >= 0")));
            }
        }
        self.encoder_config().embedding_dim()?;
        self.adaptation_config()?;
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        self.experiment
            .dataset
            .base_encoder()
            .with_hidden_channels(self.encoder.hidden_channels)
            .with_num_blocks(self.encoder.num_blocks)
    }

    pub fn task_shape(&self) -> TaskShape {
        TaskShape::new(self.episodes.way, self.episodes.shot, self.episodes.query)
    }

    pub fn split_fractions(&self) -> SplitFractions {
        let [a, b, c] = self.episodes.split;
        SplitFractions::new(a, b, c)
    }

    /// The named preset with any overrides applied.
    pub fn adaptation_config(&self) -> Result<AdaptationConfig> {
        let a = &self.adaptation;
        let mut cfg = AdaptationConfig::preset(&a.preset, self.episodes.way)?;
        if let Some(lr) = a.fine_tune_lr {
            cfg.fine_tune_lr = lr;
        }
        if let Some(steps) = a.steps {
            cfg.steps = steps;
        }
        if let Some(o) = a.optimizer {
            cfg.optimizer = o.into();
        }
        cfg.keep_extra_blocks = a.keep_extra_blocks;
        Ok(cfg)
    }

    /// Training history lives next to the checkpoint.
    pub fn history_path(&self) -> PathBuf {
        let mut name = self.paths.checkpoint.file_name().unwrap_or_default().to_os_string();
        name.push(".history.csv");
        self.paths.checkpoint.with_file_name(name)
    }
}
