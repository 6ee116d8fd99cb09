//! Prototypical networks with support-set fine-tuning at meta-test time.

pub mod adaptation;
pub mod checkpoint;
pub mod encoder;
pub mod episodes;
pub mod error;
pub mod gradcheck;
pub mod parallel;
pub mod protonet;
pub mod seed;
pub mod stats;
pub mod synthetic;

pub use adaptation::{adapt, adaptive_evaluate, margin_diagnostics, steps_sweep, AdaptationConfig, AdaptedResult, Margins};
pub use checkpoint::Checkpoint;
pub use encoder::{build_encoder, embed, AugmentationSpec, EncoderConfig};
pub use episodes::{Episode, EpisodeSampler, EpisodeSource, Split, TaskShape};
pub use error::{Error, Result};
pub use protonet::{classify_episode, evaluate_baseline, meta_train, MetaTrainOptions, MetaTrainer};
pub use stats::Summary;
