//! Meta-test-time fine-tuning on the support set.
//!
//! For each episode the encoder is copied, given a fresh classification head
//! (and, for some datasets, extra conv blocks), trained for a few full-batch
//! steps on the support cross-entropy, stripped of the head again, and then
//! used to re-embed support and query for prototype classification.

use protoadapt_tensor::{ops, NdArray, Optimizer, OptimizerKind, ParamSet, Tensor, TensorError};

use crate::encoder::{self, AugmentationSpec, EncoderConfig};
use crate::episodes::{Episode, EpisodeSource};
use crate::error::{Error, Result};
use crate::parallel;
use crate::protonet::{self, ClassifiedEpisode};
use crate::seed::{derive_seed, HEAD_STREAM};
use crate::stats::Summary;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationConfig {
    pub spec: AugmentationSpec,
    pub fine_tune_lr: f64,
    pub steps: usize,
    pub optimizer: OptimizerKind,
    /// Embed with the fine-tuned extra blocks instead of discarding them.
    pub keep_extra_blocks: bool,
}

impl AdaptationConfig {
    pub fn omniglot(way: usize) -> Self {
        AdaptationConfig {
            spec: AugmentationSpec::linear_head(way),
            fine_tune_lr: 1e-4,
            steps: 15,
            optimizer: OptimizerKind::Sgd,
            keep_extra_blocks: false,
        }
    }

    pub fn cifar_1shot(way: usize) -> Self {
        AdaptationConfig {
            spec: AugmentationSpec {
                extra_conv_channels: vec![100],
                head_classes: way,
            },
            fine_tune_lr: 1e-4,
            steps: 5,
            optimizer: OptimizerKind::Sgd,
            keep_extra_blocks: false,
        }
    }

    pub fn cifar_5shot(way: usize) -> Self {
        AdaptationConfig {
            spec: AugmentationSpec {
                extra_conv_channels: vec![25],
                head_classes: way,
            },
            steps: 100,
            ..Self::cifar_1shot(way)
        }
    }

    pub fn miniimagenet(way: usize) -> Self {
        AdaptationConfig {
            spec: AugmentationSpec {
                extra_conv_channels: vec![64, 64],
                head_classes: way,
            },
            fine_tune_lr: 1e-7,
            steps: 20,
            optimizer: OptimizerKind::Sgd,
            keep_extra_blocks: false,
        }
    }

    /// Looks up a named preset: `omniglot`, `cifar_1shot`, `cifar_5shot`, `miniimagenet`.
    pub fn preset(name: &str, way: usize) -> Result<Self> {
        match name {
            "omniglot" => Ok(Self::omniglot(way)),
            "cifar_1shot" => Ok(Self::cifar_1shot(way)),
            "cifar_5shot" => Ok(Self::cifar_5shot(way)),
            "miniimagenet" => Ok(Self::miniimagenet(way)),
            other => Err(Error::Config(format!("unknown adaptation preset `{other}`"))),
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.fine_tune_lr = lr;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapted {
    /// Fine-tuned encoder with the head removed.
    pub encoder: ParamSet,
    /// Support loss before each update and after the last; `steps + 1` entries.
    pub trajectory: Vec<f64>,
}

fn check_support(labels: &[usize], config: &AdaptationConfig) -> Result<()> {
    let way = config.spec.head_classes;
    let mut seen = vec![false; way];
    for &l in labels {
        if l >= way {
            return Err(Error::Contract(format!("support label {l} outside 0..{way}")));
        }
        seen[l] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Contract(format!("support set has no example of class {k}")));
    }
    Ok(())
}

fn support_loss(
    enc: &EncoderConfig,
    params: &ParamSet,
    images: &Tensor<f32>,
    labels: &[usize],
    requires_grad: bool,
    step: usize,
) -> Result<(Tensor<f32>, protoadapt_tensor::BoundParams<f32>)> {
    let bound = params.bind(requires_grad);
    let logits = encoder::classify_tensor(enc, &bound, images)?;
    let loss = ops::cross_entropy(&logits, labels).map_err(|e| match e {
        TensorError::NonFinite { op } => Error::NonFiniteLoss {
            stage: "adaptation step",
            index: step,
            detail: format!("non-finite logits entering {op}"),
        },
        other => other.into(),
    })?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            stage: "adaptation step",
            index: step,
            detail: format!("support loss {value}"),
        });
    }
    Ok((loss, bound))
}

/// Runs adaptation once and returns the detached encoder after each step
/// count in `snapshots` (ascending). Running to the largest count and
/// snapshotting on the way is identical to separate runs, since every run
/// starts from the same seeded head and follows the same updates.
pub fn adapt_snapshots(
    enc: &EncoderConfig,
    encoder_params: &ParamSet,
    support_images: &NdArray<f32>,
    support_labels: &[usize],
    config: &AdaptationConfig,
    episode_seed: u64,
    snapshots: &[usize],
) -> Result<Vec<Adapted>> {
    check_support(support_labels, config)?;
    if snapshots.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("step grid must be sorted ascending".into()));
    }
    let head_seed = derive_seed(episode_seed, HEAD_STREAM, 0);
    let mut params = encoder::augment(enc, encoder_params, &config.spec, head_seed)?;
    let mut optimizer = Optimizer::new(config.optimizer, config.fine_tune_lr)?;
    let images = Tensor::constant(support_images.clone());
    let max_steps = snapshots.last().copied().unwrap_or(0);
    let mut trajectory = Vec::with_capacity(max_steps + 1);
    let mut out = Vec::with_capacity(snapshots.len());
    let mut next = 0;
    for step in 0..=max_steps {
        let training = step < max_steps;
        let (loss, bound) = support_loss(enc, &params, &images, support_labels, training, step)?;
        trajectory.push(loss.item() as f64);
        while next < snapshots.len() && snapshots[next] == step {
            let encoder = if step == 0 {
                // No update has happened; hand back the caller's encoder untouched.
                encoder_params.clone()
            } else {
                encoder::detach_head(&params, config.keep_extra_blocks)?
            };
            out.push(Adapted {
                encoder,
                trajectory: trajectory.clone(),
            });
            next += 1;
        }
        if training {
            loss.backward()?;
            params.collect_grads(&bound);
            optimizer.step(&mut params)?;
        }
    }
    Ok(out)
}

/// Fine-tunes a copy of `encoder_params` on the support set and returns the
/// updated encoder with its head detached.
pub fn adapt(
    enc: &EncoderConfig,
    encoder_params: &ParamSet,
    support_images: &NdArray<f32>,
    support_labels: &[usize],
    config: &AdaptationConfig,
    episode_seed: u64,
) -> Result<Adapted> {
    let mut runs = adapt_snapshots(
        enc,
        encoder_params,
        support_images,
        support_labels,
        config,
        episode_seed,
        &[config.steps],
    )?;
    Ok(runs.pop().expect("one snapshot requested"))
}

/// Prototype separation measured on a set of labeled embeddings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    /// Smallest Euclidean distance between two class prototypes.
    pub min_inter: f64,
    /// Mean Euclidean distance of each embedding to its own prototype.
    pub mean_intra: f64,
    /// `min_inter / mean_intra` (infinite when every class is a single point).
    pub ratio: f64,
}

pub fn margin_diagnostics(embeddings: &NdArray<f32>, labels: &[usize]) -> Result<Margins> {
    let way = labels.iter().max().map_or(0, |m| m + 1);
    if way < 2 {
        return Err(Error::Contract("margin diagnostics need at least two classes".into()));
    }
    let dim = embeddings.row_len();
    let mut sums = vec![0.0f64; way * dim];
    let mut counts = vec![0usize; way];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(embeddings.row(i)) {
            *s += v as f64;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Contract(format!("class {k} has no embeddings")));
    }
    for (k, &c) in counts.iter().enumerate() {
        sums[k * dim..(k + 1) * dim].iter_mut().for_each(|s| *s /= c as f64);
    }
    let proto = |k: usize| &sums[k * dim..(k + 1) * dim];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut min_inter = f64::INFINITY;
    for a in 0..way {
        for b in a + 1..way {
            min_inter = min_inter.min(dist(proto(a), proto(b)));
        }
    }
    let mean_intra = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let row: Vec<f64> = embeddings.row(i).iter().map(|&v| v as f64).collect();
            dist(&row, proto(l))
        })
        .sum::<f64>()
        / labels.len() as f64;
    Ok(Margins {
        min_inter,
        mean_intra,
        ratio: min_inter / mean_intra,
    })
}

/// Paired baseline-vs-adapted outcome for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedResult {
    pub episode_seed: u64,
    pub baseline_accuracy: f64,
    pub adapted_accuracy: f64,
    pub trajectory: Vec<f64>,
    pub margins_before: Margins,
    pub margins_after: Margins,
}

impl AdaptedResult {
    pub fn initial_loss(&self) -> f64 {
        self.trajectory[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.trajectory.last().expect("trajectory is never empty")
    }
}

fn outcome(
    episode: &Episode,
    baseline: &ClassifiedEpisode,
    before: Margins,
    adapted: &Adapted,
    enc: &EncoderConfig,
) -> Result<AdaptedResult> {
    let after = protonet::classify_episode(enc, &adapted.encoder, episode)?;
    Ok(AdaptedResult {
        episode_seed: episode.seed(),
        baseline_accuracy: baseline.accuracy,
        adapted_accuracy: after.accuracy,
        trajectory: adapted.trajectory.clone(),
        margins_before: before,
        margins_after: margin_diagnostics(&after.support_embeddings, &episode.support_labels)?,
    })
}

/// Baseline prototype accuracy, then adaptation and re-embedding of both
/// support and query with the fine-tuned encoder. `encoder_params` is not modified.
pub fn adaptive_evaluate(
    enc: &EncoderConfig,
    encoder_params: &ParamSet,
    episode: &Episode,
    config: &AdaptationConfig,
) -> Result<AdaptedResult> {
    let mut rows = adaptive_evaluate_grid(enc, encoder_params, episode, config, &[config.steps])?;
    Ok(rows.pop().expect("one grid point"))
}

/// [`adaptive_evaluate`] at every step count of `grid`, sharing one adaptation run.
pub fn adaptive_evaluate_grid(
    enc: &EncoderConfig,
    encoder_params: &ParamSet,
    episode: &Episode,
    config: &AdaptationConfig,
    grid: &[usize],
) -> Result<Vec<AdaptedResult>> {
    let baseline = protonet::classify_episode(enc, encoder_params, episode)?;
    let before = margin_diagnostics(&baseline.support_embeddings, &episode.support_labels)?;
    let snapshots = adapt_snapshots(
        enc,
        encoder_params,
        &episode.support_images,
        &episode.support_labels,
        config,
        episode.seed(),
        grid,
    )?;
    snapshots
        .iter()
        .map(|adapted| outcome(episode, &baseline, before, adapted, enc))
        .collect()
}

/// Per-episode results for episodes `0..count` of `source`, in episode order.
pub fn evaluate_adapted(
    enc: &EncoderConfig,
    encoder_params: &ParamSet,
    source: &dyn EpisodeSource,
    count: usize,
    config: &AdaptationConfig,
    workers: usize,
) -> Result<Vec<AdaptedResult>> {
    parallel::map_ordered(workers, count, |i| {
        adaptive_evaluate(enc, encoder_params, &source.episode(i)?, config)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub steps: usize,
    pub baseline: Summary,
    pub adapted: Summary,
    pub loss_decreased_fraction: f64,
}

/// Mean adapted accuracy for each step count of `grid`, on the same episodes.
pub fn steps_sweep(
    enc: &EncoderConfig,
    encoder_params: &ParamSet,
    source: &dyn EpisodeSource,
    count: usize,
    config: &AdaptationConfig,
    grid: &[usize],
    workers: usize,
) -> Result<Vec<SweepRow>> {
    if grid.first() != Some(&0) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "step grid must start at 0 and be strictly ascending, got {grid:?}"
        )));
    }
    let per_episode = parallel::map_ordered(workers, count, |i| {
        adaptive_evaluate_grid(enc, encoder_params, &source.episode(i)?, config, grid)
    })?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, &steps)| {
            let rows: Vec<&AdaptedResult> = per_episode.iter().map(|r| &r[g]).collect();
            let base: Vec<f64> = rows.iter().map(|r| r.baseline_accuracy).collect();
            let adapted: Vec<f64> = rows.iter().map(|r| r.adapted_accuracy).collect();
            let decreased = rows.iter().filter(|r| r.final_loss() < r.initial_loss()).count();
            SweepRow {
                steps,
                baseline: Summary::of(&base),
                adapted: Summary::of(&adapted),
                loss_decreased_fraction: if rows.is_empty() { 0.0 } else { decreased as f64 / rows.len() as f64 },
            }
        })
        .collect())
}
