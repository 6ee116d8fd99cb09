//! Prototype classification and episodic meta-training.

use std::time::Instant;

use protoadapt_tensor::{ops, Element, NdArray, Optimizer, OptimizerKind, ParamSet, Tensor, TensorError};

use crate::encoder::{self, EncoderConfig};
use crate::episodes::{Episode, EpisodeSource};
use crate::error::{Error, Result};
use crate::parallel;
use crate::stats::Summary;

/// Class centroids, row `k` for label `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub matrix: NdArray<f32>,
}

impl Prototypes {
    pub fn way(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// Differentiable per-class mean of support embeddings.
pub fn compute_prototypes<T: Element>(embeddings: &Tensor<T>, labels: &[usize], way: usize) -> Result<Tensor<T>> {
    ops::class_mean(embeddings, labels, way).map_err(|e| match e {
        TensorError::Contract(msg) => Error::Contract(msg),
        other => other.into(),
    })
}

pub fn prototypes(embeddings: &NdArray<f32>, labels: &[usize], way: usize) -> Result<Prototypes> {
    let t = compute_prototypes(&Tensor::constant(embeddings.clone()), labels, way)?;
    Ok(Prototypes {
        matrix: t.value().clone(),
    })
}

/// Logits `-||x_q - r_k||^2`; their row softmax is the class posterior.
pub fn distance_logits<T: Element>(queries: &Tensor<T>, prototypes: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(ops::neg_sq_dist(queries, prototypes)?)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy<T: Element>(logits: &[T], way: usize, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = ops::argmax_rows(logits, way)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}

/// Mean query NLL under the distance softmax, and query accuracy.
pub fn episode_loss<T: Element>(queries: &Tensor<T>, labels: &[usize], prototypes: &Tensor<T>) -> Result<(Tensor<T>, f64)> {
    let logits = distance_logits(queries, prototypes)?;
    let way = prototypes.shape()[0];
    let loss = ops::cross_entropy(&logits, labels)?;
    Ok((loss, accuracy(logits.data(), way, labels)))
}

/// Hard nearest-prototype classification of the query set.
pub fn classify_episode(config: &EncoderConfig, params: &ParamSet, episode: &Episode) -> Result<ClassifiedEpisode> {
    let support = encoder::embed(config, params, &episode.support_images)?;
    let query = encoder::embed(config, params, &episode.query_images)?;
    let protos = prototypes(&support, &episode.support_labels, episode.way())?;
    let logits = ops::neg_sq_dist(&Tensor::constant(query.clone()), &Tensor::constant(protos.matrix.clone()))?;
    Ok(ClassifiedEpisode {
        accuracy: accuracy(logits.data(), episode.way(), &episode.query_labels),
        support_embeddings: support,
        query_embeddings: query,
        prototypes: protos,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifiedEpisode {
    pub accuracy: f64,
    pub support_embeddings: NdArray<f32>,
    pub query_embeddings: NdArray<f32>,
    pub prototypes: Prototypes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub episode: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaTrainOptions {
    pub episodes: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Progress callback interval in episodes; 0 disables it.
    pub log_every: usize,
}

impl Default for MetaTrainOptions {
    fn default() -> Self {
        MetaTrainOptions {
            episodes: 0,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            log_every: 0,
        }
    }
}

/// Encoder weights plus optimizer state, resumable across runs.
#[derive(Debug, Clone)]
pub struct MetaTrainer {
    pub config: EncoderConfig,
    pub params: ParamSet,
    pub optimizer: Optimizer<f32>,
    pub episodes_done: usize,
}

impl MetaTrainer {
    pub fn new(config: EncoderConfig, params: ParamSet, kind: OptimizerKind, lr: f64) -> Result<Self> {
        encoder::validate_params(&config, &params)?;
        Ok(MetaTrainer {
            config,
            params,
            optimizer: Optimizer::new(kind, lr)?,
            episodes_done: 0,
        })
    }

    /// One episode: embed support and query, build prototypes, take the
    /// query NLL, back-propagate and apply the optimizer.
    pub fn train_episode(&mut self, episode: &Episode) -> Result<TrainRecord> {
        let started = Instant::now();
        let index = self.episodes_done;
        let bound = self.params.bind(true);
        let support = encoder::embed_tensor(&self.config, &bound, &Tensor::constant(episode.support_images.clone()))?;
        let query = encoder::embed_tensor(&self.config, &bound, &Tensor::constant(episode.query_images.clone()))?;
        let protos = compute_prototypes(&support, &episode.support_labels, episode.way())?;
        let (loss, acc) = episode_loss(&query, &episode.query_labels, &protos).map_err(|e| match e {
            Error::Tensor(TensorError::NonFinite { op }) => Error::NonFiniteLoss {
                stage: "meta-train episode",
                index,
                detail: format!("non-finite values entering {op}"),
            },
            other => other,
        })?;
        let loss_value = loss.item() as f64;
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "meta-train episode",
                index,
                detail: format!("loss {loss_value}, query accuracy {acc}"),
            });
        }
        loss.backward()?;
        self.params.collect_grads(&bound);
        self.optimizer.step(&mut self.params)?;
        self.episodes_done += 1;
        Ok(TrainRecord {
            episode: index,
            loss: loss_value,
            accuracy: acc,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Trains on episodes `episodes_done .. episodes_done + count` of `source`.
    pub fn run(
        &mut self,
        source: &dyn EpisodeSource,
        count: usize,
        log_every: usize,
        mut progress: impl FnMut(&TrainRecord),
    ) -> Result<Vec<TrainRecord>> {
        let mut history = Vec::with_capacity(count);
        for _ in 0..count {
            let episode = source.episode(self.episodes_done)?;
            let record = self.train_episode(&episode)?;
            if log_every > 0 && (record.episode + 1) % log_every == 0 {
                progress(&record);
            }
            history.push(record);
        }
        Ok(history)
    }
}

pub fn meta_train(
    config: &EncoderConfig,
    encoder: &ParamSet,
    source: &dyn EpisodeSource,
    opts: &MetaTrainOptions,
) -> Result<(ParamSet, Vec<TrainRecord>)> {
    let mut trainer = MetaTrainer::new(*config, encoder.clone(), opts.optimizer, opts.lr)?;
    let history = trainer.run(source, opts.episodes, 0, |_| {})?;
    Ok((trainer.params, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub accuracies: Vec<f64>,
    pub summary: Summary,
}

/// Prototype accuracy on episodes `0..count` of `source`, without touching `encoder`.
pub fn evaluate_baseline(
    config: &EncoderConfig,
    encoder: &ParamSet,
    source: &dyn EpisodeSource,
    count: usize,
    workers: usize,
) -> Result<BaselineReport> {
    let accuracies = parallel::map_ordered(workers, count, |i| {
        let episode = source.episode(i)?;
        Ok(classify_episode(config, encoder, &episode)?.accuracy)
    })?;
    Ok(BaselineReport {
        summary: Summary::of(&accuracies),
        accuracies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data, false).unwrap()
    }

    #[test]
    fn two_prototype_softmax() {
        // Distances squared 1 and 4.
        let q = t(&[1, 1], vec![0.0]);
        let p = t(&[2, 1], vec![1.0, 2.0]);
        let probs = ops::softmax(&distance_logits(&q, &p).unwrap()).unwrap();
        assert!((probs.data()[0] - 0.95257).abs() < 1e-5);
        assert!((probs.data()[1] - 0.04743).abs() < 1e-5);
    }

    #[test]
    fn equidistant_query_is_uniform() {
        let q = t(&[1, 2], vec![0.0, 0.0]);
        let p = t(&[4, 2], vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let probs = ops::softmax(&distance_logits(&q, &p).unwrap()).unwrap();
        assert!(probs.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn query_on_prototype_is_row_max() {
        let q = t(&[1, 2], vec![3.0, -1.0]);
        let p = t(&[3, 2], vec![0.0, 0.0, 3.0, -1.0, 5.0, 5.0]);
        let l = distance_logits(&q, &p).unwrap();
        assert_eq!(l.data()[1], 0.0);
        assert_eq!(ops::argmax_rows(l.data(), 3), vec![1]);
    }

    #[test]
    fn identical_prototypes_give_ln_k_and_index_zero() {
        let q = t(&[4, 2], vec![0.3, 0.1, -2.0, 0.5, 1.0, 1.0, 0.0, 0.0]);
        let p = t(&[3, 2], vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let labels = [0, 1, 2, 0];
        let (loss, acc) = episode_loss(&q, &labels, &p).unwrap();
        assert!((loss.item() - 3f64.ln()).abs() < 1e-12);
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn queries_on_their_prototypes_are_perfect() {
        let p = t(&[2, 2], vec![0.0, 0.0, 100.0, 0.0]);
        let q = t(&[2, 2], vec![100.0, 0.0, 0.0, 0.0]);
        let (loss, acc) = episode_loss(&q, &[1, 0], &p).unwrap();
        assert_eq!(acc, 1.0);
        assert!(loss.item() < 1e-12);
    }

    #[test]
    fn out_of_range_query_label() {
        let p = t(&[2, 1], vec![0.0, 1.0]);
        let q = t(&[1, 1], vec![0.0]);
        assert!(matches!(
            episode_loss(&q, &[2], &p),
            Err(Error::Tensor(TensorError::Label { label: 2, classes: 2 }))
        ));
    }

    #[test]
    fn empty_class_prototype_is_contract_error() {
        let e = NdArray::<f32>::zeros(&[2, 3]);
        assert!(matches!(prototypes(&e, &[0, 0], 2), Err(Error::Contract(_))));
    }
}
