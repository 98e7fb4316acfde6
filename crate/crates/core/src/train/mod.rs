//! Mini-batch training with Adam, per-epoch dev evaluation and best-dev
//! snapshots.

mod adam;
mod config;

pub use adam::{check_finite, clip_global_norm, Adam};
pub use config::TrainConfig;

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{Example, Task};
use crate::eval::{exact_match, solution_accuracy, MetricRow};
use crate::model::Graph2Tree;
use crate::params::ParamStore;
use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("non-finite gradient in tensor `{tensor}` at flat index {index}")]
    NonFiniteGradient { tensor: String, index: usize },
    #[error("non-finite loss on example `{0}`")]
    NonFiniteLoss(String),
    #[error("example `{id}`: {source}")]
    Tensor {
        id: String,
        #[source]
        source: TensorError,
    },
    #[error("empty training set")]
    EmptyTrainingSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_exact_match: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    pub dev_exact_match: f64,
    pub epoch: usize,
    pub params: ParamStore,
}

/// Everything needed to continue training: the model, optimizer moments,
/// completed epochs and the best-dev snapshot.
pub struct TrainState {
    pub model: Graph2Tree,
    pub adam: Adam,
    pub epochs_done: usize,
    pub best: Option<BestSnapshot>,
}

/// Shuffling and dropout randomness of one epoch; depends only on the seed
/// and the epoch number so a resumed run replays it exactly.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

impl TrainState {
    pub fn new(model: Graph2Tree) -> Self {
        let adam = Adam::new(model.config.learning_rate, &model.params);
        TrainState {
            model,
            adam,
            epochs_done: 0,
            best: None,
        }
    }

    /// One pass over `train` in a seeded shuffled order. Each batch's
    /// gradients are accumulated in batch order, averaged, clipped and
    /// applied.
    pub fn run_epoch(&mut self, train: &[Example], dev: Option<&[Example]>) -> Result<EpochReport, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        let epoch = self.epochs_done + 1;
        let cfg = &self.model.config;
        let (batch_size, clip, dropout) = (cfg.batch_size, cfg.grad_clip, cfg.dropout);
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for batch in order.chunks(batch_size) {
            let mut grads = self.model.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &train[i];
                let drop_rng = (dropout > 0.0).then_some(&mut rng);
                let loss = self
                    .model
                    .accumulate_grads(ex, drop_rng, &mut grads)
                    .map_err(|source| TrainError::Tensor { id: ex.id.clone(), source })?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss(ex.id.clone()));
                }
                batch_loss += loss;
            }
            let n = batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g /= n);
            check_finite(&self.model.params, &grads)?;
            if clip > 0.0 {
                clip_global_norm(&mut grads, clip);
            }
            self.adam.step(&mut self.model.params, &grads)?;
            total += batch_loss;
        }
        self.epochs_done = epoch;

        let dev_exact_match = match dev {
            Some(d) if !d.is_empty() => Some(exact_match_rate(&self.model, d)?),
            _ => None,
        };
        if let Some(em) = dev_exact_match {
            if self.best.as_ref().map_or(true, |b| em > b.dev_exact_match) {
                self.best = Some(BestSnapshot {
                    dev_exact_match: em,
                    epoch,
                    params: self.model.params.clone(),
                });
            }
        }
        Ok(EpochReport {
            epoch,
            mean_loss: total / train.len() as f64,
            dev_exact_match,
        })
    }

    /// Runs epochs until `epochs_done` reaches the configured count or the
    /// callback breaks.
    pub fn train(
        &mut self,
        train: &[Example],
        dev: Option<&[Example]>,
        mut on_epoch: impl FnMut(&EpochReport, &TrainState) -> ControlFlow<()>,
    ) -> Result<Vec<EpochReport>, TrainError> {
        let mut reports = Vec::new();
        while self.epochs_done < self.model.config.epochs {
            let r = self.run_epoch(train, dev)?;
            let flow = on_epoch(&r, self);
            reports.push(r);
            if flow.is_break() {
                break;
            }
        }
        Ok(reports)
    }

    /// Replaces the current weights by the best-dev snapshot, if any.
    pub fn restore_best(&mut self) {
        if let Some(b) = &self.best {
            self.model.params = b.params.clone();
        }
    }
}

/// Greedy predictions scored against each example's gold tree.
pub fn evaluate(model: &Graph2Tree, examples: &[Example]) -> Result<Vec<MetricRow>, TrainError> {
    examples
        .iter()
        .map(|ex| {
            let pred = model.predict(&ex.graph).map_err(|source| TrainError::Tensor { id: ex.id.clone(), source })?;
            let solution_correct = match model.config.task {
                Task::Sp => None,
                Task::Mwp => Some(ex.answer.is_some_and(|a| solution_accuracy(&pred, &ex.numbers, a))),
            };
            Ok(MetricRow {
                id: ex.id.clone(),
                exact_match: exact_match(&pred, &ex.tree),
                solution_correct,
                prediction: pred.to_string(),
                gold: ex.tree.to_string(),
            })
        })
        .collect()
}

pub fn exact_match_rate(model: &Graph2Tree, examples: &[Example]) -> Result<f64, TrainError> {
    let rows = evaluate(model, examples)?;
    Ok(rows.iter().filter(|r| r.exact_match).count() as f64 / rows.len().max(1) as f64)
}
