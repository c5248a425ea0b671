use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Gradients, ModelParams, ModelShape, Workspace};
use super::{GroupSet, RankerError};
use crate::eval;
use crate::features::{DatasetSplit, FeatureBundle};
use crate::task::{Task, NUM_TASKS};

const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub enabled_groups: GroupSet,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    /// Compute eval NE/AUC after every epoch rather than only the last.
    pub eval_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 2,
            batch_size: 256,
            seed: 0,
            enabled_groups: GroupSet::all(),
            embed_dim: 16,
            hidden: vec![64, 32],
            eval_every_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RankerError> {
        let bad = |m: &str| Err(RankerError::InvalidConfig(m.to_string()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }

    /// Shape for this config given table sizes and visual width.
    pub fn shape(&self, visual_dim: usize, rows: [usize; 4]) -> ModelShape {
        ModelShape {
            visual_dim,
            embed_dim: self.embed_dim,
            hidden: self.hidden.clone(),
            user_rows: rows[0],
            item_rows: rows[1],
            item_token_rows: rows[2],
            profile_token_rows: rows[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    /// `None` when the eval labels for this task are single-class.
    pub auc: Option<f64>,
    pub ne: Option<f64>,
}

impl TaskMetrics {
    pub fn compute(labels: &[u8], scores: &[f64], task: Task) -> Self {
        Self {
            task,
            auc: eval::auc(labels, scores).ok(),
            ne: eval::ne(labels, scores).ok(),
        }
    }

    pub fn for_predictions(dataset: &[FeatureBundle], preds: &[[f64; NUM_TASKS]]) -> Vec<Self> {
        Task::ALL
            .iter()
            .map(|&t| {
                let k = t.index();
                let labels: Vec<u8> = dataset.iter().map(|b| b.labels[k]).collect();
                let scores: Vec<f64> = preds.iter().map(|p| p[k]).collect();
                Self::compute(&labels, &scores, t)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Empty when the epoch was not evaluated.
    pub eval: Vec<TaskMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub examples_seen: u64,
    /// Wall-clock seconds spent in optimization. Not serialized so logs stay
    /// byte-stable across runs.
    #[serde(skip)]
    pub train_seconds: f64,
}

impl TrainLog {
    pub fn seconds_per_example(&self) -> f64 {
        if self.examples_seen == 0 {
            0.0
        } else {
            self.train_seconds / self.examples_seen as f64
        }
    }
}

/// Per-coordinate accumulators laid out like the parameters.
struct Adagrad {
    lr: f64,
    tables: [Vec<f64>; 4],
    dense: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adagrad {
    fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            lr,
            tables: params.tables.each_ref().map(|t| vec![0.0; t.weights.len()]),
            dense: params
                .trunk
                .iter()
                .chain(std::iter::once(&params.heads))
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    #[inline]
    fn update(lr: f64, p: &mut [f64], acc: &mut [f64], g: &[f64]) {
        for ((p, a), &g) in p.iter_mut().zip(acc.iter_mut()).zip(g) {
            *a += g * g;
            *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &Gradients) {
        for ((table, acc), g) in params.tables.iter_mut().zip(&mut self.tables).zip(&grads.tables) {
            let dim = table.dim;
            for (id, row) in g.iter() {
                let r = id as usize * dim..(id as usize + 1) * dim;
                Self::update(self.lr, &mut table.weights[r.clone()], &mut acc[r], row);
            }
        }
        let layers = params.trunk.iter_mut().chain(std::iter::once(&mut params.heads));
        let layer_grads = grads.trunk.iter().chain(std::iter::once(&grads.heads));
        for ((layer, (acc_w, acc_b)), g) in layers.zip(&mut self.dense).zip(layer_grads) {
            Self::update(self.lr, &mut layer.weights, acc_w, &g.weights);
            Self::update(self.lr, &mut layer.bias, acc_b, &g.bias);
        }
    }
}

/// Minibatch Adagrad on the summed five-task loss. Fully sequential, so the
/// result is a function of `(split, shape, config)` alone.
pub fn train(split: &DatasetSplit, shape: ModelShape, config: &TrainConfig) -> Result<(ModelParams, TrainLog), RankerError> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(RankerError::EmptyTrainSet);
    }
    let mut params = ModelParams::init(shape, config.enabled_groups, config.seed)?;
    let mut opt = Adagrad::new(&params, config.lr);
    let mut grads = Gradients::new(&params);
    let mut ws = Workspace::new(&params.shape);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut log = TrainLog {
        epochs: Vec::with_capacity(config.epochs),
        examples_seen: 0,
        train_seconds: 0.0,
    };

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let b = &split.train[i];
                let p = match params.forward_ws(b, &mut ws) {
                    Err(RankerError::NonFiniteActivation) => {
                        return Err(RankerError::Diverged { epoch, loss: f64::NAN });
                    }
                    r => r?,
                };
                let l = super::loss(&p, &b.labels);
                if !l.is_finite() {
                    return Err(RankerError::Diverged { epoch, loss: l });
                }
                total += l;
                params.backward_ws(b, &mut ws, scale, &mut grads);
            }
            opt.step(&mut params, &grads);
        }
        log.train_seconds += started.elapsed().as_secs_f64();
        log.examples_seen += order.len() as u64;
        let train_loss = total / order.len() as f64;
        if !train_loss.is_finite() || !params.all_finite() {
            return Err(RankerError::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        let last = epoch + 1 == config.epochs;
        let eval = if !split.eval.is_empty() && (last || config.eval_every_epoch) {
            TaskMetrics::for_predictions(&split.eval, &predict(&split.eval, &params)?)
        } else {
            Vec::new()
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            eval,
        });
    }
    Ok((params, log))
}

/// Order-preserving forward over a dataset.
pub fn predict(dataset: &[FeatureBundle], params: &ModelParams) -> Result<Vec<[f64; NUM_TASKS]>, RankerError> {
    let mut ws = Workspace::new(&params.shape);
    dataset.iter().map(|b| params.forward_ws(b, &mut ws)).collect()
}

/// Same as [`predict`], processed in chunks of `batch_size`.
pub fn predict_batched(
    dataset: &[FeatureBundle],
    params: &ModelParams,
    batch_size: usize,
) -> Result<Vec<[f64; NUM_TASKS]>, RankerError> {
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in dataset.chunks(batch_size.max(1)) {
        out.extend(predict(chunk, params)?);
    }
    Ok(out)
}

/// [`predict`] sharded across the rayon pool. Each example's forward pass is
/// independent, so results are identical to the sequential version.
pub fn predict_parallel(dataset: &[FeatureBundle], params: &ModelParams) -> Result<Vec<[f64; NUM_TASKS]>, RankerError> {
    let chunks: Vec<Vec<[f64; NUM_TASKS]>> = dataset
        .par_chunks(1024)
        .map(|c| predict(c, params))
        .collect::<Result<_, _>>()?;
    Ok(chunks.concat())
}
