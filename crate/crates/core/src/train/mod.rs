//! Training loop, evaluation metrics and the branch ablation.

mod ablate;
mod metrics;
mod optim;

pub use ablate::{ablate, median, AblationReport, AblationRun};
pub use metrics::{auc_roc, ConfusionCounts, MetricsReport};
pub use optim::{Optimizer, OptimizerKind, OptimizerSettings};

use std::fmt::Write as _;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::features::{normalize, ChannelStats, SampleSet};
use crate::model::TgcnnModel;
use crate::nn::Binder;
use crate::ops::{bce_with_logits, sigmoid};
use crate::rng::{derive_seed, SeededRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Samples per forward pass during evaluation.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Zero returns the model untouched.
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Drives the mini-batch shuffle.
    pub seed: u64,
    /// Stop after this many epochs without a new best validation F1.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 16,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("adam_eps", self.adam_eps)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::Config("early_stop_patience must be positive".into()));
        }
        Ok(())
    }

    pub fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch, weighted by batch size.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,train_loss,val_loss,val_f1` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_f1\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_f1);
        }
        s
    }
}

fn numeric(e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::Numeric(m),
        Error::DivisionByZero(g) => Error::Numeric(format!("division below guard {g:e}")),
        other => other,
    }
}

fn check_dims<S: Scalar>(model: &TgcnnModel<S>, s: &SampleSet) -> Result<()> {
    let c = model.config();
    if s.steps() != c.time_steps || s.channels() != c.channels {
        return Err(Error::shape(format!(
            "data is [N, {}, {}] but the model expects [N, {}, {}]",
            s.steps(),
            s.channels(),
            c.time_steps,
            c.channels
        )));
    }
    Ok(())
}

fn batch_tensor<S: Scalar>(s: &SampleSet, indices: &[usize]) -> Result<Tensor<S>> {
    let per = s.steps() * s.channels();
    let mut data = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        data.extend(s.values.data()[i * per..(i + 1) * per].iter().map(|&v| S::lit(v)));
    }
    Tensor::new(vec![indices.len(), s.steps(), s.channels()], data)
}

/// Logits for every sample, computed in chunks.
pub fn predict_logits<S: Scalar>(model: &TgcnnModel<S>, s: &SampleSet) -> Result<Vec<f64>> {
    check_dims(model, s)?;
    let all: Vec<usize> = (0..s.samples()).collect();
    let mut out = Vec::with_capacity(s.samples());
    for chunk in all.chunks(EVAL_CHUNK) {
        let logits = model.forward(&batch_tensor::<S>(s, chunk)?).map_err(numeric)?;
        out.extend(logits.data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

pub fn predict_probabilities<S: Scalar>(model: &TgcnnModel<S>, s: &SampleSet) -> Result<Vec<f64>> {
    Ok(predict_logits(model, s)?.into_iter().map(sigmoid).collect())
}

/// Mean binary cross-entropy of the model over the whole set.
pub fn mean_loss<S: Scalar>(model: &TgcnnModel<S>, s: &SampleSet) -> Result<f64> {
    let logits = Tensor::new(vec![s.samples()], predict_logits(model, s)?)?;
    bce_with_logits(&logits, &s.labels_f64())
}

pub fn evaluate<S: Scalar>(model: &TgcnnModel<S>, s: &SampleSet, threshold: f64) -> Result<MetricsReport> {
    if s.samples() == 0 {
        return Err(Error::invalid("cannot evaluate an empty set"));
    }
    MetricsReport::from_probabilities(&predict_probabilities(model, s)?, &s.labels, threshold)
}

/// One optimisation step on the given samples; returns the batch loss.
fn train_step<S: Scalar>(
    model: &mut TgcnnModel<S>,
    optimizer: &mut Optimizer<S>,
    s: &SampleSet,
    batch: &[usize],
) -> Result<f64> {
    let mut g = Graph::new();
    let input = g.constant(batch_tensor::<S>(s, batch)?);
    let mut binder = Binder::trainable();
    let nodes = model.forward_graph(&mut g, input, &mut binder).map_err(numeric)?;
    let labels: Vec<S> = batch.iter().map(|&i| S::lit(f64::from(s.labels[i]))).collect();
    let loss_node = g.bce_with_logits(nodes.logits, &labels).map_err(numeric)?;
    let loss = g.value(loss_node).item()?.as_f64();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss became {loss}")));
    }
    let grads = g.backward(loss_node).map_err(numeric)?;
    let ordered: Vec<Tensor<S>> = binder
        .ids()
        .iter()
        .map(|id| grads.get(*id).cloned().expect("bound parameters are trainable leaves"))
        .collect();
    optimizer.apply(model, &ordered).map_err(numeric)?;
    Ok(loss)
}

/// Mini-batch training with a seeded shuffle and per-epoch validation.
///
/// The shuffle stream is derived from `cfg.seed`, so equal inputs give bit-identical
/// models and histories. With early stopping the parameters of the last epoch run are
/// kept, not those of the best epoch.
pub fn train<S: Scalar>(
    model: &mut TgcnnModel<S>,
    train_set: &SampleSet,
    val_set: &SampleSet,
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    check_dims(model, train_set)?;
    check_dims(model, val_set)?;
    let mut history = TrainingHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    let mut optimizer = Optimizer::new(cfg.optimizer_settings());
    let mut rng = SeededRng::new(derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..train_set.samples()).collect();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            total += train_step(model, &mut optimizer, train_set, batch)? * batch.len() as f64;
        }
        let report = evaluate(model, val_set, 0.5)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / train_set.samples() as f64,
            val_loss: mean_loss(model, val_set)?,
            val_f1: report.f1,
        };
        history.epochs.push(record);
        if record.val_f1 > best_f1 {
            best_f1 = record.val_f1;
            stale = 0;
        } else {
            stale += 1;
        }
        if cfg.early_stop_patience.is_some_and(|p| stale >= p) {
            break;
        }
    }
    Ok(history)
}

/// Splits off the first `fraction` of `set` for training and z-scores both parts with
/// the training statistics.
pub fn split_and_normalize(set: &SampleSet, fraction: f64) -> Result<(SampleSet, SampleSet, ChannelStats)> {
    let (train_raw, test_raw) = set.split(fraction)?;
    let (train_set, stats) = normalize(&train_raw, None)?;
    let (test_set, _) = normalize(&test_raw, Some(&stats))?;
    Ok((train_set, test_set, stats))
}
