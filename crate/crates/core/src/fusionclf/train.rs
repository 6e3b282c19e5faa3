use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::diffnet::{rng_from_seed, xent_batch, Mode, Sgd, StepSchedule, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: StepSchedule,
    /// Pretrain on all subjects' training windows before fine-tuning.
    pub pretrain: bool,
    pub seed: u64,
}

impl Default for ClfTrainConfig {
    fn default() -> Self {
        ClfTrainConfig {
            batch_size: 64,
            epochs: 28,
            schedule: StepSchedule::default(),
            pretrain: true,
            seed: 0,
        }
    }
}

impl ClfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(self.schedule.initial > 0.0 && self.schedule.divisor > 0.0) {
            return Err(Error::Config("learning rate and divisor must be positive".into()));
        }
        if self.epochs > 0 && self.schedule.decay_epochs.iter().any(|&e| e >= self.epochs) {
            return Err(Error::Config(format!(
                "decay epochs {:?} must precede the last of {} epochs",
                self.schedule.decay_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// Aligned per-stream windows with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindows<T> {
    /// One `(n, 1, k, c)` tensor per stream.
    pub inputs: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabeledWindows<T> {
    pub fn new(inputs: Vec<Tensor<T>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Shape("no input streams".into()));
        }
        for x in &inputs {
            if x.rank() != 4 || x.batch() != labels.len() {
                return Err(Error::Shape(format!(
                    "stream tensor {:?} does not hold {} windows",
                    x.shape(),
                    labels.len()
                )));
            }
        }
        Ok(LabeledWindows { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        LabeledWindows {
            inputs: self.inputs.iter().map(|x| x.select(idx)).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Stacks several sets with the same stream layout.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InsufficientData("nothing to concatenate".into()))?;
        let streams = first.inputs.len();
        let mut inputs = Vec::with_capacity(streams);
        for s in 0..streams {
            let shape = first.inputs[s].shape()[1..].to_vec();
            let mut samples = Vec::new();
            for p in parts {
                let x = p
                    .inputs
                    .get(s)
                    .filter(|x| x.shape()[1..] == shape[..])
                    .ok_or_else(|| Error::Shape("window sets disagree on stream layout".into()))?;
                samples.extend((0..x.batch()).map(|i| x.sample(i)));
            }
            inputs.push(Tensor::stack(&samples, &shape)?);
        }
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Self::new(inputs, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfEpoch {
    pub loss: f64,
    pub accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClfHistory {
    pub epochs: Vec<ClfEpoch>,
}

impl ClfHistory {
    pub fn learning_rates(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.learning_rate).collect()
    }
}

/// Mini-batch SGD on cross-entropy with the step schedule of `cfg`.
pub fn train_classifier<T: Scalar>(model: &mut Classifier<T>, data: &LabeledWindows<T>, cfg: &ClfTrainConfig) -> Result<ClfHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= model.classes()) {
        return Err(Error::Label {
            label: bad,
            classes: model.classes(),
        });
    }
    if data.len() < 2 {
        return Err(Error::InsufficientData("batch statistics need at least two windows".into()));
    }
    let sgd = Sgd::new(cfg.schedule.clone());
    let mut rng = rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = ClfHistory::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = data.select(chunk);
            let refs: Vec<&Tensor<T>> = batch.inputs.iter().collect();
            model.zero_grad();
            let probs = model.forward(&refs, Mode::Train, &mut rng)?;
            let (loss, grad) = xent_batch(&probs, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("classifier loss {loss}"),
                });
            }
            model.backward(&grad)?;
            for ps in model.param_sets_mut() {
                sgd.step(ps, epoch);
            }
            loss_sum += loss * chunk.len() as f64;
            correct += argmax_rows(&probs, model.classes())
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
            seen += chunk.len();
        }
        let seen = seen.max(1) as f64;
        history.epochs.push(ClfEpoch {
            loss: loss_sum / seen,
            accuracy: correct as f64 / seen,
            learning_rate: cfg.schedule.learning_rate(epoch),
        });
    }
    Ok(history)
}

/// Runs the full schedule on `all_train`, then again on `subject_train`.
/// Without the pretrain flag only the second stage runs.
pub fn pretrain_then_finetune<T: Scalar>(
    model: &mut Classifier<T>,
    all_train: &LabeledWindows<T>,
    subject_train: &LabeledWindows<T>,
    cfg: &ClfTrainConfig,
) -> Result<(Option<ClfHistory>, ClfHistory)> {
    let pre = if cfg.pretrain {
        Some(train_classifier(model, all_train, cfg)?)
    } else {
        None
    };
    Ok((pre, train_classifier(model, subject_train, cfg)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub classes: Vec<usize>,
    /// `(n, classes)` softmax outputs.
    pub scores: Tensor<T>,
}

impl<T: Scalar> Prediction<T> {
    pub fn from_scores(scores: Tensor<T>) -> Result<Self> {
        if scores.rank() != 2 {
            return Err(Error::Shape(format!("scores must be n x classes, got {:?}", scores.shape())));
        }
        let classes = argmax_rows(&scores, scores.shape()[1]);
        Ok(Prediction { classes, scores })
    }

    pub fn max_prob(&self, i: usize) -> f64 {
        self.scores.sample(i)[self.classes[i]].to_f64_lossy()
    }
}

/// Row-wise argmax; the first maximum wins.
fn argmax_rows<T: Scalar>(scores: &Tensor<T>, width: usize) -> Vec<usize> {
    scores
        .values()
        .chunks(width)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

const PREDICT_CHUNK: usize = 256;

/// Eval-mode class predictions.
pub fn predict<T: Scalar>(model: &Classifier<T>, inputs: &[&Tensor<T>]) -> Result<Prediction<T>> {
    let n = inputs.first().map(|x| x.batch()).unwrap_or(0);
    let classes = model.classes();
    let mut values = Vec::with_capacity(n * classes);
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(n)).collect();
        let part: Vec<Tensor<T>> = inputs.iter().map(|x| x.select(&idx)).collect();
        let refs: Vec<&Tensor<T>> = part.iter().collect();
        values.extend(model.infer(&refs)?.into_values());
        start += PREDICT_CHUNK;
    }
    Prediction::from_scores(Tensor::from_vec(vec![n, classes], values)?)
}

/// Most frequent prediction per group; ties go to the lower class index.
pub fn majority_vote(classes: &[usize], groups: &[usize]) -> BTreeMap<usize, usize> {
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &g) in classes.iter().zip(groups) {
        *counts.entry(g).or_default().entry(c).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(g, cs)| {
            let best = cs.iter().fold((usize::MAX, 0), |(bc, bn), (&c, &n)| if n > bn { (c, n) } else { (bc, bn) });
            (g, best.0)
        })
        .collect()
}
