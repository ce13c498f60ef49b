use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint;
use super::data::Dataset;
use super::loss::{cross_entropy, topk_hits};
use super::optim::Sgd;
use super::schedule::{Decay, LrSchedule};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::ops::Mode;
use crate::tensor::Element;

fn default_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    4e-5
}
fn default_batch_size() -> usize {
    32
}
fn default_epochs() -> usize {
    30
}

/// Optimization hyperparameters. The run seed is not part of the file
/// section; it is filled in from the top-level configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub schedule: Decay,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Random horizontal flips of training images.
    #[serde(default)]
    pub flip: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            schedule: Decay::default(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            flip: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.lr,
            decay: self.schedule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr_schedule().validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("train.momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(format!("train.weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Top-1 accuracy of the training-mode predictions made during the epoch.
    pub train_top1: f64,
    /// Inference-mode loss on the evaluation set after the epoch.
    pub loss: f64,
    /// Inference-mode accuracy on the evaluation set after the epoch.
    pub top1: f64,
    /// `None` when the task has fewer than five classes.
    pub top5: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub top1: f64,
    pub top5: Option<f64>,
}

/// Files written while training.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOutputs<'a> {
    /// Rewritten after every epoch.
    pub checkpoint: Option<&'a Path>,
    /// JSON lines, one per epoch.
    pub history: Option<&'a Path>,
}

fn check_dataset<T: Element>(graph: &ModelGraph<T>, ds: &Dataset) -> Result<()> {
    if ds.classes() != graph.num_classes() {
        return Err(Error::config(format!(
            "dataset has {} classes, model head has {}",
            ds.classes(),
            graph.num_classes()
        )));
    }
    if ds.image_shape().0 != graph.input_channels() {
        return Err(Error::config(format!(
            "dataset images have {} channels, model expects {}",
            ds.image_shape().0,
            graph.input_channels()
        )));
    }
    if ds.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    Ok(())
}

/// Inference-mode loss and accuracy over a whole dataset, in sample order.
pub fn evaluate<T: Element>(graph: &ModelGraph<T>, ds: &Dataset, batch_size: usize) -> Result<EvalMetrics> {
    check_dataset(graph, ds)?;
    let order: Vec<usize> = (0..ds.len()).collect();
    let (mut loss, mut top1, mut top5) = (0.0, 0usize, 0usize);
    let with_top5 = ds.classes() >= 5;
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, y) = ds.batch::<T>(chunk, None);
        let logits = graph.infer(&x)?;
        loss += cross_entropy(&logits, &y)?.0 * chunk.len() as f64;
        top1 += topk_hits(&logits, &y, 1)?;
        if with_top5 {
            top5 += topk_hits(&logits, &y, 5)?;
        }
    }
    let n = ds.len() as f64;
    Ok(EvalMetrics {
        loss: loss / n,
        top1: top1 as f64 / n,
        top5: with_top5.then(|| top5 as f64 / n),
    })
}

/// SGD training. Sample order is reshuffled every epoch from a generator
/// seeded with `cfg.seed`, so a fixed seed reproduces the run bit for bit.
pub fn train_loop<T: Element>(
    graph: &mut ModelGraph<T>,
    train: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    outputs: TrainOutputs<'_>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    check_dataset(graph, train)?;
    if let Some(e) = eval {
        check_dataset(graph, e)?;
    }
    let mut history_file = match outputs.history {
        Some(p) => Some(fs::File::create(p)?),
        None => None,
    };
    let schedule = cfg.lr_schedule();
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let flips: Option<Vec<bool>> = cfg.flip.then(|| chunk.iter().map(|_| rng.random()).collect());
            let (x, y) = train.batch::<T>(chunk, flips.as_deref());
            graph.zero_grad();
            let logits = graph.forward(&x, Mode::Train)?;
            let (loss, grad) = cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::State(format!("loss diverged to {loss} in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            hits += topk_hits(&logits, &y, 1)?;
            graph.backward(&grad)?;
            sgd.step(graph, lr)?;
        }
        let metrics = evaluate(graph, eval.unwrap_or(train), cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_top1: hits as f64 / train.len() as f64,
            loss: metrics.loss,
            top1: metrics.top1,
            top5: metrics.top5,
        };
        if let Some(f) = history_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
        }
        if let Some(p) = outputs.checkpoint {
            checkpoint::save(graph, p)?;
        }
        history.push(record);
    }
    Ok(history)
}

/// Mean of each window of `width` consecutive values.
pub fn moving_average(values: &[f64], width: usize) -> Vec<f64> {
    if width == 0 {
        return Vec::new();
    }
    values
        .windows(width)
        .map(|w| w.iter().sum::<f64>() / width as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), [1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }

    #[test]
    fn config_defaults() {
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.lr_schedule().lr_at(30), 0.01);
        let bad: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"lr": 0.1, "bogus": 1}"#);
        assert!(bad.is_err());
        let exp: TrainConfig = serde_json::from_str(r#"{"lr": 0.045, "schedule": {"kind": "exp", "factor": 0.98}}"#).unwrap();
        assert_eq!(exp.lr_schedule().lr_at(1), 0.0441);
    }
}
