//! Training loop: Adam over shuffled slice batches, validation after every
//! epoch, learning-rate reduction on plateau, early stopping with
//! best-weight restore, and a persistent epoch history.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use brainseg_core::adam::Adam;
use brainseg_core::dataset::{sequential_batches, SliceBatcher, SliceSample};
use brainseg_core::loss::{categorical_dice_loss_node, combined_loss_node, CE_CLAMP, DICE_EPS};
use brainseg_core::math::Element;
use brainseg_core::metrics::{EvalAccumulator, MetricsReport};
use brainseg_core::model::AttentionUNet;
use brainseg_core::{Graph, Tensor};

use crate::error::{Error, Result};

/// Validation loss must drop by at least this much (absolute) to count as an
/// improvement for both the plateau and early-stop monitors.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy plus `1 - global soft Dice`.
    Combined,
    /// `1 - mean per-class soft Dice`.
    CategoricalDice,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub loss: LossKind,
    pub early_stop_patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    /// Seeds the batch shuffler.
    pub seed: u64,
    /// When false the history's seconds column is written as zero, keeping
    /// repeated runs byte-identical.
    pub record_wall_time: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::validation(format!(
                "plateau_factor {} must lie strictly between 0 and 1",
                self.plateau_factor
            )));
        }
        if self.early_stop_patience < 1 || self.plateau_patience < 1 {
            return Err(Error::validation("callback patiences must be at least 1"));
        }
        if !(self.min_lr > 0.0) || !(self.learning_rate > self.min_lr) {
            return Err(Error::validation(format!(
                "need learning_rate > min_lr > 0, got {} and {}",
                self.learning_rate, self.min_lr
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if self.max_epochs < 1 {
            return Err(Error::validation("max_epochs must be at least 1"));
        }
        Ok(())
    }
}

fn is_improvement(best: f64, loss: f64) -> bool {
    loss < best - IMPROVEMENT_THRESHOLD
}

/// Learning-rate schedule: after `patience` consecutive epochs without
/// improvement, multiply the rate by `factor` (floored at `min_lr`) and
/// restart the count.
#[derive(Debug, Clone)]
pub struct PlateauState {
    best_loss: f64,
    stale_epochs: usize,
}

impl PlateauState {
    pub fn new() -> Self {
        PlateauState { best_loss: f64::INFINITY, stale_epochs: 0 }
    }

    /// Feeds one epoch's validation loss; returns the rate for the next
    /// epoch.
    pub fn update(
        &mut self,
        val_loss: f64,
        lr: f64,
        factor: f64,
        patience: usize,
        min_lr: f64,
    ) -> f64 {
        if is_improvement(self.best_loss, val_loss) {
            self.best_loss = val_loss;
            self.stale_epochs = 0;
            return lr;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= patience {
            self.stale_epochs = 0;
            return (lr * factor).max(min_lr);
        }
        lr
    }
}

impl Default for PlateauState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Early-stopping monitor: snapshots the weights on every improvement and
/// requests a stop after `patience` consecutive epochs without one.
#[derive(Debug, Clone)]
pub struct EarlyStopState {
    best_loss: f64,
    stale_epochs: usize,
    best_params: Option<BTreeMap<String, Tensor<f32>>>,
}

impl EarlyStopState {
    pub fn new() -> Self {
        EarlyStopState { best_loss: f64::INFINITY, stale_epochs: 0, best_params: None }
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    /// The parameter snapshot from the best epoch so far.
    pub fn best_params(&self) -> Option<&BTreeMap<String, Tensor<f32>>> {
        self.best_params.as_ref()
    }

    pub fn update(
        &mut self,
        val_loss: f64,
        params: &BTreeMap<String, Tensor<f32>>,
        patience: usize,
    ) -> Decision {
        if is_improvement(self.best_loss, val_loss) {
            self.best_loss = val_loss;
            self.stale_epochs = 0;
            self.best_params = Some(params.clone());
            return Decision::Continue;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_dice: f64,
    pub val_dice: f64,
    /// Rate in effect during this epoch's updates.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

/// Epoch-level loss and Dice accumulated over whole-epoch sums, so the
/// reported numbers do not depend on how the epoch was batched.
struct LossAccum {
    num_classes: usize,
    ce_sum: f64,
    pixels: u64,
    class_inter: Vec<f64>,
    class_true: Vec<f64>,
    class_pred: Vec<f64>,
}

impl LossAccum {
    fn new(num_classes: usize) -> Self {
        LossAccum {
            num_classes,
            ce_sum: 0.0,
            pixels: 0,
            class_inter: vec![0.0; num_classes],
            class_true: vec![0.0; num_classes],
            class_pred: vec![0.0; num_classes],
        }
    }

    fn push(&mut self, y_true: &Tensor<f32>, y_pred: &Tensor<f32>) -> Result<()> {
        let (n, c, h, w) = y_true.dims4("loss_accum").map_err(Error::Core)?;
        if c != self.num_classes {
            return Err(Error::validation(format!(
                "batch has {c} classes, accumulator expects {}",
                self.num_classes
            )));
        }
        let hw = h * w;
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for p in 0..hw {
                    let t = y_true.data()[base + p].to_f64();
                    let q = y_pred.data()[base + p].to_f64();
                    self.class_inter[ci] += t * q;
                    self.class_true[ci] += t;
                    self.class_pred[ci] += q;
                    self.ce_sum -= t * (q + CE_CLAMP).ln();
                }
            }
        }
        self.pixels += (n * hw) as u64;
        Ok(())
    }

    /// Global soft Dice over everything pushed.
    fn dice(&self) -> f64 {
        let inter: f64 = self.class_inter.iter().sum();
        let t: f64 = self.class_true.iter().sum();
        let p: f64 = self.class_pred.iter().sum();
        (2.0 * inter + DICE_EPS) / (t + p + DICE_EPS)
    }

    fn loss(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Combined => {
                let ce = if self.pixels == 0 { 0.0 } else { self.ce_sum / self.pixels as f64 };
                ce + (1.0 - self.dice())
            }
            LossKind::CategoricalDice => {
                let mut mean = 0.0;
                for ci in 0..self.num_classes {
                    mean += (2.0 * self.class_inter[ci] + DICE_EPS)
                        / (self.class_true[ci] + self.class_pred[ci] + DICE_EPS);
                }
                1.0 - mean / self.num_classes as f64
            }
        }
    }
}

fn validation_scores(
    model: &AttentionUNet<f32>,
    samples: &[SliceSample],
    batch_size: usize,
    kind: LossKind,
) -> Result<(f64, f64)> {
    let mut accum = LossAccum::new(model.config().num_classes);
    for (images, masks) in sequential_batches(samples, batch_size).map_err(Error::Core)? {
        let probs = model.forward(&images).map_err(Error::Core)?;
        accum.push(&masks, &probs)?;
    }
    Ok((accum.loss(kind), accum.dice()))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: AttentionUNet<f32>,
    pub history: History,
    pub stopped_early: bool,
}

/// Runs the full loop; `on_epoch` fires after every epoch and `on_best`
/// after every validation-loss improvement (with the improving model).
pub fn train(
    model: AttentionUNet<f32>,
    train_samples: Vec<SliceSample>,
    val_samples: &[SliceSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
    mut on_best: impl FnMut(&AttentionUNet<f32>) -> Result<()>,
) -> Result<TrainOutput> {
    config.validate()?;
    if val_samples.is_empty() {
        return Err(Error::validation("validation split has no slices"));
    }
    let num_classes = model.config().num_classes;
    let mut model = model;
    let mut batcher =
        SliceBatcher::new(train_samples, config.batch_size, config.seed).map_err(Error::Core)?;
    let mut adam: Adam<f32> = Adam::new(config.learning_rate);
    let mut plateau = PlateauState::new();
    let mut early = EarlyStopState::new();
    let mut history = History::default();
    let mut lr = config.learning_rate;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        adam.set_learning_rate(lr);
        let mut accum = LossAccum::new(num_classes);

        for batch_index in 0..batcher.batches_per_epoch() {
            let (images, masks) = batcher.next_batch().map_err(Error::Core)?;
            let mut g: Graph<f32> = Graph::new();
            let vars = model.wire(&mut g, true);
            let input = g.input(images);
            let nodes = model.forward_wired(&mut g, &vars, input).map_err(Error::Core)?;
            let target = g.input(masks);
            let loss_node = match config.loss {
                LossKind::Combined => combined_loss_node(&mut g, target, nodes.probs),
                LossKind::CategoricalDice => {
                    categorical_dice_loss_node(&mut g, target, nodes.probs, DICE_EPS)
                }
            }
            .map_err(Error::Core)?;
            let loss_value = g.scalar(loss_node).map_err(Error::Core)?.to_f64();
            if !loss_value.is_finite() {
                return Err(Error::Diverged { epoch, batch: batch_index });
            }
            accum.push(g.value(target), g.value(nodes.probs))?;

            let grads = g.backward(loss_node).map_err(Error::Core)?;
            let mut by_name = BTreeMap::new();
            for (name, &var) in &vars {
                let grad = grads
                    .get(var)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(model.parameters()[name].shape()));
                by_name.insert(name.clone(), grad);
            }
            adam.step(model.parameters_mut(), &by_name).map_err(Error::Core)?;
        }

        let (val_loss, val_dice) =
            validation_scores(&model, val_samples, config.batch_size, config.loss)?;
        let seconds = if config.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
        let record = EpochRecord {
            epoch,
            train_loss: accum.loss(config.loss),
            val_loss,
            train_dice: accum.dice(),
            val_dice,
            lr,
            seconds,
        };
        on_epoch(&record);
        history.epochs.push(record);

        let improved = is_improvement(early.best_loss(), val_loss);
        lr = plateau.update(
            val_loss,
            lr,
            config.plateau_factor,
            config.plateau_patience,
            config.min_lr,
        );
        let decision = early.update(val_loss, model.parameters(), config.early_stop_patience);
        if improved {
            on_best(&model)?;
        }
        if decision == Decision::Stop {
            if let Some(best) = early.best_params() {
                *model.parameters_mut() = best.clone();
            }
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutput { model, history, stopped_early })
}

/// Whole-split metrics over fixed-order batches.
pub fn evaluate(
    model: &AttentionUNet<f32>,
    samples: &[SliceSample],
    batch_size: usize,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::validation("evaluation split has no slices"));
    }
    let mut accum = EvalAccumulator::new(model.config().num_classes);
    for (images, masks) in sequential_batches(samples, batch_size).map_err(Error::Core)? {
        let probs = model.forward(&images).map_err(Error::Core)?;
        accum.push(&masks, &probs).map_err(Error::Core)?;
    }
    accum.report().map_err(Error::Core)
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,train_dice,val_dice,lr,seconds";

/// Renders the history as CSV with six significant digits per real.
pub fn history_to_csv(history: &History) -> String {
    let mut out = String::with_capacity(64 * (history.epochs.len() + 1));
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for r in &history.epochs {
        out.push_str(&format!(
            "{},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e}\n",
            r.epoch, r.train_loss, r.val_loss, r.train_dice, r.val_dice, r.lr, r.seconds
        ));
    }
    out
}

pub fn write_history_csv(history: &History, path: &Path) -> Result<()> {
    std::fs::write(path, history_to_csv(history)).map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: &Path) -> Result<History> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == HISTORY_HEADER => {}
        other => {
            return Err(Error::format(
                path,
                format!("bad history header: {:?}", other.unwrap_or_default()),
            ));
        }
    }
    let mut epochs = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::format(
                path,
                format!("row {} has {} fields, expected 7", i + 1, fields.len()),
            ));
        }
        let parse_real = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                Error::format(path, format!("row {}: {what} value {s:?} is not a real", i + 1))
            })
        };
        epochs.push(EpochRecord {
            epoch: fields[0].parse::<usize>().map_err(|_| {
                Error::format(path, format!("row {}: epoch {:?} is not an integer", i + 1, fields[0]))
            })?,
            train_loss: parse_real(fields[1], "train_loss")?,
            val_loss: parse_real(fields[2], "val_loss")?,
            train_dice: parse_real(fields[3], "train_dice")?,
            val_dice: parse_real(fields[4], "val_dice")?,
            lr: parse_real(fields[5], "lr")?,
            seconds: parse_real(fields[6], "seconds")?,
        });
    }
    Ok(History { epochs })
}
