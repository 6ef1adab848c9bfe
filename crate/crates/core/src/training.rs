//! Mini-batch training of a [`RewardNet`] under any [`LossVariant`].
//!
//! Each step scores the chosen and rejected responses of every pair in the
//! batch, evaluates the batch objective on the margins, and backpropagates
//! `∂loss/∂Δ_i` into both forward passes (`+g_i` through the chosen response,
//! `−g_i` through the rejected one) before a single AdamW update.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::analytics::accuracy;
use crate::data::PreferenceExample;
use crate::error::{Error, Result};
use crate::losses::{self, BatchLossReport, LossKind, LossVariant};
use crate::model::{GradientSet, RewardNet};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossVariant,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small-MLP defaults: lr 1e-3, batch 32, 20 epochs.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            loss: LossVariant::default(),
            shuffle: true,
        }
    }

    /// Hyperparameters used for billion-parameter reward models:
    /// lr 9e-6, batch 128, one epoch. Far too slow for the small MLP here.
    pub fn paper() -> Self {
        Self {
            learning_rate: 9e-6,
            batch_size: 128,
            epochs: 1,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be finite and > 0");
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in (0, 1), got {b}"
                )));
            }
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be finite and > 0");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        self.loss.validate()
    }
}

/// AdamW moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u64,
}

impl OptimState {
    pub fn new(net: &RewardNet) -> Self {
        Self {
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
            t: 0,
        }
    }
}

/// One bias-corrected AdamW update with decoupled weight decay:
/// `θ ← θ − lr · (m̂ / (√v̂ + ε) + wd · θ)`.
pub fn adamw_step(
    net: &mut RewardNet,
    grads: &GradientSet,
    state: &mut OptimState,
    cfg: &TrainConfig,
) -> Result<()> {
    grads.check_congruent(net)?;
    state.m.check_congruent(net)?;
    state.v.check_congruent(net)?;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let lr = cfg.learning_rate;
    let tensors = net
        .tensors_mut()
        .zip(&grads.tensors)
        .zip(state.m.tensors.iter_mut().zip(state.v.tensors.iter_mut()));
    for ((theta, g), (m, v)) in tensors {
        for (((p, &g), m), v) in theta.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + cfg.adam_epsilon) + cfg.weight_decay * *p);
        }
    }
    Ok(())
}

/// Partitions `0..n` into batches of `batch_size` (the last may be short),
/// optionally shuffled by a ChaCha8 stream of `seed`.
pub fn make_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidBatch("cannot batch an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut stream_rng(seed, 0));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    stream_rng(seed, 1 + epoch as u64).next_u64()
}

/// Per-pair margin scores for the fixed-margin objective.
fn margin_scores(batch: &[&PreferenceExample], loss: &LossVariant) -> Result<Option<Vec<f64>>> {
    if loss.kind != LossKind::FixedMargin {
        return Ok(None);
    }
    batch
        .iter()
        .map(|e| {
            e.margin_category
                .map(|c| c.margin(loss.margin_unit))
                .ok_or_else(|| {
                    Error::InvalidData(
                        "fixed-margin loss needs a margin category on every example".into(),
                    )
                })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Batch objective and its parameter gradient.
pub fn batch_gradient(
    net: &RewardNet,
    batch: &[&PreferenceExample],
    loss: &LossVariant,
) -> Result<(BatchLossReport, GradientSet)> {
    let mut traces = Vec::with_capacity(batch.len());
    for e in batch {
        let chosen = net.trace(&net.input(&e.prompt, &e.chosen)?);
        let rejected = net.trace(&net.input(&e.prompt, &e.rejected)?);
        traces.push((chosen, rejected));
    }
    let deltas: Vec<f64> = traces.iter().map(|(c, r)| c.reward - r.reward).collect();
    let margins = margin_scores(batch, loss)?;
    let report = losses::evaluate(loss, &deltas, margins.as_deref())?;
    let upstream = losses::loss_delta_gradient(&deltas, margins.as_deref(), loss)?;
    let mut grads = GradientSet::zeros_like(net);
    for ((chosen, rejected), g) in traces.iter().zip(upstream) {
        net.accumulate_backward(chosen, g, &mut grads);
        net.accumulate_backward(rejected, -g, &mut grads);
    }
    Ok((report, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub mu_b: f64,
    pub margin_branch_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: Option<f64>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "epoch,step,loss,mu_B,margin_branch_fraction").map_err(io)?;
        for r in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch, r.step, r.loss, r.mu_b, r.margin_branch_fraction
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn check_dataset(dataset: &[PreferenceExample], net: &RewardNet, cfg: &TrainConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::InvalidData("training set is empty".into()));
    }
    if cfg.loss.kind == LossKind::FixedMargin {
        if let Some(i) = dataset.iter().position(|e| e.margin_category.is_none()) {
            return Err(Error::InvalidData(format!(
                "fixed-margin loss needs a margin category on every example; example {i} has none"
            )));
        }
    }
    for e in dataset {
        net.input(&e.prompt, &e.chosen)?;
        net.input(&e.prompt, &e.rejected)?;
    }
    Ok(())
}

/// Trains `net` and reports per-step history and final accuracies.
///
/// Batches are reshuffled at every epoch from a seed derived from
/// `(cfg.seed, epoch)`, so the result is a pure function of the dataset
/// order, the config and the initial parameters.
pub fn train_with_test(
    dataset: &[PreferenceExample],
    test: Option<&[PreferenceExample]>,
    mut net: RewardNet,
    cfg: &TrainConfig,
) -> Result<(RewardNet, TrainHistory)> {
    cfg.validate()?;
    check_dataset(dataset, &net, cfg)?;
    let mut state = OptimState::new(&net);
    let mut history = TrainHistory::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches = make_batches(
            dataset.len(),
            cfg.batch_size,
            epoch_seed(cfg.seed, epoch),
            cfg.shuffle,
        )?;
        for idx in batches {
            let batch: Vec<&PreferenceExample> = idx.iter().map(|&i| &dataset[i]).collect();
            let (report, grads) = batch_gradient(&net, &batch, &cfg.loss)?;
            if !report.loss.is_finite() || !grads.is_finite() {
                return Err(Error::Domain(format!(
                    "non-finite loss or gradient at step {step}"
                )));
            }
            adamw_step(&mut net, &grads, &mut state, cfg)?;
            history.steps.push(StepRecord {
                epoch,
                step,
                loss: report.loss,
                mu_b: report.mu_b,
                margin_branch_fraction: report.margin_branch_fraction(),
            });
            step += 1;
        }
    }
    history.final_train_accuracy = accuracy(&net, dataset)?;
    history.final_test_accuracy = test.map(|t| accuracy(&net, t)).transpose()?;
    Ok((net, history))
}

pub fn train(
    dataset: &[PreferenceExample],
    net: RewardNet,
    cfg: &TrainConfig,
) -> Result<(RewardNet, TrainHistory)> {
    train_with_test(dataset, None, net, cfg)
}
