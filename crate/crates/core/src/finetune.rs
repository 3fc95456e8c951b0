//! Mini-batch SGD with momentum and weight decay on softmax cross-entropy.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{backward, cross_entropy, forward_scaled, logits_index};
use crate::graph::{LayerParams, ModelGraph};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Scalar;

/// Learning rate `lr` applies from epoch `from` (zero-based) onward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub from: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Piecewise-constant schedule; the first step must start at epoch 0.
    pub lr: Vec<LrStep>,
    pub batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// `lr` for the first two thirds of training, a tenth of it after.
    pub fn step_decay(epochs: usize, lr: f64, seed: u64) -> Self {
        let drop = (2 * epochs).div_ceil(3);
        let mut steps = vec![LrStep { from: 0, lr }];
        if drop > 0 && drop < epochs {
            steps.push(LrStep { from: drop, lr: lr / 10.0 });
        }
        TrainConfig {
            epochs,
            lr: steps,
            batch: 32,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed,
        }
    }

    /// Short recovery pass between pruning steps.
    pub fn recovery(seed: u64) -> Self {
        TrainConfig {
            epochs: 1,
            lr: vec![LrStep { from: 0, lr: 1e-3 }],
            ..TrainConfig::step_decay(1, 1e-3, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        match self.lr.first() {
            Some(s) if s.from == 0 => {}
            _ => return Err(Error::InvalidArgument("learning-rate schedule must start at epoch 0".into())),
        }
        if self.lr.windows(2).any(|w| w[0].from >= w[1].from) {
            return Err(Error::InvalidArgument("learning-rate steps must be strictly increasing".into()));
        }
        if self.lr.iter().any(|s| !(s.lr >= 0.0) || !s.lr.is_finite()) {
            return Err(Error::InvalidArgument("learning rates must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("momentum must be in [0, 1), weight decay >= 0".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr.iter().rev().find(|s| s.from <= epoch).map_or(0.0, |s| s.lr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's mini-batches, as seen during training.
    pub train_loss: f64,
    /// Loss and accuracy over the whole set after the epoch.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub loss: f64,
}

const EVAL_BATCH: usize = 64;

/// Top-1 accuracy and mean cross-entropy over `data`.
pub fn evaluate<T: Scalar>(model: &ModelGraph<T>, data: &Dataset) -> Result<EvalResult> {
    data.check_classes(model.arch.classes)?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let li = logits_index(model);
    let (mut loss, mut correct) = (0.0, 0usize);
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(data.len())).collect();
        let x = data.images.gather_samples(&idx)?.cast::<T>();
        let acts = forward_scaled(model, &x, &[], Some(li))?;
        let (l, _, c) = cross_entropy(&acts[li], &data.labels[start..start + idx.len()])?;
        loss += l;
        correct += c;
    }
    let n = data.len() as f64;
    Ok(EvalResult {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}

/// Applies one SGD update: `v ← μv + (g + λp)`, `p ← p − lr·v`.
fn sgd_step<T: Scalar>(
    model: &mut ModelGraph<T>,
    grads: &mut std::collections::BTreeMap<String, LayerParams<T>>,
    velocity: &mut std::collections::BTreeMap<String, LayerParams<T>>,
    lr: f64,
    cfg: &TrainConfig,
) {
    for (id, p) in model.params.iter_mut() {
        let Some(g) = grads.get_mut(id) else { continue };
        let v = velocity.entry(id.clone()).or_insert_with(|| p.zeros_like());
        for ((ps, gs), vs) in p.slices_mut().into_iter().zip(g.slices_mut()).zip(v.slices_mut()) {
            for ((pv, gv), vv) in ps.iter_mut().zip(gs.iter()).zip(vs.iter_mut()) {
                let p64 = pv.as_f64();
                let step = cfg.momentum * vv.as_f64() + gv.as_f64() + cfg.weight_decay * p64;
                *vv = T::from_f64(step);
                *pv = T::from_f64(p64 - lr * step);
            }
        }
    }
}

/// Trains `model` on `data` and returns the updated model with per-epoch
/// metrics. Fails with [`Error::Diverged`] as soon as a batch loss is not
/// finite.
pub fn train<T: Scalar>(
    model: &ModelGraph<T>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelGraph<T>, Vec<EpochMetrics>)> {
    let mut m = model.clone();
    let history = train_in_place(&mut m, data, cfg)?;
    Ok((m, history))
}

pub fn train_in_place<T: Scalar>(model: &mut ModelGraph<T>, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    data.check_classes(model.arch.classes)?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    if !model.is_finite() {
        return Err(Error::InvalidArgument("model has non-finite parameters".into()));
    }
    let li = logits_index(model);
    let mut velocity = std::collections::BTreeMap::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, &[epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let x = data.images.gather_samples(batch)?.cast::<T>();
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let acts = forward_scaled(model, &x, &[], Some(li))?;
            let (loss, grad, _) = cross_entropy(&acts[li], &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            epoch_loss += loss;
            let grad = grad.scale(T::from_f64(1.0 / batch.len() as f64));
            let mut g = backward(model, &x, &acts, li, grad)?.params;
            sgd_step(model, &mut g, &mut velocity, lr, cfg);
        }
        if !model.is_finite() {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        let eval = evaluate(model, data)?;
        history.push(EpochMetrics {
            epoch,
            lr,
            train_loss: epoch_loss / data.len() as f64,
            loss: eval.loss,
            accuracy: eval.accuracy,
        });
    }
    Ok(history)
}

pub fn write_history_csv<W: Write>(history: &[EpochMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for h in history {
        w.serialize(h)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
