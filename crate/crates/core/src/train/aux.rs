//! Speaker classifier training on clean features.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{crop_start, segment_len, stack_crops, LabeledUtterance};
use crate::audio::FeatureMatrix;
use crate::autodiff::{Graph, LrSchedule, Mode, OptimizerConfig, OptimizerState, Tensor};
use crate::corpus::derive_seed;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::speaker::{anneal_lambda, AuxModel, AuxNetConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub base_lr: f64,
    /// Multiplicative learning-rate decay per epoch after warm-up.
    pub lr_decay: f64,
    pub warmup_steps: u64,
    pub lambda_start: f64,
    pub lambda_gamma: f64,
    pub lambda_floor: f64,
    /// Multiplier on the cosine logits.
    pub logit_scale: f64,
    pub bn_momentum: f64,
}

impl Default for AuxTrainConfig {
    fn default() -> Self {
        AuxTrainConfig {
            epochs: 50,
            batch_size: 128,
            segment_frames: 800,
            base_lr: 0.0075,
            lr_decay: 0.95,
            warmup_steps: 200,
            lambda_start: 1000.0,
            lambda_gamma: 0.1,
            lambda_floor: 5.0,
            logit_scale: 16.0,
            bn_momentum: 0.1,
        }
    }
}

impl AuxTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.segment_frames == 0 {
            return Err(Error::Config("aux training: epochs, batch size and segment length must be positive".into()));
        }
        if !(self.base_lr > 0.0) || !(self.lr_decay > 0.0) || !(self.logit_scale > 0.0) {
            return Err(Error::Config("aux training: learning rate, decay and logit scale must be positive".into()));
        }
        if !(self.lambda_floor >= 0.0 && self.lambda_start >= self.lambda_floor) {
            return Err(Error::Config("aux training: need lambda_start >= lambda_floor >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxEpochLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub lambda: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxTrainReport {
    /// Validation loss and accuracy before the first update.
    pub initial_val_loss: f64,
    pub initial_val_acc: f64,
    pub epochs: Vec<AuxEpochLog>,
}

/// Subtract each `(item, band)` row's mean over the last axis, in place.
pub fn normalize_rows<S: Scalar>(t: &mut Tensor<S>) {
    let len = *t.shape().last().unwrap_or(&1);
    let inv = S::one() / S::lit(len.max(1) as f64);
    for row in t.data_mut().chunks_mut(len.max(1)) {
        let mu = row.iter().copied().sum::<S>() * inv;
        row.iter_mut().for_each(|v| *v -= mu);
    }
}

/// Eval-mode embeddings of whole utterances, batching those of equal length.
pub fn embed_all<S: Scalar>(model: &AuxModel<S>, mats: &[&FeatureMatrix<S>], batch: usize) -> Result<Vec<Vec<S>>> {
    let mut order: Vec<usize> = (0..mats.len()).collect();
    order.sort_by_key(|&i| mats[i].n_frames());
    let mut out = vec![Vec::new(); mats.len()];
    let mut i = 0;
    while i < order.len() {
        let len = mats[order[i]].n_frames();
        let mut j = i;
        while j < order.len() && j - i < batch.max(1) && mats[order[j]].n_frames() == len {
            j += 1;
        }
        let items: Vec<_> = order[i..j].iter().map(|&k| (mats[k], 0)).collect();
        let mut x = stack_crops(&items, len)?;
        normalize_rows(&mut x);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let emb = model.forward(&mut g, xv, Mode::Eval)?.embedding;
        let d = g.shape(emb)[1];
        for (row, &k) in g.value(emb).data().chunks(d).zip(&order[i..j]) {
            out[k] = row.to_vec();
        }
        i = j;
    }
    Ok(out)
}

/// Loss at the annealing floor and accuracy over whole validation utterances.
pub fn evaluate_aux<S: Scalar>(model: &AuxModel<S>, cfg: &AuxTrainConfig, val: &[LabeledUtterance<S>]) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mats: Vec<_> = val.iter().map(|u| &u.features).collect();
    let embs = embed_all(model, &mats, cfg.batch_size)?;
    let d = embs[0].len();
    let labels: Vec<usize> = val.iter().map(|u| u.label).collect();
    let mut g = Graph::new();
    let e = g.constant(Tensor::new(vec![val.len(), d], embs.concat())?);
    let loss = model.loss(&mut g, e, &labels, cfg.lambda_floor, cfg.logit_scale)?;
    let pred = model.classify(&mut g, e)?;
    let correct = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok((g.value(loss).item().as_f64(), correct as f64 / val.len() as f64))
}

/// Train the auxiliary classifier from `seed`. `on_epoch` sees each epoch's log.
pub fn train_aux<S: Scalar>(
    net: &AuxNetConfig,
    cfg: &AuxTrainConfig,
    train: &[LabeledUtterance<S>],
    val: &[LabeledUtterance<S>],
    seed: u64,
    mut on_epoch: impl FnMut(&AuxEpochLog),
) -> Result<(AuxModel<S>, AuxTrainReport)> {
    cfg.validate()?;
    let classes: BTreeSet<usize> = train.iter().map(|u| u.label).collect();
    if classes.len() < 2 {
        return Err(Error::Invalid(format!("speaker training needs at least 2 speakers, found {}", classes.len())));
    }
    if classes.iter().chain(val.iter().map(|u| &u.label)).any(|&l| l >= net.n_speakers) {
        return Err(Error::Config(format!("labels exceed the configured {} speakers", net.n_speakers)));
    }
    let seg = segment_len(cfg.segment_frames, train.iter().map(|u| &u.features))?;
    let mut model = AuxModel::<S>::build(net, derive_seed(seed, "aux-init", 0))?;
    let mut opt = OptimizerState::new(OptimizerConfig::default(), &model.store);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let schedule = LrSchedule {
        base_lr: cfg.base_lr,
        decay: cfg.lr_decay,
        warmup_steps: cfg.warmup_steps,
        steps_per_epoch,
    };
    let (initial_val_loss, initial_val_acc) = evaluate_aux(&model, cfg, val)?;
    let momentum = S::lit(cfg.bn_momentum);
    let mut step = 0u64;
    let mut logs = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "aux-epoch", epoch as u64));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let (mut lr, mut lambda) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            lr = schedule.lr(step + 1);
            lambda = anneal_lambda(step, cfg.lambda_start, cfg.lambda_gamma, cfg.lambda_floor);
            let items: Vec<_> =
                chunk.iter().map(|&i| (&train[i].features, crop_start(&mut rng, train[i].features.n_frames(), seg))).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            let mut x = stack_crops(&items, seg)?;
            normalize_rows(&mut x);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let out = model.forward(&mut g, xv, Mode::Train)?;
            let loss = model.loss(&mut g, out.embedding, &labels, lambda, cfg.logit_scale)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Invalid(format!("aux loss diverged at step {}", step + 1)));
            }
            let pred = model.classify(&mut g, out.embedding)?;
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
            seen += labels.len();
            loss_sum += value * labels.len() as f64;
            g.backward(loss)?;
            model.store.zero_grads();
            model.store.accumulate_grads(&g);
            let stats = g.take_stat_updates();
            model.store.apply_stat_updates(&stats, momentum);
            opt.step(&mut model.store, lr);
            step += 1;
        }
        let (val_loss, val_acc) = evaluate_aux(&model, cfg, val)?;
        let log = AuxEpochLog {
            epoch,
            step,
            lr,
            lambda,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss,
            val_acc,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((model, AuxTrainReport { initial_val_loss, initial_val_acc, epochs: logs }))
}
