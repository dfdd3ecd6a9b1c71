//! Enhancement network training with FL, DFL or DFL+FL.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::{crop_start, segment_len, stack_crops, ParallelPair};
use crate::autodiff::{Checkpoint, Graph, LrSchedule, OptimizerConfig, OptimizerKind, OptimizerState, ParamStore};
use crate::corpus::derive_seed;
use crate::enhance::{Enhancer, EnhancerConfig, ForwardOpts};
use crate::error::{Error, Result};
use crate::loss::{enhancement_loss, LossKind, TapNetwork};
use crate::scalar::Scalar;
use crate::speaker::AuxModel;

pub const LOG_FILE: &str = "train_log.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancerTrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub base_lr: f64,
    /// Multiplicative learning-rate decay per epoch after warm-up.
    pub lr_decay: f64,
    pub warmup_steps: u64,
    /// Adam for CAN and RAdam for EDN when unset.
    pub optimizer: Option<OptimizerKind>,
    pub bn_momentum: f64,
}

impl Default for EnhancerTrainConfig {
    fn default() -> Self {
        EnhancerTrainConfig {
            loss: LossKind::Dfl,
            epochs: 6,
            batch_size: 60,
            segment_frames: 500,
            base_lr: 0.001,
            lr_decay: 0.8,
            warmup_steps: 0,
            optimizer: None,
            bn_momentum: 0.1,
        }
    }
}

impl EnhancerTrainConfig {
    /// Full-scale recipe for `arch` ("can" or "edn").
    pub fn recipe(arch: &EnhancerConfig) -> Self {
        match arch {
            EnhancerConfig::Can(_) => Self::default(),
            EnhancerConfig::Edn(_) => EnhancerTrainConfig { batch_size: 32, ..Self::default() },
        }
    }

    pub fn optimizer_for(&self, arch: &EnhancerConfig) -> OptimizerKind {
        self.optimizer.unwrap_or(match arch {
            EnhancerConfig::Can(_) => OptimizerKind::Adam,
            EnhancerConfig::Edn(_) => OptimizerKind::Radam,
        })
    }

    pub fn validate(&self, arch: &EnhancerConfig) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("enhancer training: epochs and batch size must be positive".into()));
        }
        if !(self.base_lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("enhancer training: learning rate and decay must be positive".into()));
        }
        if self.segment_frames < arch.context_frames() {
            return Err(Error::Config(format!(
                "segments of {} frames are shorter than the {}-frame receptive field",
                self.segment_frames,
                arch.context_frames()
            )));
        }
        Ok(())
    }

    /// Everything except the epoch count, which a resumed run may extend.
    fn resume_key(&self) -> Self {
        EnhancerTrainConfig { epochs: 0, ..self.clone() }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    /// Training loss of the step; absent on the initial validation record.
    pub loss: Option<f64>,
    /// Present on the last step of each epoch and on the initial record.
    pub val_loss: Option<f64>,
}

/// SHA-256 over every entry of a parameter store.
pub fn store_digest<S: Scalar>(store: &ParamStore<S>) -> String {
    let mut h = Sha256::new();
    for (_, p) in store.iter() {
        h.update(p.name.as_bytes());
        for v in p.value.data() {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Mean per-pair loss over whole validation utterances in eval mode.
pub fn validation_loss<S: Scalar>(
    enhancer: &Enhancer<S>,
    kind: LossKind,
    aux: Option<&dyn TapNetwork<S>>,
    val: &[ParallelPair<S>],
    batch: usize,
) -> Result<f64> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let mut order: Vec<usize> = (0..val.len()).collect();
    order.sort_by_key(|&i| val[i].noisy.n_frames());
    let (mut total, mut i) = (0.0, 0);
    while i < order.len() {
        let len = val[order[i]].noisy.n_frames();
        let mut j = i;
        while j < order.len() && j - i < batch.max(1) && val[order[j]].noisy.n_frames() == len {
            j += 1;
        }
        let noisy: Vec<_> = order[i..j].iter().map(|&k| (&val[k].noisy, 0)).collect();
        let clean: Vec<_> = order[i..j].iter().map(|&k| (&val[k].clean, 0)).collect();
        let mut g = Graph::new();
        let x = g.constant(stack_crops(&noisy, len)?);
        let c = g.constant(stack_crops(&clean, len)?);
        let e = enhancer.forward(&mut g, x, ForwardOpts::default())?;
        let l = enhancement_loss(&mut g, kind, aux, e, c)?;
        total += g.value(l).item().as_f64() * (j - i) as f64;
        i = j;
    }
    Ok(total / val.len() as f64)
}

fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:03}.ckpt"))
}

/// Highest-numbered epoch checkpoint in `dir` not beyond `max_epoch`.
fn latest_checkpoint(dir: &Path, max_epoch: usize) -> Option<(usize, PathBuf)> {
    (1..=max_epoch).rev().map(|e| (e, epoch_checkpoint(dir, e))).find(|(_, p)| p.is_file())
}

fn read_log(path: &Path, through_epoch: usize) -> Result<Vec<StepLog>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: StepLog = serde_json::from_str(line)?;
        if rec.epoch <= through_epoch {
            out.push(rec);
        }
    }
    Ok(out)
}

fn write_log(path: &Path, records: &[StepLog]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct EnhancerRun<S: Scalar> {
    pub enhancer: Enhancer<S>,
    pub log: Vec<StepLog>,
    /// Epoch a resumed run picked up from, if any.
    pub resumed_from: Option<usize>,
}

/// Train an enhancer. With `run_dir`, a checkpoint and the JSON-lines log are
/// written after every epoch and an interrupted run resumes from the latest
/// epoch checkpoint found there.
pub fn train_enhancer<S: Scalar>(
    arch: &EnhancerConfig,
    cfg: &EnhancerTrainConfig,
    aux: Option<&AuxModel<S>>,
    train: &[ParallelPair<S>],
    val: &[ParallelPair<S>],
    seed: u64,
    run_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepLog),
) -> Result<EnhancerRun<S>> {
    cfg.validate(arch)?;
    let taps: Option<&dyn TapNetwork<S>> = match (cfg.loss.needs_aux(), aux) {
        (false, _) => None,
        (true, None) => return Err(Error::Config(format!("loss {} needs an auxiliary checkpoint", cfg.loss))),
        (true, Some(a)) if !a.store.is_frozen() => {
            return Err(Error::Invalid("the auxiliary network must be frozen before enhancer training".into()))
        }
        (true, Some(a)) => {
            if a.config().n_bands != arch.n_bands() {
                return Err(Error::Config("auxiliary and enhancer band counts differ".into()));
            }
            Some(a)
        }
    };
    let aux_digest = aux.map(|a| store_digest(&a.store));
    for p in train.iter().chain(val) {
        if p.noisy.n_frames() != p.clean.n_frames() || p.noisy.n_bands() != arch.n_bands() {
            return Err(Error::Invalid(format!("{}: pair is not parallel or has the wrong band count", p.utt_id)));
        }
    }
    let seg = segment_len(cfg.segment_frames, train.iter().map(|p| &p.noisy))?;
    if seg < arch.context_frames() {
        return Err(Error::Invalid(format!("training utterances are shorter than the {}-frame receptive field", arch.context_frames())));
    }

    let mut enhancer = Enhancer::<S>::build(arch, derive_seed(seed, "enhancer-init", 0))?;
    let opt_cfg = OptimizerConfig { kind: cfg.optimizer_for(arch), ..OptimizerConfig::default() };
    let mut opt = OptimizerState::new(opt_cfg, &enhancer.store);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let schedule = LrSchedule {
        base_lr: cfg.base_lr,
        decay: cfg.lr_decay,
        warmup_steps: cfg.warmup_steps,
        steps_per_epoch,
    };
    let meta_key = serde_json::json!({ "seed": seed, "train": cfg.resume_key(), "arch": arch });

    let mut log = Vec::new();
    let mut start_epoch = 1;
    let mut resumed_from = None;
    let log_path = run_dir.map(|d| d.join(LOG_FILE));
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some((epoch, path)) = latest_checkpoint(dir, cfg.epochs) {
            let ckpt = Checkpoint::read(&path)?;
            if ckpt.header.meta.get("key") != Some(&meta_key) {
                return Err(Error::Checkpoint(format!("{} was written by a different configuration", path.display())));
            }
            ckpt.load_into(&mut enhancer.store)?;
            opt = ckpt
                .optimizer_state(&enhancer.store)?
                .ok_or_else(|| Error::Checkpoint(format!("{} has no optimizer state", path.display())))?;
            log = read_log(log_path.as_deref().expect("run dir"), epoch)?;
            start_epoch = epoch + 1;
            resumed_from = Some(epoch);
        }
    }
    if resumed_from.is_none() {
        let v = validation_loss(&enhancer, cfg.loss, taps, val, cfg.batch_size)?;
        let rec = StepLog { step: 0, epoch: 0, lr: 0.0, loss: None, val_loss: Some(v) };
        on_step(&rec);
        log.push(rec);
    }

    let momentum = S::lit(cfg.bn_momentum);
    let mut step = (start_epoch as u64 - 1) * steps_per_epoch;
    for epoch in start_epoch..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "enhancer-epoch", epoch as u64));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let n_chunks = order.len().div_ceil(cfg.batch_size);
        for (ci, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let lr = schedule.lr(step + 1);
            let starts: Vec<usize> = chunk.iter().map(|&i| crop_start(&mut rng, train[i].noisy.n_frames(), seg)).collect();
            let noisy: Vec<_> = chunk.iter().zip(&starts).map(|(&i, &s)| (&train[i].noisy, s)).collect();
            let clean: Vec<_> = chunk.iter().zip(&starts).map(|(&i, &s)| (&train[i].clean, s)).collect();
            let mut g = Graph::new();
            let x = g.constant(stack_crops(&noisy, seg)?);
            let c = g.constant(stack_crops(&clean, seg)?);
            let e = enhancer.forward(&mut g, x, ForwardOpts::train())?;
            let loss = enhancement_loss(&mut g, cfg.loss, taps, e, c)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Invalid(format!("enhancer loss diverged at step {}", step + 1)));
            }
            g.backward(loss)?;
            enhancer.store.zero_grads();
            enhancer.store.accumulate_grads(&g);
            let stats = g.take_stat_updates();
            enhancer.store.apply_stat_updates(&stats, momentum);
            opt.step(&mut enhancer.store, lr);
            step += 1;
            let val_loss = if ci + 1 == n_chunks {
                Some(validation_loss(&enhancer, cfg.loss, taps, val, cfg.batch_size)?)
            } else {
                None
            };
            let rec = StepLog { step, epoch, lr, loss: Some(value), val_loss };
            on_step(&rec);
            log.push(rec);
        }
        if let Some(dir) = run_dir {
            let meta = serde_json::json!({ "epoch": epoch, "step": step, "key": meta_key });
            enhancer.checkpoint(Some(&opt), meta)?.write(&epoch_checkpoint(dir, epoch))?;
            write_log(log_path.as_deref().expect("run dir"), &log)?;
        }
    }
    if let (Some(a), Some(before)) = (aux, aux_digest) {
        if store_digest(&a.store) != before {
            return Err(Error::Invalid("auxiliary parameters changed during enhancer training".into()));
        }
    }
    Ok(EnhancerRun { enhancer, log, resumed_from })
}
