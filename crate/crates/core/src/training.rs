//! Pre-training (MLM, whole-word MLM) and finetuning (constrained MLM) with
//! Adam, warmup then linear decay, decoupled weight decay, and gradient
//! accumulation.
//!
//! All randomness is derived from `TrainConfig::seed` and the (epoch, step,
//! instance) coordinates, so a run resumed from a checkpoint replays exactly
//! what an uninterrupted run would have done.

use crate::corpus::CanonicalFunction;
use crate::eval;
use crate::masking::{self, ConstrainedSet};
use crate::model::{Checkpoint, Model, ModelError, OptimizerState};
use crate::numeric::{Graph, Real, Tensor};
use crate::seed;
use crate::tokenizer::{BpeVocab, Encoding};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training instances")]
    EmptyDataset,
    #[error("checkpoint vocabulary {found} does not match dataset vocabulary {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("training diverged at step {step}: {what}")]
    Diverged {
        step: u64,
        what: String,
        /// State after the last successful update.
        last_good: Box<Checkpoint<f64>>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mlm,
    MlmWholeWord,
    Cmlm,
}

impl Objective {
    pub fn is_pretraining(self) -> bool {
        !matches!(self, Objective::Cmlm)
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Mlm => "mlm",
            Objective::MlmWholeWord => "mlm_ww",
            Objective::Cmlm => "cmlm",
        }
    }
}

/// Warmup used when none is configured: 6% of the run, capped at 10,000.
pub fn scaled_warmup(total_steps: u64) -> u64 {
    (total_steps * 6 / 100).min(10_000)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Sequences per optimizer step (accumulated one at a time).
    pub batch_size: usize,
    pub max_epochs: usize,
    pub peak_lr: f64,
    /// `None` means [`scaled_warmup`] of the planned steps.
    pub warmup_steps: Option<u64>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dropout: f64,
    pub seed: u64,
}

pub const RECIPES: [&str; 6] = ["base-a", "base-b", "small-a", "small-b", "toy-a", "toy-b"];

impl TrainConfig {
    /// Full-scale settings: batch 1024, 40 epochs, peak 1e-4 reached after
    /// 10,000 warmup steps.
    pub fn full_scale(objective: Objective) -> Self {
        TrainConfig {
            objective,
            batch_size: 1024,
            max_epochs: 40,
            peak_lr: 1e-4,
            warmup_steps: Some(10_000),
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            dropout: 0.1,
            seed: 0,
        }
    }

    /// Named recipe; two per model size.
    pub fn recipe(name: &str, objective: Objective) -> Option<Self> {
        let full = Self::full_scale(objective);
        let toy = TrainConfig {
            batch_size: 8,
            max_epochs: if objective.is_pretraining() { 30 } else { 40 },
            peak_lr: 2e-3,
            warmup_steps: None,
            ..full.clone()
        };
        Some(match name {
            "base-a" | "small-a" => full,
            "base-b" | "small-b" => TrainConfig { peak_lr: 5e-5, ..full },
            "toy-a" => toy,
            "toy-b" => TrainConfig { peak_lr: 1e-3, ..toy },
            _ => return None,
        })
    }

    pub fn warmup(&self, total_steps: u64) -> u64 {
        self.warmup_steps.unwrap_or_else(|| scaled_warmup(total_steps))
    }

    pub fn validate(&self, total_steps: u64) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if total_steps > 0 && self.warmup(total_steps) >= total_steps {
            return bad("warmup must be shorter than the run");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Linear ramp from 0 to the peak over the warmup, then linear decay to 0 at
/// `total_steps`.
pub fn lr_at_step(step: u64, cfg: &TrainConfig, total_steps: u64) -> f64 {
    let warmup = cfg.warmup(total_steps);
    let step = step.min(total_steps);
    if step < warmup {
        cfg.peak_lr * (step as f64 / warmup as f64)
    } else if total_steps == warmup {
        cfg.peak_lr
    } else {
        cfg.peak_lr * ((total_steps - step) as f64 / (total_steps - warmup) as f64)
    }
}

/// Hyper-parameters of one Adam update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamStep {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay coefficient; 0 for exempt parameters.
    pub weight_decay: f64,
}

/// One bias-corrected Adam update of `theta` in place. `step` counts updates
/// from 1. Decay is decoupled: `θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)`.
pub fn adam_update<T: Real>(
    theta: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    step: u64,
    h: &AdamStep,
) {
    assert!(step >= 1, "adam steps count from 1");
    assert_eq!(theta.shape(), grad.shape());
    let c1 = 1.0 - h.beta1.powi(step as i32);
    let c2 = 1.0 - h.beta2.powi(step as i32);
    let (b1, b2) = (T::from_f64(h.beta1), T::from_f64(h.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - h.beta1), T::from_f64(1.0 - h.beta2));
    let (c1, c2) = (T::from_f64(c1), T::from_f64(c2));
    let (lr, eps, wd) = (T::from_f64(h.lr), T::from_f64(h.eps), T::from_f64(h.weight_decay));
    let it = theta
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
    for ((t, &g), (mi, vi)) in it {
        *mi = b1 * *mi + one_b1 * g;
        *vi = b2 * *vi + one_b2 * g * g;
        let mhat = *mi / c1;
        let vhat = *vi / c2;
        *t = *t - lr * (mhat / (vhat.sqrt() + eps) + wd * *t);
    }
}

/// Framed encoding of a canonical function with slot-aligned token spans,
/// cut to `max_seq`.
pub fn encode_function(vocab: &BpeVocab, f: &CanonicalFunction, max_seq: usize) -> Encoding {
    let mut enc = vocab.encode_with_slots(f.text.as_bytes(), &f.slot_spans()).framed();
    enc.truncate_framed(max_seq);
    enc
}

/// Model input and targets for one instance under `objective`.
pub fn make_instance(
    enc: &Encoding,
    objective: Objective,
    vocab_size: usize,
    mask_seed: u64,
) -> (Vec<u32>, Vec<(usize, u32)>) {
    let plan = match objective {
        Objective::Mlm => masking::plan_mlm(enc, vocab_size, mask_seed),
        Objective::MlmWholeWord => masking::plan_mlm_whole_word(enc, vocab_size, mask_seed),
        Objective::Cmlm => masking::plan_cmlm(enc, &ConstrainedSet::from_encoding(enc)),
    };
    masking::apply_plan(&enc.ids, &plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub masked_tokens: usize,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_perplexity: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per line: step records, then epoch records.
    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for s in &self.steps {
            writeln!(f, "{}", serde_json::to_string(s).expect("serializable"))?;
        }
        for e in &self.epochs {
            writeln!(f, "{}", serde_json::to_string(e).expect("serializable"))?;
        }
        f.flush()
    }
}

pub struct TrainOutcome<T: Real> {
    pub checkpoint: Checkpoint<T>,
    pub log: TrainLog,
}

/// Training loop over a fixed list of framed encodings.
pub struct Trainer<'a> {
    pub config: &'a TrainConfig,
    pub train: &'a [Encoding],
    pub valid: &'a [Encoding],
    /// Stop after this many updates even if the schedule is longer.
    pub stop_at: Option<u64>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig, train: &'a [Encoding], valid: &'a [Encoding]) -> Self {
        Trainer {
            config,
            train,
            valid,
            stop_at: None,
        }
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.train.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.config.max_epochs as u64
    }

    /// Continue training from `ck` (fresh when `ck.step == 0`).
    pub fn run<T: Real>(&self, mut ck: Checkpoint<T>) -> Result<TrainOutcome<T>, TrainError> {
        let cfg = self.config;
        if self.train.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let total = self.total_steps();
        cfg.validate(total)?;
        ck.model.set_dropout(cfg.dropout)?;
        let vocab_size = ck.model.config().vocab_size;
        let spe = self.steps_per_epoch();
        let mut opt = ck
            .optimizer
            .take()
            .unwrap_or_else(|| OptimizerState::zeros_like(ck.model.params()));
        opt.step = ck.step;
        let mut log = TrainLog::default();
        let stop = self.stop_at.unwrap_or(total).min(total);
        let mut epoch_losses: Vec<f64> = Vec::new();

        while ck.step < stop {
            let epoch = (ck.step / spe) as usize;
            let in_epoch = (ck.step % spe) as usize;
            let order = self.epoch_order(epoch);
            let batch = &order[in_epoch * cfg.batch_size..((in_epoch + 1) * cfg.batch_size).min(order.len())];
            let step = ck.step + 1;

            let prepared: Vec<(usize, Vec<u32>, Vec<(usize, u32)>)> = batch
                .iter()
                .map(|&i| {
                    let mask_seed = seed::derive(cfg.seed, &[epoch as u64, i as u64]);
                    let (input, targets) = make_instance(&self.train[i], cfg.objective, vocab_size, mask_seed);
                    (i, input, targets)
                })
                .filter(|(_, _, t)| !t.is_empty())
                .collect();
            let masked: usize = prepared.iter().map(|p| p.2.len()).sum();
            let lr = lr_at_step(step, cfg, total);

            let mut loss_sum = 0.0;
            if masked > 0 {
                let mut grads: Vec<Option<Tensor<T>>> = vec![None; ck.model.params().len()];
                for (i, input, targets) in &prepared {
                    let mut rng = seed::rng(cfg.seed, &[seed::stream::DROPOUT, step, *i as u64]);
                    let mut g = Graph::new(ck.model.params());
                    let loss = ck.model.loss(&mut g, input, targets, Some(masked as f64), Some(&mut rng))?;
                    loss_sum += g.scalar(loss).to_f64();
                    for (acc, gi) in grads.iter_mut().zip(g.backward(loss)) {
                        match (acc.as_mut(), gi) {
                            (Some(a), Some(b)) => a.add_assign(&b),
                            (None, Some(b)) => *acc = Some(b),
                            _ => {}
                        }
                    }
                }
                let bad_grad = grads
                    .iter()
                    .position(|g| g.as_ref().is_some_and(|g| !g.all_finite()));
                if !loss_sum.is_finite() || bad_grad.is_some() {
                    let what = match bad_grad {
                        _ if !loss_sum.is_finite() => format!("loss {loss_sum}"),
                        Some(p) => format!("non-finite gradient for {}", ck.model.specs()[p].name),
                        None => unreachable!(),
                    };
                    let mut last = Checkpoint::new(ck.model.cast::<f64>(), ck.vocab_hash.clone());
                    last.step = ck.step;
                    last.metadata = ck.metadata.clone();
                    return Err(TrainError::Diverged {
                        step,
                        what,
                        last_good: Box::new(last),
                    });
                }
                opt.step = step;
                let decay: Vec<bool> = ck.model.specs().iter().map(|s| s.decay).collect();
                for (p, grad) in grads.into_iter().enumerate() {
                    let grad = grad.unwrap_or_else(|| Tensor::zeros(ck.model.params()[p].shape()));
                    let h = AdamStep {
                        lr,
                        beta1: cfg.beta1,
                        beta2: cfg.beta2,
                        eps: cfg.eps,
                        weight_decay: if decay[p] { cfg.weight_decay } else { 0.0 },
                    };
                    adam_update(&mut ck.model.params_mut()[p], &grad, &mut opt.m[p], &mut opt.v[p], step, &h);
                }
            }
            ck.step = step;
            log.steps.push(StepRecord {
                step,
                lr,
                loss: loss_sum,
                masked_tokens: masked,
                epoch,
            });
            if masked > 0 {
                epoch_losses.push(loss_sum);
            }

            if ck.step % spe == 0 {
                let mean_loss = if epoch_losses.is_empty() {
                    f64::NAN
                } else {
                    epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64
                };
                epoch_losses.clear();
                let val_perplexity = self.validation_perplexity(&ck.model)?;
                log::info!(
                    "epoch {epoch} step {} loss {mean_loss:.4} val ppl {}",
                    ck.step,
                    val_perplexity.map_or("-".into(), |p| format!("{p:.4}"))
                );
                log.epochs.push(EpochRecord {
                    epoch,
                    mean_loss,
                    val_perplexity,
                });
            }
        }
        opt.step = ck.step;
        ck.optimizer = Some(opt);
        ck.metadata.insert("objective".into(), cfg.objective.name().into());
        ck.metadata.insert("train_seed".into(), cfg.seed.to_string());
        ck.metadata.insert("total_steps".into(), total.to_string());
        Ok(TrainOutcome { checkpoint: ck, log })
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut seed::rng(self.config.seed, &[seed::stream::SHUFFLE, epoch as u64]));
        order
    }

    /// Perplexity on the validation set with a fixed masking seed; `None`
    /// when there is nothing to score.
    pub fn validation_perplexity<T: Real>(&self, model: &Model<T>) -> Result<Option<f64>, TrainError> {
        let vocab_size = model.config().vocab_size;
        let instances: Vec<(Vec<u32>, Vec<(usize, u32)>)> = self
            .valid
            .iter()
            .enumerate()
            .map(|(i, enc)| {
                let s = seed::derive(self.config.seed, &[seed::stream::VALIDATION, i as u64]);
                make_instance(enc, self.config.objective, vocab_size, s)
            })
            .filter(|(_, t)| !t.is_empty())
            .collect();
        if instances.is_empty() {
            return Ok(None);
        }
        Ok(Some(eval::perplexity(model, &instances)?))
    }
}

fn check_vocab<T: Real>(ck: &Checkpoint<T>, vocab: &BpeVocab) -> Result<(), TrainError> {
    let expected = vocab.hash();
    if ck.vocab_hash != expected {
        return Err(TrainError::VocabMismatch {
            expected,
            found: ck.vocab_hash.clone(),
        });
    }
    if ck.model.config().vocab_size != vocab.size() {
        return Err(TrainError::Config(format!(
            "model vocabulary {} differs from tokenizer vocabulary {}",
            ck.model.config().vocab_size,
            vocab.size()
        )));
    }
    Ok(())
}

/// Encodings of the functions of one split.
pub fn encode_split(
    vocab: &BpeVocab,
    functions: &[CanonicalFunction],
    split: crate::corpus::Split,
    max_seq: usize,
) -> Vec<Encoding> {
    functions
        .iter()
        .filter(|f| f.split == split)
        .map(|f| encode_function(vocab, f, max_seq))
        .collect()
}

/// Masked-LM pre-training from `init` (usually a fresh model).
pub fn pretrain<T: Real>(
    init: Checkpoint<T>,
    vocab: &BpeVocab,
    train: &[Encoding],
    valid: &[Encoding],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    if !cfg.objective.is_pretraining() {
        return Err(TrainError::Config("pretraining needs the mlm or mlm_ww objective".into()));
    }
    check_vocab(&init, vocab)?;
    Trainer::new(cfg, train, valid).run(init)
}

/// Constrained-MLM finetuning. Instances without any variable occurrence
/// are dropped; the optimizer starts fresh.
pub fn finetune<T: Real>(
    mut init: Checkpoint<T>,
    vocab: &BpeVocab,
    train: &[Encoding],
    valid: &[Encoding],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    if cfg.objective != Objective::Cmlm {
        return Err(TrainError::Config("finetuning needs the cmlm objective".into()));
    }
    check_vocab(&init, vocab)?;
    let has_slots = |e: &&Encoding| e.slot_token_spans.iter().any(|s| !s.is_empty());
    let train: Vec<Encoding> = train.iter().filter(has_slots).cloned().collect();
    let valid: Vec<Encoding> = valid.iter().filter(has_slots).cloned().collect();
    if let Some(s) = init.metadata.get("objective").cloned().filter(|s| s != Objective::Cmlm.name()) {
        init.metadata.insert("pretrain_objective".into(), s);
    }
    if init.metadata.get("objective").map(String::as_str) != Some(Objective::Cmlm.name()) {
        init.step = 0;
        init.optimizer = None;
    }
    Trainer::new(cfg, &train, &valid).run(init)
}

#[cfg(test)]
mod tests;
