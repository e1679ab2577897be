//! Optimisation of the edit objective.
//!
//! Each pair contributes the teacher-forced cross-entropy of x given x′
//! and a posterior edit vector sampled through the reparameterised vMF;
//! the KL term is the constant [`kl_term`]. Updates use Adam with an
//! inverse-square-root warmup schedule and global-norm gradient clipping.
//!
//! Pair `i` of step `s` draws all its randomness from
//! `derived_rng(seed, s, i)`, and per-pair gradients are summed in batch
//! order, so results do not depend on the thread count.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Vocab};
use crate::editvae::{kl_term, VmfNoise};
use crate::error::{Error, Result};
use crate::pairmine::SentencePair;
use crate::seqmodel::{derived_rng, Graph, ModelState};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub patience_steps: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub eval_interval: usize,
    /// Fraction of each batch made of identity pairs (x, x).
    pub identity_rate: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Validation pairs decoded for the BLEU column of the history.
    pub bleu_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            warmup_steps: 100,
            patience_steps: 1000,
            max_steps: 2000,
            seed: 0,
            eval_interval: 100,
            identity_rate: 0.1,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            bleu_pairs: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("warmup_steps", self.warmup_steps),
            ("patience_steps", self.patience_steps),
            ("max_steps", self.max_steps),
            ("eval_interval", self.eval_interval),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.patience_steps > self.max_steps {
            return Err(Error::Config(format!(
                "patience_steps ({}) exceeds max_steps ({})",
                self.patience_steps, self.max_steps
            )));
        }
        if !(0.0..1.0).contains(&self.identity_rate) {
            return Err(Error::Config("identity_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Learning rate at 1-based `step`: linear warmup, then decay with
    /// the inverse square root of the step.
    pub fn lr_at(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps as f64;
        self.learning_rate * (s / w).min((w / s).sqrt())
    }
}

/// A pair as token ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedPair {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl EncodedPair {
    pub fn new(vocab: &Vocab, pair: &SentencePair) -> Self {
        Self {
            source: vocab.encode(&pair.source),
            target: vocab.encode(&pair.target),
        }
    }

    pub fn identity(ids: Vec<TokenId>) -> Self {
        Self {
            source: ids.clone(),
            target: ids,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.source == self.target
    }
}

pub fn encode_pairs(vocab: &Vocab, pairs: &[SentencePair]) -> Vec<EncodedPair> {
    pairs.iter().map(|p| EncodedPair::new(vocab, p)).collect()
}

/// Adam moments for every parameter.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &ModelState<T>) -> Self {
        let zeros: Vec<Tensor<T>> = model
            .params
            .tensors()
            .iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn update(&mut self, model: &mut ModelState<T>, grads: &[Option<Tensor<T>>], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let step = T::from_f64(lr * c2.sqrt() / c1);
        let eps = T::from_f64(cfg.adam_eps * c2.sqrt());
        for (i, p) in model.params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w = *w - step * *m / (v.sqrt() + eps);
            }
        }
    }
}

/// Loss and parameter gradients for one pair with a posterior edit.
pub fn pair_gradients<T: Real>(
    model: &ModelState<T>,
    pair: &EncodedPair,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Option<Tensor<T>>>)> {
    let cfg = model.config.edit();
    let noise = VmfNoise::draw(&cfg, rng);
    let dropout_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut g = Graph::training(model, dropout_rng);
    let f = g.edit_summary(&pair.source, &pair.target);
    let z = g.reparameterize(f, &noise, &cfg)?;
    let loss = g.forward_loss(&pair.source, &pair.target, z)?;
    let value = g.tape.value(loss).item().as_f64() + kl_term();
    let mut grads = g.tape.backward(loss)?;
    Ok((value, g.param_grads(&mut grads)))
}

/// Mean loss and summed-then-averaged gradients over a batch.
pub fn batch_gradients<T: Real>(
    model: &ModelState<T>,
    batch: &[EncodedPair],
    seed: u64,
    step: u64,
) -> Result<(f64, Vec<Option<Tensor<T>>>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per_pair: Vec<_> = batch
        .par_iter()
        .enumerate()
        .map(|(i, p)| pair_gradients(model, p, &mut derived_rng(seed, step, i as u64)))
        .collect::<Result<_>>()?;
    let n = batch.len();
    let inv = T::from_f64(1.0 / n as f64);
    let mut total: Vec<Option<Tensor<T>>> = vec![None; model.params.len()];
    let mut loss = 0.0;
    for (l, grads) in per_pair {
        loss += l;
        for (acc, g) in total.iter_mut().zip(grads) {
            match (acc.as_mut(), g) {
                (Some(a), Some(g)) => a.add_assign(&g),
                (None, Some(g)) => *acc = Some(g),
                _ => {}
            }
        }
    }
    for g in total.iter_mut().flatten() {
        g.scale_in_place(inv);
    }
    Ok((loss / n as f64, total))
}

fn clip<T: Real>(grads: &mut [Option<Tensor<T>>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.sum_sq().as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| g.scale_in_place(s));
    }
}

/// Length-bucketed batches in a deterministic order.
#[derive(Clone, Debug)]
pub struct Batcher {
    pairs: Vec<EncodedPair>,
    identities: Vec<Vec<TokenId>>,
    batch_size: usize,
    n_identity: usize,
    rng: ChaCha8Rng,
    queue: Vec<Vec<usize>>,
}

const BUCKET_BATCHES: usize = 8;

impl Batcher {
    pub fn new(pairs: Vec<EncodedPair>, cfg: &TrainConfig) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("training pairs"));
        }
        let mut identities: Vec<Vec<TokenId>> = pairs.iter().map(|p| p.target.clone()).collect();
        identities.sort();
        identities.dedup();
        let n_identity = (cfg.batch_size as f64 * cfg.identity_rate).round() as usize;
        let n_identity = n_identity.min(cfg.batch_size - 1);
        Ok(Self {
            pairs,
            identities,
            batch_size: cfg.batch_size,
            n_identity,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xba7c_4e55),
            queue: Vec::new(),
        })
    }

    fn refill(&mut self) {
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut self.rng);
        let per = self.batch_size - self.n_identity;
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for chunk in order.chunks(per * BUCKET_BATCHES) {
            let mut chunk = chunk.to_vec();
            chunk.sort_by_key(|&i| (self.pairs[i].target.len(), i));
            batches.extend(chunk.chunks(per).map(<[usize]>::to_vec));
        }
        batches.shuffle(&mut self.rng);
        batches.reverse();
        self.queue = batches;
    }

    pub fn next_batch(&mut self) -> Vec<EncodedPair> {
        if self.queue.is_empty() {
            self.refill();
        }
        let idx = self.queue.pop().expect("refilled");
        let mut batch: Vec<EncodedPair> = idx.iter().map(|&i| self.pairs[i].clone()).collect();
        for _ in 0..self.n_identity {
            let k = self.rng.random_range(0..self.identities.len());
            batch.push(EncodedPair::identity(self.identities[k].clone()));
        }
        batch
    }
}

/// Model plus optimiser state.
pub struct Trainer<T: Real> {
    pub model: ModelState<T>,
    pub cfg: TrainConfig,
    opt: Adam<T>,
    step: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: ModelState<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = Adam::new(&model);
        Ok(Self {
            model,
            cfg,
            opt,
            step: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One optimiser update on `batch`; returns the mean batch loss before
    /// the update.
    pub fn train_step(&mut self, batch: &[EncodedPair]) -> Result<f64> {
        let step = self.step + 1;
        let (loss, mut grads) = batch_gradients(&self.model, batch, self.cfg.seed, step)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteInput("training loss"));
        }
        clip(&mut grads, self.cfg.clip_norm);
        let lr = self.cfg.lr_at(step);
        self.opt.update(&mut self.model, &grads, lr, &self.cfg);
        self.step = step;
        Ok(loss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_bleu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxSteps,
}

pub struct FitResult<T: Real> {
    pub best: ModelState<T>,
    pub best_step: u64,
    pub best_valid_loss: f64,
    pub history: Vec<HistoryRow>,
    pub stopped_at: u64,
    pub reason: StopReason,
}

impl<T: Real> FitResult<T> {
    /// History as CSV with header `step,train_loss,valid_loss,valid_bleu`.
    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("step,train_loss,valid_loss,valid_bleu\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.step, r.train_loss, r.valid_loss, r.valid_bleu).unwrap();
    }
    out
}

/// Trains until `patience_steps` pass without a strict improvement of the
/// validation loss, or until `max_steps`. `validate` returns
/// `(loss, bleu)` for the current model.
pub fn fit_with<T: Real>(
    train: Vec<EncodedPair>,
    cfg: TrainConfig,
    model: ModelState<T>,
    mut validate: impl FnMut(&ModelState<T>) -> Result<(f64, f64)>,
) -> Result<FitResult<T>> {
    let mut batcher = Batcher::new(train, &cfg)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut history = Vec::new();
    let mut best: Option<(ModelState<T>, u64, f64)> = None;
    let mut window = (0.0, 0usize);
    let reason = loop {
        let batch = batcher.next_batch();
        let loss = trainer.train_step(&batch)?;
        window.0 += loss;
        window.1 += 1;
        let step = trainer.step();
        let at_cap = step >= cfg.max_steps as u64;
        if step % cfg.eval_interval as u64 == 0 || at_cap {
            let (valid_loss, valid_bleu) = validate(&trainer.model)?;
            history.push(HistoryRow {
                step,
                train_loss: window.0 / window.1 as f64,
                valid_loss,
                valid_bleu,
            });
            window = (0.0, 0);
            let improved = best.as_ref().is_none_or(|(_, _, b)| valid_loss < *b);
            if improved {
                best = Some((trainer.model.clone(), step, valid_loss));
            }
            let best_step = best.as_ref().map_or(step, |b| b.1);
            if step - best_step >= cfg.patience_steps as u64 {
                break StopReason::Patience;
            }
        }
        if at_cap {
            break StopReason::MaxSteps;
        }
    };
    let (best, best_step, best_valid_loss) = best.expect("evaluated at least once");
    Ok(FitResult {
        best,
        best_step,
        best_valid_loss,
        history,
        stopped_at: trainer.step(),
        reason,
    })
}

/// [`fit_with`] using posterior-mode loss and BLEU on `valid`.
pub fn fit<T: Real>(
    train: Vec<EncodedPair>,
    valid: Vec<EncodedPair>,
    cfg: TrainConfig,
    model: ModelState<T>,
) -> Result<FitResult<T>> {
    if valid.is_empty() {
        return Err(Error::EmptyInput("validation pairs"));
    }
    let leaked = valid.iter().filter(|v| train.contains(v)).count();
    if leaked > 0 {
        return Err(Error::SplitLeakage(leaked));
    }
    let seed = cfg.seed;
    let bleu_n = cfg.bleu_pairs.min(valid.len());
    fit_with(train, cfg, model, |m| {
        let loss = crate::evaluator::mean_loss(m, &valid, crate::evaluator::Mode::Posterior, seed)?;
        let bleu = if bleu_n == 0 {
            0.0
        } else {
            crate::evaluator::mean_bleu(m, &valid[..bleu_n], crate::evaluator::Mode::Posterior, seed)?
        };
        Ok((loss, bleu))
    })
}
