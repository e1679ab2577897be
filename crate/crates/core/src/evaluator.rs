//! BLEU, loss and latency measurements.
//!
//! BLEU here is sentence-level: clipped n-gram precisions for n = 1..4 with
//! uniform weights and the usual brevity penalty. Orders 2-4 use add-one
//! smoothing, `(matches + 1) / (total + 1)`; unigram precision is not
//! smoothed, so a candidate sharing no word with the reference scores 0.
//! The score is not symmetric in its arguments.
//!
//! Losses are mean per-token negative log-likelihoods (natural log),
//! including the end-of-sentence token.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;
use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::{Sentence, TokenId};
use crate::editvae::{compose, edit_summary, prior_sample, EditVector, VmfNoise};
use crate::error::{Error, Result};
use crate::seqmodel::{derived_rng, generate_sentence, teacher_forcing, DecodeOptions, Graph, ModelState};
use crate::tensor::Real;
use crate::trainer::{EncodedPair, TrainConfig, Trainer};

const MAX_ORDER: usize = 4;
const EVAL_SALT: u64 = 0xe7a1_0000_0000_0001;

/// BLEU of `candidate` against a single `reference`.
pub fn bleu(candidate: &Sentence, reference: &Sentence) -> Result<f64> {
    let c: Vec<&str> = candidate.surfaces().collect();
    let r: Vec<&str> = reference.surfaces().collect();
    bleu_tokens(&c, &r)
}

/// BLEU over arbitrary token sequences.
pub fn bleu_tokens<W: Eq + Hash>(candidate: &[W], reference: &[W]) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::EmptyInput("bleu"));
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let cand = ngrams(candidate, n);
        let refs = ngrams(reference, n);
        let total: usize = cand.values().sum();
        let matches: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if n == 1 {
            if matches == 0 {
                return Ok(0.0);
            }
            matches as f64 / total as f64
        } else {
            (matches + 1) as f64 / (total + 1) as f64
        };
        log_sum += p.ln() / MAX_ORDER as f64;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(bp * log_sum.exp())
}

fn ngrams<W: Eq + Hash>(tokens: &[W], n: usize) -> HashMap<&[W], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Where evaluation edit vectors come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// z ~ q(z | x′, x): measures reconstruction of x.
    Posterior,
    /// z ~ p(z): measures what an arbitrary edit does.
    Prior,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(Mode::Posterior),
            "prior" => Ok(Mode::Prior),
            other => Err(Error::Config(format!("unknown mode {other:?}; use posterior or prior"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Posterior => "posterior",
            Mode::Prior => "prior",
        })
    }
}

/// The edit vector used for pair `index` during evaluation. Deterministic
/// in `(seed, index)`.
pub fn eval_edit<T: Real>(model: &ModelState<T>, pair: &EncodedPair, mode: Mode, seed: u64, index: usize) -> Result<EditVector> {
    let cfg = model.config.edit();
    let mut rng = derived_rng(seed ^ EVAL_SALT, index as u64, 0);
    match mode {
        Mode::Posterior => {
            let f = edit_summary(model, &pair.source, &pair.target);
            compose(&f, &VmfNoise::draw(&cfg, &mut rng), &cfg)
        }
        Mode::Prior => Ok(prior_sample(&cfg, &mut rng)),
    }
}

/// Teacher-forced mean token loss of one pair under a fixed `z`.
pub fn pair_loss<T: Real>(model: &ModelState<T>, pair: &EncodedPair, z: &EditVector) -> Result<f64> {
    let mut g = Graph::new(model);
    let zv = g.edit_constant(z);
    let loss = g.forward_loss(&pair.source, &pair.target, zv)?;
    Ok(g.tape.value(loss).item().as_f64())
}

/// Maximum generated length for a source of `src_len` tokens.
pub fn max_output_len(src_len: usize) -> usize {
    src_len * 3 / 2 + 5
}

/// Greedy decode of the pair's source under `z`.
pub fn decode_greedy<T: Real>(model: &ModelState<T>, source: &[TokenId], z: &EditVector) -> Result<Vec<TokenId>> {
    let opts = DecodeOptions {
        temperature: 0.0,
        max_len: max_output_len(source.len()),
    };
    let mut unused = derived_rng(0, 0, 0);
    generate_sentence(model, source, z, opts, &mut unused)
}

fn check_nonempty(pairs: &[EncodedPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("test pairs"));
    }
    Ok(())
}

pub fn mean_loss<T: Real>(model: &ModelState<T>, pairs: &[EncodedPair], mode: Mode, seed: u64) -> Result<f64> {
    check_nonempty(pairs)?;
    let losses: Vec<f64> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| pair_loss(model, p, &eval_edit(model, p, mode, seed, i)?))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub fn mean_bleu<T: Real>(model: &ModelState<T>, pairs: &[EncodedPair], mode: Mode, seed: u64) -> Result<f64> {
    check_nonempty(pairs)?;
    let scores: Vec<f64> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let z = eval_edit(model, p, mode, seed, i)?;
            let out = decode_greedy(model, &p.source, &z)?;
            if out.is_empty() {
                return Ok(0.0);
            }
            bleu_tokens(&out, &p.target)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Fraction of target tokens (including end-of-sentence) that are the
/// argmax of the teacher-forced logits.
pub fn teacher_forced_accuracy<T: Real>(
    model: &ModelState<T>,
    pairs: &[EncodedPair],
    mode: Mode,
    seed: u64,
) -> Result<f64> {
    check_nonempty(pairs)?;
    let counts: Vec<(usize, usize)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let z = eval_edit(model, p, mode, seed, i)?;
            let mut g = Graph::new(model);
            let zv = g.edit_constant(&z);
            let memory = g.encode(&p.source)?;
            let (prefix, targets) = teacher_forcing(&p.target);
            let out = g.decode(memory, &p.source, &prefix)?;
            let logits = g.generate(out, zv);
            let logits = g.tape.value(logits);
            let mut hit = 0;
            let mut total = 0;
            for (r, t) in targets.iter().enumerate() {
                let Some(t) = *t else { continue };
                let row = logits.row(r);
                let best = (0..row.len())
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(std::cmp::Ordering::Equal))
                    .unwrap_or(0);
                hit += usize::from(best == t);
                total += 1;
            }
            Ok((hit, total))
        })
        .collect::<Result<_>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(hit as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: Mode,
    pub count: usize,
    pub mean_loss: f64,
    pub mean_bleu: f64,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        format!(
            "mode,count,mean_loss,mean_bleu\n{},{},{},{}\n",
            self.mode, self.count, self.mean_loss, self.mean_bleu
        )
    }

    pub fn summary(&self) -> String {
        format!(
            "{} mode over {} pairs: mean per-token loss {:.4}, mean BLEU {:.4}",
            self.mode, self.count, self.mean_loss, self.mean_bleu
        )
    }
}

/// Mean loss and mean BLEU over `pairs`. An empty set is an error.
pub fn evaluate<T: Real>(model: &ModelState<T>, pairs: &[EncodedPair], mode: Mode, seed: u64) -> Result<EvalReport> {
    Ok(EvalReport {
        mode,
        count: pairs.len(),
        mean_loss: mean_loss(model, pairs, mode, seed)?,
        mean_bleu: mean_bleu(model, pairs, mode, seed)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub reps: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub train_steps: usize,
    pub train_steps_per_sec: f64,
    pub batch_size: usize,
    pub machine: String,
}

/// Published reference: 31.3 ms per sample for the recurrent editor and
/// 6.46 ms for the transformer editor, on a GPU. Reported, never compared.
pub const REFERENCE_CONTEXT: &str =
    "reference GPU timings: 31.3 ms (recurrent editor) vs 6.46 ms (transformer editor) per sample, ratio about 4.8x";

impl BenchReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in [
            ("reps", self.reps as f64),
            ("latency_mean_ms", self.mean_ms),
            ("latency_median_ms", self.median_ms),
            ("latency_p95_ms", self.p95_ms),
            ("train_steps", self.train_steps as f64),
            ("train_batch_size", self.batch_size as f64),
            ("train_steps_per_sec", self.train_steps_per_sec),
        ] {
            writeln!(s, "{k},{v}").unwrap();
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "machine: {}\ninference latency over {} sentences: mean {:.3} ms, median {:.3} ms, p95 {:.3} ms\n\
             training throughput: {:.2} steps/s (batch {}, {} steps)\ncontext: {}",
            self.machine,
            self.reps,
            self.mean_ms,
            self.median_ms,
            self.p95_ms,
            self.train_steps_per_sec,
            self.batch_size,
            self.train_steps,
            REFERENCE_CONTEXT
        )
    }
}

pub fn machine_description(precision: &str) -> String {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}, {} hardware threads, {} worker threads, {} precision",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cores,
        rayon::current_num_threads(),
        precision
    )
}

/// Value at quantile `q` of sorted data, by linear interpolation.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Times greedy generation under prior edits, one sentence per repetition
/// (cycling through `pairs`), then `train_steps` optimiser steps on a copy
/// of the model. Only model compute is timed.
pub fn bench<T: Real>(
    model: &ModelState<T>,
    pairs: &[EncodedPair],
    reps: usize,
    train_steps: usize,
    seed: u64,
) -> Result<BenchReport> {
    if reps == 0 {
        return Err(Error::Config("bench needs at least one repetition".into()));
    }
    check_nonempty(pairs)?;
    let cfg = model.config.edit();
    let warm = prior_sample(&cfg, &mut derived_rng(seed, u64::MAX, 0));
    decode_greedy(model, &pairs[0].source, &warm)?;

    let mut times = Vec::with_capacity(reps);
    for r in 0..reps {
        let p = &pairs[r % pairs.len()];
        let z = prior_sample(&cfg, &mut derived_rng(seed, r as u64, 1));
        let start = Instant::now();
        decode_greedy(model, &p.source, &z)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / reps as f64;
    times.sort_by(f64::total_cmp);

    let tcfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let batch_size = tcfg.batch_size.min(pairs.len());
    let mut trainer = Trainer::new(model.clone(), tcfg)?;
    let batch: Vec<EncodedPair> = pairs.iter().take(batch_size).cloned().collect();
    let train_steps_per_sec = if train_steps == 0 {
        0.0
    } else {
        let start = Instant::now();
        for _ in 0..train_steps {
            trainer.train_step(&batch)?;
        }
        train_steps as f64 / start.elapsed().as_secs_f64()
    };

    Ok(BenchReport {
        reps,
        mean_ms,
        median_ms: quantile(&times, 0.5),
        p95_ms: quantile(&times, 0.95),
        train_steps,
        train_steps_per_sec,
        batch_size,
        machine: machine_description(T::NAME),
    })
}
