//! `sentedit`: mine sentence pairs, train the editor, evaluate it, and use
//! it to augment labeled data.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentedit_core::augmentor::{self, AugmentConfig, Augmenter};
use sentedit_core::corpus::{preprocess, EmbeddingTable, GloveFile, Sentence, Vocab, SPECIALS};
use sentedit_core::downstream::{self, ClassifierConfig, EditAugmenter, ExperimentConfig, FeatureEncoder};
use sentedit_core::evaluator::{self, Mode};
use sentedit_core::pairmine::{self, LshConfig, SentencePair};
use sentedit_core::seqmodel::{checkpoint, ModelState};
use sentedit_core::tensor::Real;
use sentedit_core::trainer::{self, EncodedPair, TrainConfig};
use toml::Value;

#[derive(Parser, Debug)]
#[command(name = "sentedit", version, about = "Sentence editing with latent edit vectors", arg_required_else_help = true)]
struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` TOML file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Find sentence pairs with small Jaccard distance.
    Mine(MineArgs),
    /// Train the editor on mined pairs and write a checkpoint.
    Train(TrainArgs),
    /// Report loss and BLEU on sentence pairs.
    Eval(EvalArgs),
    /// Time greedy generation and training steps.
    Bench(BenchArgs),
    /// Add synthetic edits of every line of a labeled file.
    Augment(AugmentArgs),
    /// Run the downstream classification grid with control arms.
    Experiment(ExperimentArgs),
    /// Print a checkpoint's header and parameter counts.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct MineArgs {
    /// Raw text corpus, one sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Output pairs file (`source<TAB>target<TAB>distance`).
    #[arg(long)]
    out: PathBuf,
    /// Keep pairs with Jaccard distance strictly below this.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// MinHash signature length.
    #[arg(long, default_value_t = 64)]
    hashes: usize,
    /// LSH bands; must divide the signature length.
    #[arg(long, default_value_t = 32)]
    bands: usize,
    /// Work units for hashing and verification.
    #[arg(long, default_value_t = 8)]
    shards: usize,
}

/// Model and training settings; each overrides the config file key of
/// the same name.
#[derive(Args, Debug, Default)]
struct Settings {
    /// Model width.
    #[arg(long)]
    d_model: Option<usize>,
    /// Attention heads per layer.
    #[arg(long)]
    n_heads: Option<usize>,
    /// Encoder layers.
    #[arg(long)]
    n_layers_enc: Option<usize>,
    /// Decoder layers.
    #[arg(long)]
    n_layers_dec: Option<usize>,
    /// Feed-forward hidden width.
    #[arg(long)]
    d_ffn: Option<usize>,
    /// Longest sentence in tokens; longer pairs are skipped.
    #[arg(long)]
    max_len: Option<usize>,
    /// Dropout rate during training.
    #[arg(long)]
    dropout: Option<f64>,
    /// Edit vector width.
    #[arg(long)]
    d_edit: Option<usize>,
    /// vMF concentration of the edit direction.
    #[arg(long)]
    kappa: Option<f64>,
    /// Width of the uniform window around the edit norm.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Upper bound of the edit norm.
    #[arg(long)]
    norm_max: Option<f64>,
    /// Pairs per optimiser step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak Adam learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Linear warmup steps before inverse-square-root decay.
    #[arg(long)]
    warmup_steps: Option<usize>,
    /// Stop after this many steps without a validation improvement.
    #[arg(long)]
    patience_steps: Option<usize>,
    /// Hard cap on optimiser steps.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Steps between validation passes.
    #[arg(long)]
    eval_interval: Option<usize>,
    /// Share of each batch made of identity pairs.
    #[arg(long)]
    identity_rate: Option<f64>,
    /// Global gradient norm cap.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Validation pairs decoded for the BLEU column of the history.
    #[arg(long)]
    bleu_pairs: Option<usize>,
}

impl Settings {
    fn overrides(&self, seed: Option<u64>) -> Vec<(&'static str, Value)> {
        let mut out = Vec::new();
        let mut int = |k, v: Option<usize>| {
            if let Some(v) = v {
                out.push((k, Value::Integer(v as i64)));
            }
        };
        int("d_model", self.d_model);
        int("n_heads", self.n_heads);
        int("n_layers_enc", self.n_layers_enc);
        int("n_layers_dec", self.n_layers_dec);
        int("d_ffn", self.d_ffn);
        int("max_len", self.max_len);
        int("d_edit", self.d_edit);
        int("batch_size", self.batch_size);
        int("warmup_steps", self.warmup_steps);
        int("patience_steps", self.patience_steps);
        int("max_steps", self.max_steps);
        int("eval_interval", self.eval_interval);
        int("bleu_pairs", self.bleu_pairs);
        for (k, v) in [
            ("dropout", self.dropout),
            ("kappa", self.kappa),
            ("epsilon", self.epsilon),
            ("norm_max", self.norm_max),
            ("learning_rate", self.learning_rate),
            ("identity_rate", self.identity_rate),
            ("clip_norm", self.clip_norm),
        ] {
            if let Some(v) = v {
                out.push((k, Value::Float(v)));
            }
        }
        if let Some(s) = seed {
            out.push(("seed", Value::Integer(s as i64)));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training pairs from `mine`.
    #[arg(long)]
    pairs: PathBuf,
    /// Validation pairs; by default a share of `--pairs` is held out.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Share of `--pairs` held out when `--valid` is absent.
    #[arg(long, default_value_t = 0.05)]
    valid_fraction: f64,
    /// GloVe-format word vectors.
    #[arg(long)]
    emb: PathBuf,
    /// Output directory for `model.ckpt` and `history.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Arithmetic precision of training.
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Posterior,
    Prior,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Pairs file to score.
    #[arg(long)]
    pairs: PathBuf,
    /// Edit vectors from the posterior (reconstruction) or the prior.
    #[arg(long, value_enum, default_value_t = ModeArg::Posterior)]
    mode: ModeArg,
    /// Word vectors for words the model has not seen.
    #[arg(long)]
    emb: Option<PathBuf>,
    /// Write the CSV report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Source sentences; by default sentences are built from the vocabulary.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Sentences to time.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Training steps to time.
    #[arg(long, default_value_t = 5)]
    train_steps: usize,
    /// Write the CSV report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Labeled input (`label<TAB>text`).
    #[arg(long = "in")]
    input: PathBuf,
    /// Labeled output with origin flags.
    #[arg(long)]
    out: PathBuf,
    /// Synthetic sentences per input line.
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Sampling temperature; 0 decodes greedily.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Word vectors for words the model has not seen.
    #[arg(long)]
    emb: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Labeled data (`label<TAB>text`).
    #[arg(long)]
    data: PathBuf,
    /// Separate labeled test set; by default a share of `--data` is held out.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Word vectors for classifier features and unseen words.
    #[arg(long)]
    emb: Option<PathBuf>,
    /// Training-set fractions, ascending.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,1.0")]
    fractions: Vec<f64>,
    /// Synthetic sentences per original.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    n: Vec<usize>,
    /// Classifier seeds per cell.
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Held-out share when `--test` is absent.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Classifier hidden width.
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Classifier full-batch epochs.
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    /// Classifier learning rate.
    #[arg(long, default_value_t = 0.02)]
    classifier_lr: f64,
    /// Sampling temperature of the editor; 0 decodes greedily.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Directory for `cells.csv`, `summary.csv`, `controls.csv`, `table.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Checkpoint file.
    checkpoint: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let seed = cli.seed;
    let file = cli.config.as_deref();
    match cli.command {
        Command::Mine(a) => mine(a, seed.unwrap_or(0)),
        Command::Train(a) => train(a, seed, file),
        Command::Eval(a) => eval(a, seed.unwrap_or(0)),
        Command::Bench(a) => bench(a, seed.unwrap_or(0)),
        Command::Augment(a) => augment(a, seed.unwrap_or(0)),
        Command::Experiment(a) => experiment(a, seed.unwrap_or(0)),
        Command::Inspect(a) => inspect(a),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<Sentence>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| preprocess(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn read_glove(path: Option<&Path>) -> Result<Option<GloveFile>> {
    path.map(|p| GloveFile::read(p).with_context(|| format!("reading word vectors {}", p.display())))
        .transpose()
}

fn load_model(path: &Path) -> Result<ModelState<f32>> {
    if !path.exists() {
        bail!("no checkpoint at {}", path.display());
    }
    let (model, _) = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(model)
}

fn mine(a: MineArgs, seed: u64) -> Result<()> {
    if a.bands == 0 || a.hashes % a.bands != 0 {
        bail!("--bands ({}) must divide --hashes ({})", a.bands, a.hashes);
    }
    let cfg = LshConfig {
        threshold: a.threshold,
        num_hashes: a.hashes,
        bands: a.bands,
        rows: a.hashes / a.bands,
        seed,
        shards: a.shards,
    };
    let corpus = read_corpus(&a.input)?;
    let pairs = pairmine::mine_pairs(&corpus, &cfg)?;
    pairmine::write_pairs(&a.out, &pairs)?;
    println!(
        "{} sentences, {} ordered pairs below distance {} written to {}",
        corpus.len(),
        pairs.len(),
        a.threshold,
        a.out.display()
    );
    Ok(())
}

/// Holds out `fraction` of the pairs (at least one); training keeps every
/// pair not equal to a held-out one.
fn holdout(pairs: Vec<SentencePair>, fraction: f64, seed: u64) -> Result<(Vec<SentencePair>, Vec<SentencePair>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        bail!("--valid-fraction must lie in (0, 1)");
    }
    if pairs.len() < 2 {
        bail!("need at least two pairs to hold some out");
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7a11d));
    let k = ((pairs.len() as f64 * fraction).round() as usize).clamp(1, pairs.len() - 1);
    let mut held: Vec<usize> = idx[..k].to_vec();
    held.sort_unstable();
    let valid: Vec<SentencePair> = held.iter().map(|&i| pairs[i].clone()).collect();
    let train = pairs.into_iter().filter(|p| !valid.contains(p)).collect();
    Ok((train, valid))
}

fn train(a: TrainArgs, seed: Option<u64>, file: Option<&Path>) -> Result<()> {
    let (mcfg, tcfg) = config::resolve(file, a.settings.overrides(seed))?;
    let pairs = pairmine::read_pairs(&a.pairs)?;
    let (train_pairs, valid_pairs) = match &a.valid {
        Some(v) => (pairs, pairmine::read_pairs(v)?),
        None => holdout(pairs, a.valid_fraction, tcfg.seed)?,
    };
    let fits = |p: &SentencePair| p.source.len() <= mcfg.max_len && p.target.len() <= mcfg.max_len;
    let skipped = train_pairs.iter().chain(&valid_pairs).filter(|p| !fits(p)).count();
    let train_pairs: Vec<SentencePair> = train_pairs.into_iter().filter(fits).collect();
    let valid_pairs: Vec<SentencePair> = valid_pairs.into_iter().filter(fits).collect();
    if train_pairs.is_empty() || valid_pairs.is_empty() {
        bail!("no training or validation pairs within max_len {}", mcfg.max_len);
    }
    let vocab = Vocab::build(
        train_pairs
            .iter()
            .chain(&valid_pairs)
            .flat_map(|p| [&p.source, &p.target]),
    );
    let glove = GloveFile::read(&a.emb).with_context(|| format!("reading word vectors {}", a.emb.display()))?;
    let table = EmbeddingTable::from_glove(&glove, vocab.clone(), tcfg.seed);
    let train_enc = trainer::encode_pairs(&vocab, &train_pairs);
    let valid_enc = trainer::encode_pairs(&vocab, &valid_pairs);
    eprintln!(
        "{} training pairs, {} validation pairs, {} skipped as too long, vocabulary {}",
        train_enc.len(),
        valid_enc.len(),
        skipped,
        vocab.len()
    );
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    match a.precision {
        Precision::F32 => fit_and_save::<f32>(mcfg, tcfg, table, train_enc, valid_enc, &a.out),
        Precision::F64 => fit_and_save::<f64>(mcfg, tcfg, table, train_enc, valid_enc, &a.out),
    }
}

fn fit_and_save<T: Real>(
    mcfg: sentedit_core::seqmodel::ModelConfig,
    tcfg: TrainConfig,
    table: EmbeddingTable,
    train: Vec<EncodedPair>,
    valid: Vec<EncodedPair>,
    out: &Path,
) -> Result<()> {
    let model = ModelState::<T>::new(mcfg, table, tcfg.seed)?;
    let result = trainer::fit(train, valid, tcfg, model)?;
    let ckpt = out.join("model.ckpt");
    checkpoint::save(&ckpt, &result.best, result.best_step)?;
    let history = out.join("history.csv");
    fs::write(&history, result.history_csv()).with_context(|| format!("writing {}", history.display()))?;
    println!(
        "stopped at step {} ({:?}); best validation loss {:.4} at step {}; wrote {} and {}",
        result.stopped_at,
        result.reason,
        result.best_valid_loss,
        result.best_step,
        ckpt.display(),
        history.display()
    );
    Ok(())
}

/// Injects unseen words of `sentences` and encodes them with the grown
/// vocabulary.
fn encode_for(model: &mut ModelState<f32>, pairs: &[SentencePair], glove: Option<&GloveFile>) -> Result<Vec<EncodedPair>> {
    let max = model.config.max_len;
    let words = pairs.iter().flat_map(|p| p.source.surfaces().chain(p.target.surfaces()));
    model.inject_missing(words, glove)?;
    let kept: Vec<SentencePair> = pairs
        .iter()
        .filter(|p| p.source.len() <= max && p.target.len() <= max)
        .cloned()
        .collect();
    if kept.len() < pairs.len() {
        eprintln!("skipped {} pairs longer than {max} tokens", pairs.len() - kept.len());
    }
    Ok(trainer::encode_pairs(model.embeddings().vocab(), &kept))
}

fn write_or_print(out: Option<&Path>, csv: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn eval(a: EvalArgs, seed: u64) -> Result<()> {
    let mut model = load_model(&a.model)?;
    let glove = read_glove(a.emb.as_deref())?;
    let pairs = pairmine::read_pairs(&a.pairs)?;
    let enc = encode_for(&mut model, &pairs, glove.as_ref())?;
    let mode = match a.mode {
        ModeArg::Posterior => Mode::Posterior,
        ModeArg::Prior => Mode::Prior,
    };
    let report = evaluator::evaluate(&model, &enc, mode, seed)?;
    write_or_print(a.out.as_deref(), &report.csv())?;
    eprintln!("{}", report.summary());
    Ok(())
}

/// Ten-word sources cycling through the model's vocabulary.
fn vocabulary_sources(model: &ModelState<f32>) -> Vec<EncodedPair> {
    let words: Vec<usize> = (SPECIALS.len()..model.vocab_size()).collect();
    let len = 10.min(model.config.max_len).min(words.len());
    words
        .chunks(len.max(1))
        .filter(|c| c.len() == len)
        .map(|c| EncodedPair::identity(c.to_vec()))
        .collect()
}

fn bench(a: BenchArgs, seed: u64) -> Result<()> {
    let mut model = load_model(&a.model)?;
    let pairs = match &a.pairs {
        Some(p) => encode_for(&mut model, &pairmine::read_pairs(p)?, None)?,
        None => vocabulary_sources(&model),
    };
    if pairs.is_empty() {
        bail!("no source sentences to time");
    }
    let report = evaluator::bench(&model, &pairs, a.reps, a.train_steps, seed)?;
    write_or_print(a.out.as_deref(), &report.csv())?;
    eprintln!("{}", report.summary());
    Ok(())
}

fn augment(a: AugmentArgs, seed: u64) -> Result<()> {
    let glove = read_glove(a.emb.as_deref())?;
    let mut aug = Augmenter::<f32>::from_checkpoint(&a.model, glove)?;
    let lines = augmentor::read_labeled(&a.input)?;
    let cfg = AugmentConfig {
        temperature: a.temperature,
        seed,
    };
    let (out, summary) = augmentor::augment_dataset(&lines, a.n, &mut aug, &cfg)?;
    augmentor::write_labeled(&a.out, &out)?;
    println!("{summary}");
    Ok(())
}

fn experiment(a: ExperimentArgs, seed: u64) -> Result<()> {
    let glove = read_glove(a.emb.as_deref())?;
    let data = downstream::to_sentences(&augmentor::read_labeled(&a.data)?)?;
    let test = match &a.test {
        Some(t) => Some(downstream::to_sentences(&augmentor::read_labeled(t)?)?),
        None => None,
    };
    let mut editor = Augmenter::<f32>::from_checkpoint(&a.model, glove.clone())?;
    let injected = editor.prepare(data.iter().chain(test.iter().flatten()).map(|l| &l.sentence))?;
    let dim = editor.model().embeddings().dim();
    let encoder = FeatureEncoder::new(glove, dim, seed);
    let augmenter = EditAugmenter {
        augmenter: editor,
        cfg: AugmentConfig {
            temperature: a.temperature,
            seed,
        },
    };
    let cfg = ExperimentConfig {
        fractions: a.fractions,
        n_augment: a.n,
        n_seeds: a.seeds,
        classifier: ClassifierConfig {
            hidden: a.hidden,
            epochs: a.epochs,
            learning_rate: a.classifier_lr,
        },
        test_fraction: a.test_fraction,
        seed,
    };
    let results = downstream::run_experiment(&data, test.as_deref(), &augmenter, &encoder, &cfg)?;
    let table = results.table();
    print!("{table}");
    println!("{injected} unseen words injected into the editor");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, body) in [
            ("cells.csv", results.cells_csv()),
            ("summary.csv", results.summary_csv()),
            ("controls.csv", results.controls_csv()),
            ("table.txt", table),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let info = checkpoint::inspect(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let h = &info.header;
    println!("format version: {}", info.version);
    println!("precision: {}", h.precision);
    println!("step: {}", h.step);
    println!("[config]");
    print!("{}", toml::to_string(&h.config)?);
    println!("[embedding]");
    println!("vocabulary: {} words", h.embedding.vocab.len());
    println!("dimension: {}", h.embedding.dim);
    println!("frozen tensors: {}", h.embedding.frozen.join(", "));
    println!("[parameters]");
    println!("trainable: {}", info.trainable_count());
    println!("frozen: {}", info.frozen_count());
    println!("tensors: {}", info.tensors.len());
    for (name, shape) in &info.tensors {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        println!("  {name} [{}]", dims.join(", "));
    }
    Ok(())
}
