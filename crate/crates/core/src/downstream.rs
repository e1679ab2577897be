//! Downstream classification harness.
//!
//! A small bag-of-embeddings classifier (mean word vector, one ReLU hidden
//! layer, softmax) is trained on a fraction of the training split, with and
//! without synthetic sentences, over several seeds. Two control arms check
//! the harness itself: "duplicate" trains on every original twice, and
//! "identity" pushes exact copies through the augmentation path. They
//! should agree within noise.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augmentor::{AugmentConfig, Augmenter, LabeledLine};
use crate::corpus::{fallback_vector, preprocess, GloveFile, Sentence};
use crate::error::{Error, Result};
use crate::seqmodel::{derived_rng, Tape};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 150,
            learning_rate: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub fractions: Vec<f64>,
    pub n_augment: Vec<usize>,
    pub n_seeds: usize,
    pub classifier: ClassifierConfig,
    /// Share of the data held out when no separate test file is given.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.2, 0.5, 1.0],
            n_augment: vec![1, 2],
            n_seeds: 10,
            classifier: ClassifierConfig::default(),
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Config("no fractions given".into()));
        }
        if self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config("fractions must lie in (0, 1]".into()));
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("fractions must be strictly ascending".into()));
        }
        if self.n_augment.is_empty() || self.n_augment.contains(&0) {
            return Err(Error::Config("augmentation counts must be positive".into()));
        }
        if self.n_seeds < 2 {
            return Err(Error::Config("at least two seeds are needed for a standard deviation".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if self.classifier.hidden == 0 || self.classifier.epochs == 0 {
            return Err(Error::Config("classifier needs a hidden width and epochs".into()));
        }
        Ok(())
    }
}

/// Sentence features: the mean of the word vectors.
#[derive(Clone, Debug)]
pub struct FeatureEncoder {
    glove: Option<GloveFile>,
    dim: usize,
    norm: f32,
    seed: u64,
}

impl FeatureEncoder {
    /// Words found in `glove` use its vectors; others get seeded fallback
    /// vectors of the file's mean norm. Without a file every word is a
    /// fallback vector of width `dim`.
    pub fn new(glove: Option<GloveFile>, dim: usize, seed: u64) -> Self {
        let (dim, norm) = match &glove {
            Some(g) => (g.dim, g.mean_norm),
            None => (dim, 1.0),
        };
        Self { glove, dim, norm, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, s: &Sentence) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut n = 0usize;
        for w in s.surfaces() {
            let v = match self.glove.as_ref().and_then(|g| g.vectors.get(w)) {
                Some(v) => v.clone(),
                None => fallback_vector(w, self.seed, self.dim, self.norm),
            };
            out.iter_mut().zip(&v).for_each(|(o, &x)| *o += x as f64);
            n += 1;
        }
        if n > 0 {
            out.iter_mut().for_each(|o| *o /= n as f64);
        }
        out
    }
}

/// A labeled example ready for the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub label: String,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Classifier {
    labels: Vec<String>,
    w1: Tensor<f64>,
    b1: Tensor<f64>,
    w2: Tensor<f64>,
    b2: Tensor<f64>,
}

impl Classifier {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn predict(&self, features: &[f64]) -> &str {
        let x = Tensor::row_vector(features.to_vec());
        let h = x.matmul(&self.w1);
        let h = Tensor::from_vec(
            1,
            h.cols(),
            h.data().iter().zip(self.b1.data()).map(|(a, b)| (a + b).max(0.0)).collect(),
        );
        let o = h.matmul(&self.w2);
        let best = o
            .data()
            .iter()
            .zip(self.b2.data())
            .map(|(a, b)| a + b)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        &self.labels[best]
    }

    /// Fraction of `examples` classified correctly; labels never seen in
    /// training count as errors.
    pub fn accuracy(&self, examples: &[Example]) -> f64 {
        if examples.is_empty() {
            return f64::NAN;
        }
        let hits = examples
            .iter()
            .filter(|e| self.predict(&e.features) == e.label)
            .count();
        hits as f64 / examples.len() as f64
    }
}

/// Full-batch Adam on the mean cross-entropy. Deterministic in `seed`.
pub fn train_classifier(train: &[Example], cfg: &ClassifierConfig, seed: u64) -> Result<Classifier> {
    let labels: Vec<String> = train
        .iter()
        .map(|e| e.label.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.len() < 2 {
        return Err(Error::DegenerateLabels(labels.len()));
    }
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let d = train[0].features.len();
    let (h, k, n) = (cfg.hidden, labels.len(), train.len());
    let mut x = Vec::with_capacity(n * d);
    for e in train {
        if e.features.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                actual: e.features.len(),
            });
        }
        x.extend_from_slice(&e.features);
    }
    let x = Tensor::from_vec(n, d, x);
    let targets: Vec<Option<usize>> = train.iter().map(|e| Some(index[e.label.as_str()])).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = |r: usize, c: usize| {
        use rand::Rng;
        let lim = (6.0 / (r + c) as f64).sqrt();
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-lim..lim)).collect())
    };
    let mut params = [init(d, h), Tensor::zeros(1, h), init(h, k), Tensor::zeros(1, k)];
    let mut m: Vec<Tensor<f64>> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
    let mut v = m.clone();
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    for t in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let xs = tape.constant(x.clone());
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let hid = tape.matmul(xs, vars[0]);
        let hid = tape.add_row(hid, vars[1]);
        let hid = tape.relu(hid);
        let out = tape.matmul(hid, vars[2]);
        let out = tape.add_row(out, vars[3]);
        let loss = tape.cross_entropy(out, &targets);
        let mut grads = tape.backward(loss)?;
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads.take(vars[i]).expect("parameter used");
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m[i].data_mut()).zip(v[i].data_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
    let [w1, b1, w2, b2] = params;
    Ok(Classifier { labels, w1, b1, w2, b2 })
}

/// Produces synthetic sentences for one training line.
pub trait SentenceAugmenter: Sync {
    fn name(&self) -> &str;

    /// `n` synthetic sentences for line `index` of the training split.
    fn augment(&self, s: &Sentence, label: &str, n: usize, index: usize) -> Result<Vec<Sentence>>;
}

/// The trained editor with prior edits.
pub struct EditAugmenter<T: Real> {
    pub augmenter: Augmenter<T>,
    pub cfg: AugmentConfig,
}

impl<T: Real> SentenceAugmenter for EditAugmenter<T> {
    fn name(&self) -> &str {
        "edit"
    }

    fn augment(&self, s: &Sentence, label: &str, n: usize, index: usize) -> Result<Vec<Sentence>> {
        Ok(self
            .augmenter
            .augment_line(s, label, n, &self.cfg, index)?
            .into_iter()
            .map(|r| r.synthetic)
            .collect())
    }
}

/// Returns exact copies: the control arm.
pub struct IdentityAugmenter;

impl SentenceAugmenter for IdentityAugmenter {
    fn name(&self) -> &str {
        "identity"
    }

    fn augment(&self, s: &Sentence, _label: &str, n: usize, _index: usize) -> Result<Vec<Sentence>> {
        Ok(vec![s.clone(); n])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSentence {
    pub label: String,
    pub sentence: Sentence,
}

pub fn to_sentences(lines: &[LabeledLine]) -> Result<Vec<LabeledSentence>> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(LabeledSentence {
                label: l.label.clone(),
                sentence: preprocess(&l.text).map_err(|e| Error::format(i + 1, e.to_string()))?,
            })
        })
        .collect()
}

fn sentence_hash(s: &Sentence) -> u64 {
    let mut h = DefaultHasher::new();
    for w in s.surfaces() {
        w.hash(&mut h);
    }
    h.finish()
}

/// Fails with `SplitLeakage` when any test sentence also appears in the
/// training split.
pub fn check_leakage(train: &[LabeledSentence], test: &[LabeledSentence]) -> Result<()> {
    let seen: HashSet<u64> = train.iter().map(|t| sentence_hash(&t.sentence)).collect();
    let leaked = test.iter().filter(|t| seen.contains(&sentence_hash(&t.sentence))).count();
    if leaked > 0 {
        return Err(Error::SplitLeakage(leaked));
    }
    Ok(())
}

/// Deduplicates, shuffles with `seed`, and holds out `test_fraction`.
pub fn split(data: &[LabeledSentence], test_fraction: f64, seed: u64) -> (Vec<LabeledSentence>, Vec<LabeledSentence>) {
    let mut seen = HashSet::new();
    let mut unique: Vec<LabeledSentence> = data
        .iter()
        .filter(|d| seen.insert(sentence_hash(&d.sentence)))
        .cloned()
        .collect();
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5b1f));
    let n_test = ((unique.len() as f64 * test_fraction).round() as usize).clamp(1, unique.len().saturating_sub(1));
    let train = unique.split_off(n_test);
    (train, unique)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub fraction: f64,
    pub n_augment: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlCell {
    pub arm: &'static str,
    pub fraction: f64,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub fraction: f64,
    pub n_augment: usize,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlCheck {
    pub fraction: f64,
    pub duplicate_mean: f64,
    pub identity_mean: f64,
    pub pooled_std: f64,
    pub within: bool,
}

#[derive(Clone, Debug)]
pub struct ExperimentResults {
    pub cells: Vec<Cell>,
    pub controls: Vec<ControlCell>,
    /// Synthetic sentences dropped because they equal a test sentence.
    pub dropped_synthetic: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub augmenter: String,
}

/// Mean and sample standard deviation (n − 1).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `sqrt((s1² + s2²) / 2)`.
pub fn pooled_std(s1: f64, s2: f64) -> f64 {
    ((s1 * s1 + s2 * s2) / 2.0).sqrt()
}

impl ExperimentResults {
    pub fn aggregate(&self) -> Vec<Aggregate> {
        let mut groups: BTreeMap<(u64, usize), Vec<f64>> = BTreeMap::new();
        for c in &self.cells {
            groups.entry((c.fraction.to_bits(), c.n_augment)).or_default().push(c.accuracy);
        }
        let mut out: Vec<Aggregate> = groups
            .into_iter()
            .map(|((f, n), accs)| {
                let (mean, std) = mean_std(&accs);
                Aggregate {
                    fraction: f64::from_bits(f),
                    n_augment: n,
                    mean,
                    std,
                    runs: accs.len(),
                }
            })
            .collect();
        out.sort_by(|a, b| a.fraction.total_cmp(&b.fraction).then(a.n_augment.cmp(&b.n_augment)));
        out
    }

    pub fn control_checks(&self) -> Vec<ControlCheck> {
        let mut fractions: Vec<f64> = self.controls.iter().map(|c| c.fraction).collect();
        fractions.dedup();
        fractions
            .into_iter()
            .map(|f| {
                let arm = |name: &str| -> Vec<f64> {
                    self.controls
                        .iter()
                        .filter(|c| c.fraction == f && c.arm == name)
                        .map(|c| c.accuracy)
                        .collect()
                };
                let (dm, ds) = mean_std(&arm("duplicate"));
                let (im, is) = mean_std(&arm("identity"));
                let pooled = pooled_std(ds, is);
                ControlCheck {
                    fraction: f,
                    duplicate_mean: dm,
                    identity_mean: im,
                    pooled_std: pooled,
                    within: (dm - im).abs() <= 2.0 * pooled + 1e-12,
                }
            })
            .collect()
    }

    /// Accuracy on originals at the largest fraction is at least the
    /// accuracy at the smallest minus two pooled standard deviations.
    pub fn monotone_data_benefit(&self) -> Option<bool> {
        let orig: Vec<Aggregate> = self.aggregate().into_iter().filter(|a| a.n_augment == 0).collect();
        let (lo, hi) = (orig.first()?, orig.last()?);
        Some(hi.mean >= lo.mean - 2.0 * pooled_std(lo.std, hi.std))
    }

    pub fn cells_csv(&self) -> String {
        let mut s = String::from("fraction,n_augment,seed,accuracy\n");
        for c in &self.cells {
            writeln!(s, "{},{},{},{}", c.fraction, c.n_augment, c.seed, c.accuracy).unwrap();
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("fraction,n_augment,mean,std\n");
        for a in self.aggregate() {
            writeln!(s, "{},{},{},{}", a.fraction, a.n_augment, a.mean, a.std).unwrap();
        }
        s
    }

    pub fn controls_csv(&self) -> String {
        let mut s = String::from("arm,fraction,seed,accuracy\n");
        for c in &self.controls {
            writeln!(s, "{},{},{},{}", c.arm, c.fraction, c.seed, c.accuracy).unwrap();
        }
        s
    }

    /// Human-readable "accuracy ± standard deviation" table, in percent.
    pub fn table(&self) -> String {
        let agg = self.aggregate();
        let mut ns: Vec<usize> = agg.iter().map(|a| a.n_augment).collect();
        ns.sort_unstable();
        ns.dedup();
        let mut fractions: Vec<f64> = agg.iter().map(|a| a.fraction).collect();
        fractions.dedup();
        let mut s = format!(
            "Accuracy ± standard deviation (%), augmenter: {}, train {} / test {}\n",
            self.augmenter, self.train_size, self.test_size
        );
        write!(s, "{:<10}", "fraction").unwrap();
        for &n in &ns {
            let head = if n == 0 { "original".to_string() } else { format!("N={n}") };
            write!(s, "{head:>18}").unwrap();
        }
        s.push('\n');
        for f in fractions {
            write!(s, "{:<10}", format!("{:.0}%", f * 100.0)).unwrap();
            for &n in &ns {
                let cell = agg
                    .iter()
                    .find(|a| a.fraction == f && a.n_augment == n)
                    .map(|a| format!("{:.2} ± {:.2}", 100.0 * a.mean, 100.0 * a.std))
                    .unwrap_or_default();
                write!(s, "{cell:>18}").unwrap();
            }
            s.push('\n');
        }
        for c in self.control_checks() {
            writeln!(
                s,
                "control at {:.0}%: duplicate {:.2}, identity {:.2}, pooled std {:.2}: {}",
                c.fraction * 100.0,
                100.0 * c.duplicate_mean,
                100.0 * c.identity_mean,
                100.0 * c.pooled_std,
                if c.within { "within 2 pooled std" } else { "OUTSIDE 2 pooled std" }
            )
            .unwrap();
        }
        if self.dropped_synthetic > 0 {
            writeln!(s, "{} synthetic sentences equal to a test sentence were dropped", self.dropped_synthetic).unwrap();
        }
        s
    }
}

/// Training set for one cell: the chosen originals plus up to `n`
/// extra sentences each.
fn cell_examples(
    subset: &[usize],
    train: &[Example],
    synthetic: &[Vec<Example>],
    n: usize,
) -> Vec<Example> {
    let mut out = Vec::new();
    for &i in subset {
        out.push(train[i].clone());
        out.extend(synthetic[i].iter().take(n).cloned());
    }
    out
}

fn subset_for(n_train: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n_train).collect();
    idx.shuffle(&mut derived_rng(seed, fraction.to_bits(), 0x5u64));
    let k = ((n_train as f64 * fraction).ceil() as usize).clamp(1, n_train);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Runs the full fraction × {original, N…} × seed grid plus the control
/// arms. `test` defaults to a held-out split of `data`.
pub fn run_experiment(
    data: &[LabeledSentence],
    test: Option<&[LabeledSentence]>,
    augmenter: &dyn SentenceAugmenter,
    encoder: &FeatureEncoder,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResults> {
    cfg.validate()?;
    let (train, test) = match test {
        Some(t) => (data.to_vec(), t.to_vec()),
        None => split(data, cfg.test_fraction, cfg.seed),
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput("train or test split"));
    }
    check_leakage(&train, &test)?;

    let test_hashes: HashSet<u64> = test.iter().map(|t| sentence_hash(&t.sentence)).collect();
    let max_n = cfg.n_augment.iter().copied().max().unwrap_or(0);
    let generated: Vec<Vec<Sentence>> = train
        .par_iter()
        .enumerate()
        .map(|(i, t)| augmenter.augment(&t.sentence, &t.label, max_n, i))
        .collect::<Result<_>>()?;
    let mut dropped = 0;
    let synthetic: Vec<Vec<Example>> = generated
        .iter()
        .zip(&train)
        .map(|(sents, t)| {
            sents
                .iter()
                .filter(|s| {
                    let leak = test_hashes.contains(&sentence_hash(s));
                    dropped += usize::from(leak);
                    !leak
                })
                .map(|s| Example {
                    label: t.label.clone(),
                    features: encoder.features(s),
                })
                .collect()
        })
        .collect();
    let identity: Vec<Vec<Example>> = train
        .iter()
        .map(|t| {
            IdentityAugmenter
                .augment(&t.sentence, &t.label, 1, 0)
                .map(|v| {
                    v.iter()
                        .map(|s| Example {
                            label: t.label.clone(),
                            features: encoder.features(s),
                        })
                        .collect()
                })
        })
        .collect::<Result<_>>()?;
    let train_ex: Vec<Example> = train
        .iter()
        .map(|t| Example {
            label: t.label.clone(),
            features: encoder.features(&t.sentence),
        })
        .collect();
    let test_ex: Vec<Example> = test
        .iter()
        .map(|t| Example {
            label: t.label.clone(),
            features: encoder.features(&t.sentence),
        })
        .collect();

    #[derive(Clone, Copy)]
    enum Job {
        Cell(f64, usize, u64),
        Control(&'static str, f64, u64),
    }
    let mut jobs = Vec::new();
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|s| cfg.seed.wrapping_add(s)).collect();
    for &f in &cfg.fractions {
        for &n in std::iter::once(&0).chain(&cfg.n_augment) {
            jobs.extend(seeds.iter().map(|&s| Job::Cell(f, n, s)));
        }
        for arm in ["duplicate", "identity"] {
            jobs.extend(seeds.iter().map(|&s| Job::Control(arm, f, s)));
        }
    }
    let dup: Vec<Vec<Example>> = train_ex.iter().map(|e| vec![e.clone()]).collect();
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|job| {
            let (s, examples) = match *job {
                Job::Cell(f, n, s) => (s, cell_examples(&subset_for(train_ex.len(), f, s), &train_ex, &synthetic, n)),
                Job::Control(arm, f, s) => {
                    let extra = if arm == "duplicate" { &dup } else { &identity };
                    (s, cell_examples(&subset_for(train_ex.len(), f, s), &train_ex, extra, 1))
                }
            };
            let clf = train_classifier(&examples, &cfg.classifier, s)?;
            Ok(clf.accuracy(&test_ex))
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    let mut controls = Vec::new();
    for (job, acc) in jobs.into_iter().zip(results) {
        match job {
            Job::Cell(fraction, n_augment, seed) => cells.push(Cell {
                fraction,
                n_augment,
                seed,
                accuracy: acc,
            }),
            Job::Control(arm, fraction, seed) => controls.push(ControlCell {
                arm,
                fraction,
                seed,
                accuracy: acc,
            }),
        }
    }
    Ok(ExperimentResults {
        cells,
        controls,
        dropped_synthetic: dropped,
        train_size: train.len(),
        test_size: test.len(),
        augmenter: augmenter.name().to_string(),
    })
}
