//! Inference-time augmentation with prior edits.
//!
//! Each input line gets its own generator seeded with
//! `seed ^ line_index`, so a parallel run produces exactly the serial
//! output. Words the model has never seen are appended to its embedding
//! table before any line is decoded.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{preprocess, GloveFile, Sentence};
use crate::editvae::{prior_sample, EditVector};
use crate::error::{Error, Result};
use crate::evaluator::max_output_len;
use crate::pairmine::jaccard_distance;
use crate::seqmodel::{checkpoint, generate_sentence, DecodeOptions, ModelState};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    /// 0 is greedy decoding.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationRecord {
    pub original: Sentence,
    pub synthetic: Sentence,
    pub label: String,
    pub z_used: EditVector,
    pub jaccard_dist: f64,
}

impl AugmentationRecord {
    pub fn is_duplicate(&self) -> bool {
        self.synthetic.same_surfaces(&self.original)
    }
}

/// A trained model ready to edit sentences from any domain.
#[derive(Clone, Debug)]
pub struct Augmenter<T: Real> {
    model: ModelState<T>,
    glove: Option<GloveFile>,
}

impl<T: Real> Augmenter<T> {
    pub fn new(model: ModelState<T>, glove: Option<GloveFile>) -> Self {
        Self { model, glove }
    }

    /// Loads a checkpoint; a missing file means there is no trained model.
    pub fn from_checkpoint(path: impl AsRef<Path>, glove: Option<GloveFile>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::UntrainedModel(format!("no checkpoint at {}", path.display())));
        }
        let (model, _) = checkpoint::load(path)?;
        Ok(Self::new(model, glove))
    }

    pub fn model(&self) -> &ModelState<T> {
        &self.model
    }

    /// Injects every unseen word of `sentences`, from the GloVe file when it
    /// has the word and as a seeded fallback vector otherwise. Returns the
    /// number of injected words.
    pub fn prepare<'a>(&mut self, sentences: impl IntoIterator<Item = &'a Sentence>) -> Result<usize> {
        let words: Vec<&str> = sentences.into_iter().flat_map(|s| s.surfaces()).collect();
        Ok(self.model.inject_missing(words, self.glove.as_ref())?.len())
    }

    /// `n` synthetic versions of `s`, each decoded under its own prior
    /// edit drawn from `rng`. Call [`Augmenter::prepare`] first; words still
    /// unknown are read as `<unk>`.
    pub fn augment(
        &self,
        s: &Sentence,
        label: &str,
        n: usize,
        cfg: &AugmentConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<AugmentationRecord>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        if s.is_empty() {
            return Err(Error::EmptyInput("sentence"));
        }
        let max = self.model.config.max_len;
        if s.len() > max {
            return Err(Error::LengthExceeded { len: s.len(), max });
        }
        let vocab = self.model.embeddings().vocab();
        let src = vocab.encode(s);
        let ecfg = self.model.config.edit();
        let opts = DecodeOptions {
            temperature: cfg.temperature,
            max_len: max_output_len(src.len()),
        };
        (0..n)
            .map(|_| {
                let z = prior_sample(&ecfg, rng);
                let ids = generate_sentence(&self.model, &src, &z, opts, rng)?;
                let synthetic = vocab.decode(&ids);
                let jaccard_dist = jaccard_distance(s, &synthetic)?;
                Ok(AugmentationRecord {
                    original: s.clone(),
                    synthetic,
                    label: label.to_string(),
                    z_used: z,
                    jaccard_dist,
                })
            })
            .collect()
    }

    /// Augments line `index` with its derived seed.
    pub fn augment_line(
        &self,
        s: &Sentence,
        label: &str,
        n: usize,
        cfg: &AugmentConfig,
        index: usize,
    ) -> Result<Vec<AugmentationRecord>> {
        let mut rng = line_rng(cfg.seed, index);
        self.augment(s, label, n, cfg, &mut rng)
    }
}

pub fn line_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Original,
    Synthetic,
    /// Synthetic line identical to its original.
    Duplicate,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Synthetic => "synthetic",
            Origin::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Origin::Original),
            "synthetic" => Ok(Origin::Synthetic),
            "duplicate" => Ok(Origin::Duplicate),
            other => Err(Error::Config(format!("unknown origin flag {other:?}"))),
        }
    }
}

/// One line of a labeled file.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledLine {
    pub label: String,
    pub text: String,
    pub origin: Option<Origin>,
}

impl LabeledLine {
    pub fn to_tsv(&self) -> String {
        match self.origin {
            Some(o) => format!("{}\t{}\t{}", self.label, self.text, o),
            None => format!("{}\t{}", self.label, self.text),
        }
    }
}

/// Parses `label \t text [\t origin]` lines. Blank lines are skipped;
/// anything else without a tab, with an empty field, or with an unknown
/// origin flag is a format error naming the 1-based line number.
pub fn parse_labeled(text: &str) -> Result<Vec<LabeledLine>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::format(n, "expected `label<TAB>text[<TAB>origin]`"));
        }
        let (label, body) = (fields[0].trim(), fields[1].trim());
        if label.is_empty() || body.is_empty() {
            return Err(Error::format(n, "empty label or text"));
        }
        let origin = match fields.get(2) {
            Some(f) => Some(f.trim().parse().map_err(|e: Error| Error::format(n, e.to_string()))?),
            None => None,
        };
        out.push(LabeledLine {
            label: label.to_string(),
            text: body.to_string(),
            origin,
        });
    }
    Ok(out)
}

pub fn read_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledLine>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labeled(&text)
}

pub fn write_labeled(path: impl AsRef<Path>, lines: &[LabeledLine]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for l in lines {
        text.push_str(&l.to_tsv());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentSummary {
    pub originals: usize,
    pub synthetic: usize,
    pub duplicates: usize,
    pub injected_words: usize,
    pub mean_jaccard: f64,
}

impl AugmentSummary {
    pub fn changed_fraction(&self) -> f64 {
        if self.synthetic == 0 {
            return 0.0;
        }
        1.0 - self.duplicates as f64 / self.synthetic as f64
    }
}

impl fmt::Display for AugmentSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} originals, {} synthetic ({} identical to their original, {:.1}% changed), \
             mean Jaccard distance {:.4}, {} words injected",
            self.originals,
            self.synthetic,
            self.duplicates,
            100.0 * self.changed_fraction(),
            self.mean_jaccard,
            self.injected_words
        )
    }
}

/// Every original line followed by its `n` synthetic lines. Input origin
/// flags are ignored; every input line counts as an original.
pub fn augment_dataset<T: Real>(
    lines: &[LabeledLine],
    n: usize,
    augmenter: &mut Augmenter<T>,
    cfg: &AugmentConfig,
) -> Result<(Vec<LabeledLine>, AugmentSummary)> {
    let sentences: Vec<Sentence> = lines
        .iter()
        .enumerate()
        .map(|(i, l)| preprocess(&l.text).map_err(|e| Error::format(i + 1, e.to_string())))
        .collect::<Result<_>>()?;
    let injected_words = if n > 0 { augmenter.prepare(&sentences)? } else { 0 };
    let aug = &*augmenter;
    let per_line: Vec<Vec<AugmentationRecord>> = sentences
        .par_iter()
        .zip(lines)
        .enumerate()
        .map(|(i, (s, l))| aug.augment_line(s, &l.label, n, cfg, i))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(lines.len() * (n + 1));
    let mut summary = AugmentSummary {
        originals: lines.len(),
        injected_words,
        ..AugmentSummary::default()
    };
    let mut jaccard_sum = 0.0;
    for (l, recs) in lines.iter().zip(per_line) {
        out.push(LabeledLine {
            label: l.label.clone(),
            text: l.text.clone(),
            origin: Some(Origin::Original),
        });
        for r in recs {
            let dup = r.is_duplicate();
            summary.synthetic += 1;
            summary.duplicates += usize::from(dup);
            jaccard_sum += r.jaccard_dist;
            out.push(LabeledLine {
                label: r.label,
                text: r.synthetic.to_string(),
                origin: Some(if dup { Origin::Duplicate } else { Origin::Synthetic }),
            });
        }
    }
    if summary.synthetic > 0 {
        summary.mean_jaccard = jaccard_sum / summary.synthetic as f64;
    }
    Ok((out, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_and_three_field_lines() {
        let lines = parse_labeled("pos\tgood food\n\nneg\tbad\tsynthetic\n").unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].origin, None);
        assert_eq!(lines[1].origin, Some(Origin::Synthetic));
        assert_eq!(lines[1].to_tsv(), "neg\tbad\tsynthetic");
    }

    #[test]
    fn missing_tab_names_the_line() {
        match parse_labeled("pos\tfine\nno tab here\n") {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(matches!(parse_labeled("pos\tx\tweird"), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn line_rngs_differ_by_index() {
        use rand::Rng;
        let a: u64 = line_rng(7, 0).random();
        let b: u64 = line_rng(7, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, line_rng(7, 0).random::<u64>());
    }
}
