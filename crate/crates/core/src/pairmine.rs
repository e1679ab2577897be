//! Mining of lexically close sentence pairs.
//!
//! Candidates come from MinHash signatures bucketed band by band
//! (locality-sensitive hashing); every candidate is then re-checked with
//! the exact Jaccard distance, so the output has no false positives.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SentencePair {
    /// The sentence being edited (x′).
    pub source: Sentence,
    /// The edit result (x).
    pub target: Sentence,
    pub jaccard_dist: f64,
}

impl SentencePair {
    /// A pair whose distance is computed from the sentences.
    pub fn new(source: Sentence, target: Sentence) -> Result<Self> {
        let jaccard_dist = jaccard_distance(&source, &target)?;
        Ok(Self {
            source,
            target,
            jaccard_dist,
        })
    }

    pub fn identity(s: &Sentence) -> Self {
        Self {
            source: s.clone(),
            target: s.clone(),
            jaccard_dist: 0.0,
        }
    }
}

/// `1 − |A ∩ B| / |A ∪ B|` over the token sets of `a` and `b`.
pub fn jaccard_distance(a: &Sentence, b: &Sentence) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("jaccard_distance"));
    }
    let sa: HashSet<&str> = a.surfaces().collect();
    let sb: HashSet<&str> = b.surfaces().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    Ok(1.0 - inter as f64 / union as f64)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
}

impl MinHashSignature {
    /// Fraction of positions where the two signatures agree, an unbiased
    /// estimate of Jaccard similarity.
    pub fn similarity(&self, other: &Self) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        let same = self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.values.len() as f64
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn token_hash(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in token.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seeded family of `k` hash functions over tokens.
#[derive(Clone, Debug)]
pub struct MinHasher {
    salts: Vec<u64>,
}

impl MinHasher {
    pub fn new(num_hashes: usize, seed: u64) -> Self {
        let mut state = splitmix64(seed);
        let salts = (0..num_hashes)
            .map(|_| {
                state = splitmix64(state);
                state
            })
            .collect();
        Self { salts }
    }

    pub fn num_hashes(&self) -> usize {
        self.salts.len()
    }

    fn sign_hashes(&self, token_hashes: impl Iterator<Item = u64> + Clone) -> MinHashSignature {
        let values = self
            .salts
            .iter()
            .map(|&salt| {
                token_hashes
                    .clone()
                    .map(|h| splitmix64(h ^ salt))
                    .min()
                    .unwrap_or(u64::MAX)
            })
            .collect();
        MinHashSignature { values }
    }

    pub fn sign(&self, s: &Sentence) -> MinHashSignature {
        let hashes: Vec<u64> = s.surfaces().map(token_hash).collect();
        self.sign_hashes(hashes.into_iter())
    }
}

/// MinHash signature of `s` with `num_hashes` functions drawn from `seed`.
pub fn signature(s: &Sentence, num_hashes: usize, seed: u64) -> MinHashSignature {
    MinHasher::new(num_hashes, seed).sign(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LshConfig {
    /// Pairs are kept when their exact distance is strictly below this.
    pub threshold: f64,
    pub num_hashes: usize,
    pub bands: usize,
    pub rows: usize,
    pub seed: u64,
    /// Work split for signature computation and verification. The output
    /// does not depend on it.
    pub shards: usize,
}

impl Default for LshConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            num_hashes: 64,
            bands: 32,
            rows: 2,
            seed: 0,
            shards: 8,
        }
    }
}

impl LshConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bands * self.rows != self.num_hashes {
            return Err(Error::Config(format!(
                "bands ({}) x rows ({}) must equal num_hashes ({})",
                self.bands, self.rows, self.num_hashes
            )));
        }
        if self.num_hashes == 0 {
            return Err(Error::Config("num_hashes must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if self.shards == 0 {
            return Err(Error::Config("shards must be positive".into()));
        }
        Ok(())
    }

    /// Probability that a pair with Jaccard similarity `s` shares at least
    /// one band bucket.
    pub fn candidate_probability(&self, s: f64) -> f64 {
        1.0 - (1.0 - s.powi(self.rows as i32)).powi(self.bands as i32)
    }
}

/// Sorted, deduplicated interned token ids of one sentence.
fn token_set(s: &Sentence, interner: &HashMap<&str, u32>) -> Vec<u32> {
    let mut ids: Vec<u32> = s.surfaces().map(|w| interner[w]).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn sorted_jaccard_distance(a: &[u32], b: &[u32]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    1.0 - inter as f64 / union as f64
}

/// Removes sentences whose token sequence already occurred (first wins)
/// and empty sentences.
pub fn dedup_sentences(corpus: &[Sentence]) -> Vec<Sentence> {
    let mut seen = HashSet::new();
    corpus
        .iter()
        .filter(|s| !s.is_empty() && seen.insert(s.to_string()))
        .cloned()
        .collect()
}

/// Every ordered pair `(a, b)` of distinct corpus sentences with exact
/// Jaccard distance below `cfg.threshold` that the LSH index proposes.
///
/// Both orientations are emitted, adjacent, sorted by the corpus position
/// of the earlier sentence, then the later one.
pub fn mine_pairs(corpus: &[Sentence], cfg: &LshConfig) -> Result<Vec<SentencePair>> {
    cfg.validate()?;
    let corpus = dedup_sentences(corpus);
    let index_pairs = mine_index_pairs(&corpus, cfg);
    let mut out = Vec::with_capacity(index_pairs.len() * 2);
    for (i, j, d) in index_pairs {
        out.push(SentencePair {
            source: corpus[i].clone(),
            target: corpus[j].clone(),
            jaccard_dist: d,
        });
        out.push(SentencePair {
            source: corpus[j].clone(),
            target: corpus[i].clone(),
            jaccard_dist: d,
        });
    }
    Ok(out)
}

/// Unordered verified pairs `(i, j, dist)` with `i < j`, sorted.
/// The corpus must already be deduplicated.
pub fn mine_index_pairs(corpus: &[Sentence], cfg: &LshConfig) -> Vec<(usize, usize, f64)> {
    let mut interner: HashMap<&str, u32> = HashMap::new();
    for s in corpus {
        for w in s.surfaces() {
            let next = interner.len() as u32;
            interner.entry(w).or_insert(next);
        }
    }
    let sets: Vec<Vec<u32>> = corpus.iter().map(|s| token_set(s, &interner)).collect();
    let hasher = MinHasher::new(cfg.num_hashes, cfg.seed);
    let shard_len = corpus.len().div_ceil(cfg.shards).max(1);

    let signatures: Vec<MinHashSignature> = corpus
        .par_chunks(shard_len)
        .flat_map_iter(|chunk| chunk.iter().map(|s| hasher.sign(s)).collect::<Vec<_>>())
        .collect();

    let mut candidates: Vec<(u32, u32)> = Vec::new();
    for band in 0..cfg.bands {
        let lo = band * cfg.rows;
        let mut buckets: HashMap<&[u64], Vec<u32>> = HashMap::new();
        for (i, sig) in signatures.iter().enumerate() {
            buckets
                .entry(&sig.values[lo..lo + cfg.rows])
                .or_default()
                .push(i as u32);
        }
        for members in buckets.values() {
            for (k, &a) in members.iter().enumerate() {
                for &b in &members[k + 1..] {
                    candidates.push((a.min(b), a.max(b)));
                }
            }
        }
    }
    candidates.sort_unstable();
    candidates.dedup();

    let verify_len = candidates.len().div_ceil(cfg.shards).max(1);
    candidates
        .par_chunks(verify_len)
        .flat_map_iter(|chunk| {
            chunk
                .iter()
                .filter_map(|&(i, j)| {
                    let (i, j) = (i as usize, j as usize);
                    let d = sorted_jaccard_distance(&sets[i], &sets[j]);
                    (d < cfg.threshold).then_some((i, j, d))
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Exhaustive O(n²) reference: all unordered pairs below the threshold.
pub fn brute_force_index_pairs(corpus: &[Sentence], threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..corpus.len() {
        for j in i + 1..corpus.len() {
            let d = jaccard_distance(&corpus[i], &corpus[j]).expect("non-empty corpus");
            if d < threshold {
                out.push((i, j, d));
            }
        }
    }
    out
}

/// `source \t target \t dist` lines.
pub fn write_pairs(path: impl AsRef<Path>, pairs: &[SentencePair]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for p in pairs {
        writeln!(buf, "{}\t{}\t{}", p.source, p.target, p.jaccard_dist).expect("write to vec");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn parse_pairs(text: &str) -> Result<Vec<SentencePair>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::format(n + 1, "expected 3 tab-separated fields"));
        }
        let source = Sentence::parse_tokens(fields[0]).map_err(|_| Error::format(n + 1, "empty source"))?;
        let target = Sentence::parse_tokens(fields[1]).map_err(|_| Error::format(n + 1, "empty target"))?;
        let jaccard_dist: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::format(n + 1, format!("bad distance {:?}", fields[2])))?;
        out.push(SentencePair {
            source,
            target,
            jaccard_dist,
        });
    }
    Ok(out)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<SentencePair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(text: &str) -> Sentence {
        Sentence::from_surfaces(text.split_whitespace())
    }

    #[test]
    fn distance_examples() {
        assert_eq!(jaccard_distance(&s("a b c"), &s("a b c")).unwrap(), 0.0);
        assert_eq!(jaccard_distance(&s("a b"), &s("c d")).unwrap(), 1.0);
        let d = jaccard_distance(&s("the food was good"), &s("the food was bad")).unwrap();
        assert!((d - (1.0 - 3.0 / 5.0)).abs() < 1e-15);
        assert!(matches!(
            jaccard_distance(&Sentence::default(), &s("a")),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn signature_is_deterministic_and_set_based() {
        let a = signature(&s("the cat sat"), 64, 3);
        assert_eq!(a, signature(&s("the cat sat"), 64, 3));
        assert_eq!(signature(&s("a a b"), 64, 9), signature(&s("a b"), 64, 9));
        assert_eq!(a.values.len(), 64);
    }

    #[test]
    fn signature_similarity_tracks_jaccard() {
        let a = s("the food was good");
        let b = s("the food was bad");
        let mean = (0..100)
            .map(|seed| signature(&a, 64, seed).similarity(&signature(&b, 64, seed)))
            .sum::<f64>()
            / 100.0;
        assert!((mean - 0.6).abs() < 0.15, "mean estimate {mean}");
    }

    #[test]
    fn reordered_sentences_pair_both_ways() {
        let corpus = vec![s("good food here"), s("here food good")];
        let pairs = mine_pairs(&corpus, &LshConfig::default()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].source, corpus[0]);
        assert_eq!(pairs[1].source, corpus[1]);
        assert!(pairs.iter().all(|p| p.jaccard_dist == 0.0));
    }

    #[test]
    fn disjoint_sentences_yield_nothing() {
        let corpus = vec![s("a b c"), s("d e f")];
        assert!(mine_pairs(&corpus, &LshConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn duplicates_and_self_pairs_are_dropped() {
        let corpus = vec![s("a b c d"), s("a b c d"), s("a b c e")];
        let pairs = mine_pairs(&corpus, &LshConfig::default()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| !p.source.same_surfaces(&p.target)));
    }

    #[test]
    fn bad_banding_is_a_config_error() {
        let cfg = LshConfig {
            bands: 10,
            ..LshConfig::default()
        };
        assert!(matches!(mine_pairs(&[], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn tsv_round_trip() {
        let pairs = vec![SentencePair::new(s("a b c"), s("a b d")).unwrap()];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.tsv");
        write_pairs(&p, &pairs).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a b c\ta b d\t0.5\n");
        assert_eq!(read_pairs(&p).unwrap(), pairs);
    }

    #[test]
    fn malformed_tsv_names_the_line() {
        let err = parse_pairs("a\tb\t0.1\nbroken line\n").unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "g", "h"]).prop_map(String::from)
    }

    fn sentence() -> impl Strategy<Value = Sentence> {
        prop::collection::vec(word(), 1..7).prop_map(Sentence::from_surfaces)
    }

    proptest! {
        #[test]
        fn jaccard_is_a_metric(a in sentence(), b in sentence(), c in sentence()) {
            let ab = jaccard_distance(&a, &b).unwrap();
            let ba = jaccard_distance(&b, &a).unwrap();
            let bc = jaccard_distance(&b, &c).unwrap();
            let ac = jaccard_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn mining_is_exact_symmetric_and_monotone(
            corpus in prop::collection::vec(sentence(), 2..25),
            seed in 0u64..1000,
        ) {
            let hi = LshConfig { seed, ..LshConfig::default() };
            let lo = LshConfig { threshold: 0.3, ..hi.clone() };
            let pairs = mine_pairs(&corpus, &hi).unwrap();
            let keys: HashSet<(String, String)> =
                pairs.iter().map(|p| (p.source.to_string(), p.target.to_string())).collect();
            for p in &pairs {
                let d = jaccard_distance(&p.source, &p.target).unwrap();
                prop_assert_eq!(d, p.jaccard_dist);
                prop_assert!(d < hi.threshold);
                prop_assert!(keys.contains(&(p.target.to_string(), p.source.to_string())));
            }
            for p in mine_pairs(&corpus, &lo).unwrap() {
                prop_assert!(keys.contains(&(p.source.to_string(), p.target.to_string())));
            }
        }

        #[test]
        fn shard_count_does_not_change_output(
            corpus in prop::collection::vec(sentence(), 2..25),
            shards in 1usize..6,
        ) {
            let one = LshConfig { shards: 1, ..LshConfig::default() };
            let many = LshConfig { shards, ..LshConfig::default() };
            prop_assert_eq!(mine_pairs(&corpus, &one).unwrap(), mine_pairs(&corpus, &many).unwrap());
        }
    }
}
