//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the
//! terminal. Criteria 4 to 9 share one editor trained through the CLI on
//! toy domain A with `fixtures/toy.toml`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentedit_core::corpus::{preprocess, EmbeddingTable, GloveFile, Sentence, Vocab};
use sentedit_core::editvae::{posterior_sample, prior_sample, sample_cosine, EditVaeConfig};
use sentedit_core::evaluator::{self, decode_greedy, pair_loss, Mode};
use sentedit_core::pairmine::{self, jaccard_distance, mine_pairs, LshConfig, SentencePair};
use sentedit_core::seqmodel::{checkpoint, derived_rng, Graph, ModelConfig, ModelState};
use sentedit_core::tensor::Tensor;
use sentedit_core::trainer::{batch_gradients, encode_pairs, EncodedPair};

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn sentedit(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sentedit"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "`sentedit {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn read_corpus(name: &str) -> Vec<Sentence> {
    std::fs::read_to_string(fixtures().join(name))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| preprocess(l).unwrap())
        .collect()
}

// ---------------------------------------------------------------- 1

fn gradient_model() -> (ModelState<f64>, Vec<EncodedPair>) {
    let words = ["the", "food", "was", "great", "cold", "staff", "were", "rude", "kind", "and", "soup", "."];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut text = String::new();
    for w in words {
        text.push_str(w);
        for _ in 0..6 {
            write!(text, " {:.4}", rng.random_range(-1.0..1.0)).unwrap();
        }
        text.push('\n');
    }
    let glove = GloveFile::parse(&text).unwrap();
    let vocab = Vocab::from_words(words).unwrap();
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers_enc: 2,
        n_layers_dec: 2,
        d_ffn: 12,
        max_len: 12,
        dropout: 0.0,
        d_edit: 4,
        kappa: 50.0,
        epsilon: 0.5,
        norm_max: 50.0,
    };
    let model = ModelState::new(cfg, EmbeddingTable::from_glove(&glove, vocab.clone(), 0), 1).unwrap();
    let enc = |s: &str| vocab.encode(&Sentence::from_surfaces(s.split_whitespace()));
    let batch = vec![
        EncodedPair {
            source: enc("the food was great ."),
            target: enc("the soup was cold ."),
        },
        EncodedPair {
            source: enc("staff were rude"),
            target: enc("staff were kind and great"),
        },
    ];
    (model, batch)
}

/// Every parameter entry against a central difference; the error of a
/// group is ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖).
fn criterion_1() -> Outcome {
    let (model, batch) = gradient_model();
    let loss = |m: &ModelState<f64>| batch_gradients(m, &batch, 7, 1).unwrap().0;
    let (_, grads) = batch_gradients(&model, &batch, 7, 1).unwrap();
    let h = 1e-5;
    let mut acc: BTreeMap<String, (f64, f64, f64, usize)> = BTreeMap::new();
    for id in model.params.ids() {
        let t = model.params.get(id);
        let analytic = grads[id.0].clone().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()));
        let group = match model.params.name(id).split('.').next().unwrap() {
            "enc" => "encoder",
            "dec" => "decoder",
            "gen" => "generator",
            "edit" => "edit adapter",
            other => return Err(format!("unexpected parameter group {other}")),
        };
        for i in 0..t.len() {
            let mut plus = model.clone();
            plus.params.get_mut(id).data_mut()[i] += h;
            let mut minus = model.clone();
            minus.params.get_mut(id).data_mut()[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let e = acc.entry(group.to_string()).or_default();
            e.0 += (a - numeric).powi(2);
            e.1 += a * a;
            e.2 += numeric * numeric;
            e.3 += 1;
        }
    }
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (g, (d, a, n, count)) in &acc {
        let rel = d.sqrt() / a.sqrt().max(n.sqrt()).max(1e-300);
        worst = worst.max(if *a == 0.0 { f64::INFINITY } else { rel });
        parts.push(format!("{g} {rel:.1e} ({count} entries)"));
    }
    check(acc.len() == 4 && worst < 1e-4, format!("relative errors: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 2

fn support(cfg: &EditVaeConfig, n: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let scale = 12.0 * rng.random::<f64>();
        let f: Vec<f64> = (0..cfg.d_edit).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let fnorm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        let z = posterior_sample(&f, cfg, &mut rng).map_err(|e| e.to_string())?;
        let unit = z.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        let lo = fnorm.min(cfg.norm_max - cfg.epsilon);
        if (unit - 1.0).abs() > 1e-6 || z.norm < lo || z.norm > lo + cfg.epsilon {
            return Err(format!("posterior sample {i} out of support (|dir| {unit}, norm {})", z.norm));
        }
        let p = prior_sample(cfg, &mut rng);
        let unit = p.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (unit - 1.0).abs() > 1e-6 || p.norm < 0.0 || p.norm > cfg.norm_max {
            return Err(format!("prior sample {i} out of support"));
        }
    }
    Ok(())
}

fn within_fraction(kappa: f64, d: usize, n: usize, radius: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inside = (0..n)
        .filter(|_| sample_cosine(kappa, d, &mut rng).clamp(-1.0, 1.0).acos() <= radius)
        .count();
    inside as f64 / n as f64
}

fn criterion_2() -> Outcome {
    let toy = ModelConfig {
        d_edit: 32,
        kappa: 200.0,
        ..ModelConfig::default()
    };
    for cfg in [ModelConfig::default().edit(), toy.edit()] {
        support(&cfg, 10_000, 3)?;
    }
    let at_toy = within_fraction(1e6, 32, 10_000, 0.01);
    let at_default = within_fraction(1e6, 128, 10_000, 0.01);
    check(
        at_toy >= 0.99,
        format!(
            "20,000 samples in support at d_edit 128 and 32; κ=1e6 within 0.01 rad: {:.2}% at d_edit 32 \
             (at d_edit 128: {:.2}%, where the χ² limit puts the 99th percentile near 0.0126 rad)",
            100.0 * at_toy,
            100.0 * at_default
        ),
    )
}

// ---------------------------------------------------------------- 3

fn synthetic_corpus(n: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(6..12);
        let base: Vec<&str> = (0..len).map(|_| vocab[rng.random_range(0..vocab.len())].as_str()).collect();
        for _ in 0..10 {
            let mut v = base.clone();
            for _ in 0..rng.random_range(0..4) {
                let k = rng.random_range(0..v.len());
                v[k] = &vocab[rng.random_range(0..vocab.len())];
            }
            out.push(Sentence::from_surfaces(v));
        }
    }
    out.truncate(n);
    out
}

fn criterion_3() -> Outcome {
    let corpus = pairmine::dedup_sentences(&synthetic_corpus(1000, 31));
    let start = Instant::now();
    let mined = mine_pairs(&corpus, &LshConfig::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut truth = BTreeSet::new();
    for (i, a) in corpus.iter().enumerate() {
        for b in &corpus[i + 1..] {
            if jaccard_distance(a, b).unwrap() < 0.5 {
                truth.insert((a.to_string(), b.to_string()));
                truth.insert((b.to_string(), a.to_string()));
            }
        }
    }
    let found: BTreeSet<(String, String)> = mined.iter().map(|p| (p.source.to_string(), p.target.to_string())).collect();
    let hits = found.intersection(&truth).count();
    let recall = hits as f64 / truth.len() as f64;
    let precision = hits as f64 / found.len().max(1) as f64;
    check(
        recall >= 0.95 && precision == 1.0 && secs < 30.0,
        format!(
            "{} sentences, {} true pairs: recall {recall:.4}, precision {precision:.4}, {secs:.2} s",
            corpus.len(),
            truth.len()
        ),
    )
}

// ---------------------------------------------------------------- shared editor

struct Trained {
    dir: tempfile::TempDir,
    checkpoint: PathBuf,
    model: ModelState<f32>,
    model_b: ModelState<f32>,
    train_seconds: f64,
    held_in: Vec<EncodedPair>,
    identity: Vec<EncodedPair>,
    test_a: Vec<EncodedPair>,
    test_b: Vec<EncodedPair>,
}

fn write_pairs(path: &Path, pairs: &[SentencePair]) {
    pairmine::write_pairs(path, pairs).unwrap();
}

fn train_shared() -> Result<Trained, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus_a = fixtures().join("domain_a.txt");
    let glove = fixtures().join("glove_toy.txt");
    let mined = dir.path().join("pairs_a.tsv");
    sentedit(&["mine", "--input", corpus_a.to_str().unwrap(), "--out", mined.to_str().unwrap()])?;
    let all = pairmine::read_pairs(&mined).map_err(|e| e.to_string())?;

    // every 40th pair validates, every 40th (offset 20) is held out for test
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for (i, p) in all.into_iter().enumerate() {
        match i % 40 {
            0 if valid.len() < 100 => valid.push(p),
            20 if test.len() < 200 => test.push(p),
            _ => train.push(p),
        }
    }
    let held_out: HashSet<(String, String)> =
        valid.iter().chain(&test).map(|p| (p.source.to_string(), p.target.to_string())).collect();
    train.retain(|p| !held_out.contains(&(p.source.to_string(), p.target.to_string())));
    let (train_path, valid_path) = (dir.path().join("train.tsv"), dir.path().join("valid.tsv"));
    write_pairs(&train_path, &train);
    write_pairs(&valid_path, &valid);

    let out = dir.path().join("ckpt");
    let cfg = fixtures().join("toy.toml");
    let start = Instant::now();
    sentedit(&[
        "--seed",
        "0",
        "--config",
        cfg.to_str().unwrap(),
        "train",
        "--pairs",
        train_path.to_str().unwrap(),
        "--valid",
        valid_path.to_str().unwrap(),
        "--emb",
        glove.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])?;
    let train_seconds = start.elapsed().as_secs_f64();
    let checkpoint = out.join("model.ckpt");
    let (model, _) = checkpoint::load::<f32>(&checkpoint).map_err(|e| e.to_string())?;

    // domain-B words are unseen; inject them into a copy so the extra output
    // rows do not compete when decoding domain A
    let corpus_b = fixtures().join("domain_b.txt");
    let mined_b = dir.path().join("pairs_b.tsv");
    sentedit(&["mine", "--input", corpus_b.to_str().unwrap(), "--out", mined_b.to_str().unwrap()])?;
    let pairs_b: Vec<SentencePair> = pairmine::read_pairs(&mined_b)
        .map_err(|e| e.to_string())?
        .into_iter()
        .step_by(40)
        .take(200)
        .collect();
    let glove_file = GloveFile::read(&glove).map_err(|e| e.to_string())?;
    let words = pairs_b.iter().flat_map(|p| p.source.surfaces().chain(p.target.surfaces()));
    let mut model_b = model.clone();
    model_b.inject_missing(words, Some(&glove_file)).map_err(|e| e.to_string())?;

    let vocab = model.embeddings().vocab().clone();
    let identity = read_corpus("domain_a.txt")
        .iter()
        .take(100)
        .map(|s| EncodedPair::identity(vocab.encode(s)))
        .collect();
    Ok(Trained {
        held_in: encode_pairs(&vocab, &train.iter().step_by(97).take(100).cloned().collect::<Vec<_>>()),
        identity,
        test_a: encode_pairs(&vocab, &test),
        test_b: encode_pairs(model_b.embeddings().vocab(), &pairs_b),
        dir,
        checkpoint,
        model,
        model_b,
        train_seconds,
    })
}

// ---------------------------------------------------------------- 4

fn criterion_4(t: &Trained) -> Outcome {
    let acc = evaluator::teacher_forced_accuracy(&t.model, &t.identity, Mode::Posterior, 0).map_err(|e| e.to_string())?;
    let bleu = evaluator::mean_bleu(&t.model, &t.held_in, Mode::Posterior, 0).map_err(|e| e.to_string())?;
    check(
        acc >= 0.95 && bleu >= 0.9 && t.train_seconds < 600.0,
        format!(
            "identity teacher-forced accuracy {acc:.4}, held-in BLEU {bleu:.4} ({} pairs), training {:.0} s",
            t.held_in.len(),
            t.train_seconds
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5(t: &Trained) -> Outcome {
    let e = |r: sentedit_core::Result<f64>| r.map_err(|e| e.to_string());
    let loss_a = e(evaluator::mean_loss(&t.model, &t.test_a, Mode::Posterior, 0))?;
    let loss_b = e(evaluator::mean_loss(&t.model_b, &t.test_b, Mode::Posterior, 0))?;
    let bleu_a = e(evaluator::mean_bleu(&t.model, &t.test_a, Mode::Prior, 0))?;
    let bleu_b = e(evaluator::mean_bleu(&t.model_b, &t.test_b, Mode::Prior, 0))?;
    check(
        loss_b >= 2.0 * loss_a && bleu_a > bleu_b,
        format!(
            "per-token loss A {loss_a:.4} vs B {loss_b:.4} (ratio {:.1}); prior BLEU A {bleu_a:.4} vs B {bleu_b:.4}",
            loss_b / loss_a
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6(t: &Trained) -> Outcome {
    let init = ModelState::<f64>::new(t.model.config.clone(), t.model.embeddings().clone(), 0).map_err(|e| e.to_string())?;
    let pair = &t.test_a[0];
    let z = prior_sample(&init.config.edit(), &mut derived_rng(1, 0, 0));
    let mut g = Graph::new(&init);
    let zv = g.tape.param(Tensor::row_vector(z.to_vec()));
    let loss = g.forward_loss(&pair.source, &pair.target, zv).map_err(|e| e.to_string())?;
    let grads = g.tape.backward(loss).map_err(|e| e.to_string())?;
    let gnorm = grads.get(zv).map_or(0.0, |g| g.sum_sq().sqrt());

    let cfg = t.model.config.edit();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut outputs = BTreeSet::new();
    for _ in 0..10 {
        let z = prior_sample(&cfg, &mut rng);
        outputs.insert(decode_greedy(&t.model, &pair.source, &z).map_err(|e| e.to_string())?);
    }
    check(
        gnorm > 0.0 && outputs.len() >= 3,
        format!("‖dL/dz‖ at initialisation {gnorm:.3e}; 10 prior edits of one source give {} distinct outputs", outputs.len()),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7(t: &Trained) -> Outcome {
    let csv = t.dir.path().join("bench.csv");
    sentedit(&[
        "--seed",
        "0",
        "bench",
        "--model",
        t.checkpoint.to_str().unwrap(),
        "--reps",
        "1000",
        "--out",
        csv.to_str().unwrap(),
    ])?;
    let text = std::fs::read_to_string(&csv).map_err(|e| e.to_string())?;
    let metric = |name: &str| -> Result<f64, String> {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{name},")))
            .ok_or(format!("{name} missing from bench output"))?
            .parse()
            .map_err(|e| format!("{name}: {e}"))
    };
    let (median, p95, mean) = (metric("latency_median_ms")?, metric("latency_p95_ms")?, metric("latency_mean_ms")?);
    check(
        median.is_finite() && median > 0.0 && median <= p95,
        format!("1000 sentences: median {median:.3} ms, p95 {p95:.3} ms, mean {mean:.3} ms"),
    )
}

// ---------------------------------------------------------------- 8

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn criterion_8(t: &Trained) -> Outcome {
    let out = t.dir.path().join("experiment");
    let data = fixtures().join("classify_b.tsv");
    let glove = fixtures().join("glove_toy.txt");
    let model = t.checkpoint.to_str().unwrap();
    let start = Instant::now();
    let table = sentedit(&[
        "--seed",
        "0",
        "experiment",
        "--data",
        data.to_str().unwrap(),
        "--model",
        model,
        "--emb",
        glove.to_str().unwrap(),
        "--fractions",
        "0.2,0.5,1.0",
        "--n",
        "1,2",
        "--seeds",
        "10",
        "--out",
        out.to_str().unwrap(),
    ])?;
    let secs = start.elapsed().as_secs_f64();
    let read = |name: &str| std::fs::read_to_string(out.join(name)).map_err(|e| e.to_string());
    let cells = read("cells.csv")?;
    let summary = read("summary.csv")?;
    let controls = read("controls.csv")?;
    let n_cells = cells.lines().skip(1).count();
    let n_summary = summary.lines().skip(1).count();

    // duplicate vs identity arms, recomputed from the raw control runs
    let mut arms: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for line in controls.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        arms.entry((f[0].to_string(), f[1].to_string()))
            .or_default()
            .push(f[3].parse().map_err(|e| format!("{e}"))?);
    }
    let mut worst_gap = 0.0f64;
    let mut within = true;
    for fraction in ["0.2", "0.5", "1"] {
        let get = |arm: &str| arms.get(&(arm.to_string(), fraction.to_string())).cloned().unwrap_or_default();
        let (dup, ident) = (get("duplicate"), get("identity"));
        if dup.len() != 10 || ident.len() != 10 {
            return Err(format!("control arms at fraction {fraction} have {} and {} runs", dup.len(), ident.len()));
        }
        let ((dm, ds), (im, is)) = (mean_std(&dup), mean_std(&ident));
        let pooled = ((ds * ds + is * is) / 2.0).sqrt();
        worst_gap = worst_gap.max((dm - im).abs());
        within &= (dm - im).abs() <= 2.0 * pooled + 1e-12;
    }

    // a test file that overlaps the data must be refused
    let overlap = t.dir.path().join("overlap.tsv");
    let first_lines: String = std::fs::read_to_string(&data).unwrap().lines().take(20).map(|l| format!("{l}\n")).collect();
    std::fs::write(&overlap, first_lines).map_err(|e| e.to_string())?;
    let refused = sentedit(&[
        "experiment",
        "--data",
        data.to_str().unwrap(),
        "--test",
        overlap.to_str().unwrap(),
        "--model",
        model,
        "--seeds",
        "2",
    ])
    .is_err();

    check(
        n_cells == 3 * 3 * 10 && n_summary == 9 && table.contains('±') && within && refused,
        format!(
            "{n_cells} runs, {n_summary} mean±std rows in {secs:.0} s; identity vs duplicate gap {:.2} points, within 2 pooled std: {within}; overlapping test set refused: {refused}",
            100.0 * worst_gap
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9(t: &Trained) -> Outcome {
    // a second, f64, training run so every checkpoint flavour is inspected
    let f64_dir = t.dir.path().join("ckpt64");
    let pairs = t.dir.path().join("valid.tsv");
    let glove = fixtures().join("glove_toy.txt");
    sentedit(&[
        "train",
        "--pairs",
        pairs.to_str().unwrap(),
        "--emb",
        glove.to_str().unwrap(),
        "--out",
        f64_dir.to_str().unwrap(),
        "--precision",
        "f64",
        "--d-model",
        "16",
        "--n-heads",
        "2",
        "--d-ffn",
        "32",
        "--d-edit",
        "8",
        "--max-steps",
        "10",
        "--eval-interval",
        "5",
        "--valid-fraction",
        "0.1",
    ])?;
    let mut inspected = 0;
    for dir in [t.checkpoint.parent().unwrap(), f64_dir.as_path()] {
        for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().is_some_and(|e| e == "ckpt") {
                let text = sentedit(&["inspect", path.to_str().unwrap()])?;
                if !(text.contains("format version") && text.contains("trainable:") && text.contains("[config]")) {
                    return Err(format!("inspect output of {} lacks header fields", path.display()));
                }
                inspected += 1;
            }
        }
    }

    let bytes = std::fs::read(&t.checkpoint).map_err(|e| e.to_string())?;
    let (a, _) = checkpoint::from_bytes::<f32>(&bytes).map_err(|e| e.to_string())?;
    let resaved = checkpoint::to_bytes(&a, checkpoint::inspect(&t.checkpoint).unwrap().header.step).map_err(|e| e.to_string())?;
    let (b, _) = checkpoint::from_bytes::<f32>(&resaved).map_err(|e| e.to_string())?;
    let pair = &t.held_in[0];
    let z = prior_sample(&a.config.edit(), &mut derived_rng(9, 0, 0));
    let (la, lb) = (pair_loss(&a, pair, &z).unwrap(), pair_loss(&b, pair, &z).unwrap());
    check(
        resaved == bytes && la.to_bits() == lb.to_bits() && inspected >= 2,
        format!("re-saved bytes identical: {}; forward loss {la} bit-identical: {}; {inspected} checkpoints inspected", resaved == bytes, la.to_bits() == lb.to_bits()),
    )
}

// ---------------------------------------------------------------- runner

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n} [{name}]: {tag} ({secs:.1} s) {detail}");
    outcome.is_ok()
}

fn main() {
    // `cargo test -- --list` and filters are harness features; there is a
    // single suite here, so any listing request just names it
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let total = Instant::now();
    let mut ok = true;
    ok &= run(1, "numerical core", criterion_1);
    ok &= run(2, "edit sampler", criterion_2);
    ok &= run(3, "pair mining", criterion_3);

    let trained = train_shared();
    let shared: [(usize, &str, fn(&Trained) -> Outcome); 6] = [
        (4, "reconstruction", criterion_4),
        (5, "cross-domain ordering", criterion_5),
        (6, "edit sensitivity", criterion_6),
        (7, "speed protocol", criterion_7),
        (8, "downstream pipeline", criterion_8),
        (9, "serialization", criterion_9),
    ];
    for (n, name, f) in shared {
        ok &= match &trained {
            Ok(t) => run(n, name, || f(t)),
            Err(e) => run(n, name, || Err(format!("shared toy editor unavailable: {e}"))),
        };
    }
    println!(
        "acceptance suite finished in {:.0} s: {}",
        total.elapsed().as_secs_f64(),
        if ok { "all criteria pass" } else { "some criteria FAIL" }
    );
    if !ok {
        std::process::exit(1);
    }
}
