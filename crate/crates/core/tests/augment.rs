//! Dataset augmentation with an untrained tiny editor.

mod common;

use sentedit_core::augmentor::{augment_dataset, parse_labeled, AugmentConfig, Augmenter, Origin};
use sentedit_core::seqmodel::checkpoint;
use sentedit_core::Error;

const DATA: &str = "pos\tThe food was great.\nneg\tThe staff were rude.\npos\tKind staff and great soup.\nneg\tThe soup was cold.\npos\tThe zucchini was great.\n";

fn augmenter() -> Augmenter<f32> {
    Augmenter::new(common::tiny_model(8), Some(common::tiny_glove()))
}

#[test]
fn every_original_is_followed_by_n_labeled_copies() {
    let lines = parse_labeled(DATA).unwrap();
    let cfg = AugmentConfig { temperature: 0.0, seed: 4 };
    let (out, summary) = augment_dataset(&lines, 2, &mut augmenter(), &cfg).unwrap();
    assert_eq!(out.len(), lines.len() * 3);
    assert_eq!(summary.originals, 5);
    assert_eq!(summary.synthetic, 10);
    // "zucchini" is unseen; "The" and "Kind" are lowercased away
    assert_eq!(summary.injected_words, 1);
    for (i, l) in lines.iter().enumerate() {
        let group = &out[i * 3..i * 3 + 3];
        assert_eq!(group[0].text, l.text);
        assert_eq!(group[0].origin, Some(Origin::Original));
        for s in &group[1..] {
            assert_eq!(s.label, l.label);
            assert!(matches!(s.origin, Some(Origin::Synthetic | Origin::Duplicate)));
            assert!(!s.text.is_empty());
        }
    }
    let dups = out.iter().filter(|l| l.origin == Some(Origin::Duplicate)).count();
    assert_eq!(dups, summary.duplicates);
}

#[test]
fn output_is_deterministic_and_thread_independent() {
    let lines = parse_labeled(DATA).unwrap();
    let cfg = AugmentConfig { temperature: 0.7, seed: 9 };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| augment_dataset(&lines, 3, &mut augmenter(), &cfg).unwrap().0)
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(4));
}

#[test]
fn zero_copies_returns_the_originals() {
    let lines = parse_labeled(DATA).unwrap();
    let (out, summary) = augment_dataset(&lines, 0, &mut augmenter(), &AugmentConfig::default()).unwrap();
    assert_eq!(out.len(), lines.len());
    assert_eq!(summary.synthetic, 0);
}

#[test]
fn checkpointed_editor_matches_the_in_memory_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &common::tiny_model::<f32>(8), 0).unwrap();
    let mut loaded = Augmenter::<f32>::from_checkpoint(&path, Some(common::tiny_glove())).unwrap();
    let lines = parse_labeled(DATA).unwrap();
    let cfg = AugmentConfig { temperature: 0.0, seed: 1 };
    let a = augment_dataset(&lines, 1, &mut augmenter(), &cfg).unwrap().0;
    let b = augment_dataset(&lines, 1, &mut loaded, &cfg).unwrap().0;
    assert_eq!(a, b);
}

#[test]
fn missing_checkpoint_means_untrained() {
    let r = Augmenter::<f32>::from_checkpoint("/nonexistent/model.ckpt", None);
    assert!(matches!(r, Err(Error::UntrainedModel(_))));
}
