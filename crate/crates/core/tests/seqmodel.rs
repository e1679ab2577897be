//! Masking, causality, vocabulary injection and checkpoint round trips.

mod common;

use sentedit_core::corpus::{BOS, PAD};
use sentedit_core::editvae::prior_sample;
use sentedit_core::evaluator::{decode_greedy, pair_loss};
use sentedit_core::seqmodel::{checkpoint, derived_rng, Graph, ModelState};
use sentedit_core::tensor::Tensor;
use sentedit_core::trainer::EncodedPair;
use sentedit_core::Error;

fn decoder_rows(model: &ModelState<f64>, src: &[usize], prefix: &[usize]) -> Tensor<f64> {
    let mut g = Graph::new(model);
    let mem = g.encode(src).unwrap();
    let out = g.decode(mem, src, prefix).unwrap();
    g.tape.value(out).clone()
}

fn assert_rows_close(a: &Tensor<f64>, b: &Tensor<f64>, rows: usize, tol: f64) {
    for r in 0..rows {
        for (x, y) in a.row(r).iter().zip(b.row(r)) {
            assert!((x - y).abs() < tol, "row {r}: {x} vs {y}");
        }
    }
}

#[test]
fn decoder_is_causal() {
    let model = common::tiny_model::<f64>(1);
    let v = common::tiny_vocab();
    let src = common::ids(&v, "the food was great");
    let mut a = vec![BOS];
    a.extend(common::ids(&v, "the soup was cold"));
    let mut b = a.clone();
    b[3] = v.id("kind");
    b[4] = v.id("rude");
    let (ra, rb) = (decoder_rows(&model, &src, &a), decoder_rows(&model, &src, &b));
    assert_rows_close(&ra, &rb, 3, 1e-12);
    assert!(ra.row(3).iter().zip(rb.row(3)).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn padding_is_invisible() {
    let model = common::tiny_model::<f64>(2);
    let v = common::tiny_vocab();
    let src = common::ids(&v, "staff were rude");
    let mut padded = src.clone();
    padded.extend([PAD, PAD, PAD]);
    let mut prefix = vec![BOS];
    prefix.extend(common::ids(&v, "staff were kind"));
    let a = decoder_rows(&model, &src, &prefix);
    let b = decoder_rows(&model, &padded, &prefix);
    assert_rows_close(&a, &b, prefix.len(), 1e-9);

    let mut g = Graph::new(&model);
    let m1 = g.encode(&src).unwrap();
    let m2 = g.encode(&padded).unwrap();
    assert_rows_close(g.tape.value(m1), g.tape.value(m2), src.len(), 1e-9);
}

#[test]
fn over_long_input_is_rejected() {
    let model = common::tiny_model::<f64>(2);
    let src = vec![7; model.config.max_len + 1];
    let mut g = Graph::new(&model);
    assert!(matches!(g.encode(&src), Err(Error::LengthExceeded { .. })));
}

#[test]
fn injection_keeps_existing_scores() {
    let mut model = common::tiny_model::<f64>(3);
    let v = common::tiny_vocab();
    let pair = EncodedPair {
        source: common::ids(&v, "the food was great"),
        target: common::ids(&v, "the food was cold"),
    };
    let z = prior_sample(&model.config.edit(), &mut derived_rng(0, 0, 0));
    let logits = |m: &ModelState<f64>| {
        let mut g = Graph::new(m);
        let mem = g.encode(&pair.source).unwrap();
        let zv = g.edit_constant(&z);
        let out = g.decode_step(mem, &pair.source, &[BOS], zv).unwrap();
        g.tape.value(out).data().to_vec()
    };
    let before = logits(&model);
    let ids = model.inject_oov(&[("zucchini".into(), vec![0.5; 6])]).unwrap();
    assert_eq!(ids, vec![before.len()]);
    let after = logits(&model);
    assert_eq!(after.len(), before.len() + 1);
    assert_eq!(&after[..before.len()], &before[..]);
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = common::tiny_model::<f32>(4);
    checkpoint::save(&path, &model, 17).unwrap();
    let (loaded, info) = checkpoint::load::<f32>(&path).unwrap();
    assert_eq!(info.header.step, 17);
    assert_eq!(info.trainable_count(), model.params.count());
    assert_eq!(checkpoint::to_bytes(&loaded, 17).unwrap(), std::fs::read(&path).unwrap());

    let v = common::tiny_vocab();
    let pair = EncodedPair {
        source: common::ids(&v, "the food was great ."),
        target: common::ids(&v, "the soup was great ."),
    };
    let z = prior_sample(&model.config.edit(), &mut derived_rng(5, 0, 0));
    let (a, b) = (pair_loss(&model, &pair, &z).unwrap(), pair_loss(&loaded, &pair, &z).unwrap());
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(
        decode_greedy(&model, &pair.source, &z).unwrap(),
        decode_greedy(&loaded, &pair.source, &z).unwrap()
    );
}

#[test]
fn f64_checkpoints_round_once_then_stay_fixed() {
    let model = common::tiny_model::<f64>(6);
    let bytes = checkpoint::to_bytes(&model, 1).unwrap();
    let (loaded, _) = checkpoint::from_bytes::<f64>(&bytes).unwrap();
    assert_eq!(checkpoint::to_bytes(&loaded, 1).unwrap(), bytes);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = checkpoint::to_bytes(&common::tiny_model::<f32>(7), 0).unwrap();
    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(checkpoint::from_bytes::<f32>(truncated), Err(Error::Checkpoint(_))));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(checkpoint::from_bytes::<f32>(&trailing), Err(Error::Checkpoint(_))));
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    assert!(matches!(checkpoint::from_bytes::<f32>(&magic), Err(Error::Checkpoint(_))));
}
