use std::collections::BTreeMap;

use guided_attn::corpus::{encode, shuffled_batches, Sentence, Vocabulary};
use guided_attn::masks::{padding_mask, MaskRole};
use guided_attn::model::{
    batch_gradients, classify, embed, encoder_forward, evaluate, forward_example, positional_encoding,
    train, Checkpoint, CheckpointError, ModelConfig, ModelError, Params,
};
use guided_attn::numerics::Tensor;
use guided_attn::synth::{local_pattern_task, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        roles: vec![MaskRole::RelativePosition],
        extra_heads: 1,
        d_model: 8,
        d_ff: 16,
        dropout: 0.0,
        learning_rate: 1e-2,
        epochs: 3,
        batch_size: 4,
        seed: 11,
        max_len: 6,
        num_classes: 2,
    }
}

/// Label 1 iff the sentence starts with "good".
fn toy_corpus(n: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fillers = ["the", "a", "movie", "plot", "was", "very", "acting", "ending"];
    (0..n)
        .map(|i| {
            let label = i % 2;
            let mut words = vec![if label == 1 { "good" } else { "bad" }];
            for _ in 0..rng.gen_range(1..5) {
                words.push(fillers[rng.gen_range(0..fillers.len())]);
            }
            Sentence::from_text(format!("t{i}"), &words.join(" ")).with_label(label)
        })
        .collect()
}

fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn position_encoding_closed_form() {
    let d = 6;
    let pe = positional_encoding(4, d);
    for c in 0..d {
        assert_eq!(pe.get(0, c), if c % 2 == 0 { 0.0 } else { 1.0 });
    }
    for p in 0..4 {
        for i in 0..d / 2 {
            let freq = (-(10000f64.ln()) * (2 * i) as f64 / d as f64).exp();
            assert!((pe.get(p, 2 * i) - (p as f64 * freq).sin()).abs() < 1e-12);
            assert!((pe.get(p, 2 * i + 1) - (p as f64 * freq).cos()).abs() < 1e-12);
        }
    }
}

#[test]
fn embeddings_are_seeded_and_finite() {
    let cfg = tiny_config();
    let data = toy_corpus(6, 0);
    let vocab = Vocabulary::build(&data).unwrap();
    let ex = encode(&data, &vocab, cfg.max_len, &cfg.mask_roles()).unwrap();
    let batch = &shuffled_batches(&ex, 6, None).unwrap()[0];
    let a = embed(batch, &Params::init(&cfg, vocab.size()), &cfg).unwrap();
    let b = embed(batch, &Params::init(&cfg, vocab.size()), &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(Tensor::all_finite));
    assert_eq!(a[0].shape(), &[cfg.max_len, cfg.d_model]);
}

#[test]
fn empty_stack_is_identity() {
    let cfg = ModelConfig {
        layers: 0,
        ..tiny_config()
    };
    let params = Params::init(&cfg, 10);
    let x = random_tensor(4, cfg.d_model, 3);
    let mut masks = BTreeMap::new();
    masks.insert(MaskRole::Padding, padding_mask(3, 4).unwrap());
    assert_eq!(encoder_forward(&x, &masks, &params, &cfg).unwrap(), x);
}

#[test]
fn constant_pooling() {
    let cfg = tiny_config();
    let params = Params::init(&cfg, 10);
    let u = random_tensor(1, cfg.d_model, 4);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| u.data().to_vec()).collect();
    let encoded = Tensor::from_rows(&rows);
    let one = classify(&encoded, 1, &params).unwrap();
    for len in 2..=5 {
        let s = classify(&encoded, len, &params).unwrap();
        for (a, b) in s.data().iter().zip(one.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn padding_rows_do_not_reach_the_classifier() {
    let cfg = tiny_config();
    let params = Params::init(&cfg, 10);
    let mut encoded = random_tensor(4, cfg.d_model, 5);
    let single = Tensor::matrix(1, cfg.d_model, encoded.row(0).to_vec());
    let reference = classify(&single, 1, &params).unwrap();
    for c in 0..cfg.d_model {
        encoded.set(2, c, 1e6);
    }
    assert_eq!(classify(&encoded, 1, &params).unwrap(), reference);
}

#[test]
fn padded_buffer_gives_identical_scores() {
    let base = tiny_config();
    let s = vec![Sentence::from_text("x", "solo").with_label(0)];
    let vocab = Vocabulary::build(&s).unwrap();
    let params = Params::init(&base, vocab.size());
    let logits = |max_len: usize| {
        let cfg = ModelConfig { max_len, ..base.clone() };
        let ex = encode(&s, &vocab, max_len, &cfg.mask_roles()).unwrap();
        forward_example(&params, &cfg, &ex[0]).unwrap().0
    };
    let a = logits(1);
    let b = logits(6);
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn masked_mean_oracle() {
    let cfg = tiny_config();
    let params = Params::init(&cfg, 10);
    let encoded = random_tensor(6, cfg.d_model, 6);
    let len = 4;
    let w = params.get("classifier.w").unwrap();
    let b = params.get("classifier.b").unwrap();
    let mut pooled = vec![0.0; cfg.d_model];
    for r in 0..len {
        for (c, p) in pooled.iter_mut().enumerate() {
            *p += encoded.get(r, c);
        }
    }
    for p in &mut pooled {
        *p /= len as f64;
    }
    let scores = classify(&encoded, len, &params).unwrap();
    for k in 0..cfg.num_classes {
        let expected: f64 = (0..cfg.d_model).map(|c| pooled[c] * w.get(c, k)).sum::<f64>() + b.get(0, k);
        assert!((scores.get(0, k) - expected).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = ModelConfig {
        dropout: 0.2,
        ..tiny_config()
    };
    let data = toy_corpus(20, 1);
    let a = train(&cfg, &data[..14], &data[14..]).unwrap();
    let b = train(&cfg, &data[..14], &data[14..]).unwrap();
    assert_eq!(a.meta.history, b.meta.history);
    assert_eq!(a.params, b.params);
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let cfg = ModelConfig {
        learning_rate: 0.0,
        ..tiny_config()
    };
    let data = toy_corpus(20, 2);
    let ckpt = train(&cfg, &data[..14], &data[14..]).unwrap();
    assert_eq!(ckpt.params, Params::init(&cfg, ckpt.vocab.size()));
    let h = &ckpt.meta.history;
    for e in h {
        assert!((e.train_loss - h[0].train_loss).abs() < 1e-12);
        assert_eq!(e.dev_loss, h[0].dev_loss);
    }
    assert_eq!(ckpt.meta.best_epoch, 1);
}

#[test]
fn separable_toy_set_is_learned() {
    let cfg = ModelConfig {
        epochs: 50,
        learning_rate: 1e-2,
        ..tiny_config()
    };
    let data = toy_corpus(40, 3);
    let ckpt = train(&cfg, &data, &data).unwrap();
    let m = evaluate(&ckpt, &data).unwrap();
    assert!(m.accuracy >= 99.0, "train accuracy {}", m.accuracy);
}

#[test]
fn evaluation_matches_hand_count() {
    let cfg = tiny_config();
    let data = toy_corpus(30, 4);
    let ckpt = train(&cfg, &data[..20], &data[20..]).unwrap();
    let split = &data[20..];
    let m = evaluate(&ckpt, split).unwrap();
    let ex = encode(split, &ckpt.vocab, cfg.max_len, &cfg.mask_roles()).unwrap();
    let mut confusion = [[0usize; 2]; 2];
    for e in &ex {
        let (logits, _) = forward_example(&ckpt.params, &cfg, e).unwrap();
        let pred = usize::from(logits.get(0, 1) > logits.get(0, 0));
        confusion[e.label.unwrap()][pred] += 1;
    }
    assert_eq!(m.correct, confusion[0][0] + confusion[1][1]);
    assert_eq!(m.total, 10);
    assert_eq!(m.accuracy, 100.0 * m.correct as f64 / 10.0);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let cfg = tiny_config();
    let data = toy_corpus(20, 5);
    let ckpt = train(&cfg, &data[..14], &data[14..]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(evaluate(&loaded, &data).unwrap(), evaluate(&ckpt, &data).unwrap());

    let bytes = ckpt.to_bytes();
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CheckpointError::ChecksumMismatch)));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 40]).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(CheckpointError::BadMagic)));
    let mut version = bytes;
    version[8] = 9;
    assert!(matches!(
        Checkpoint::from_bytes(&version),
        Err(CheckpointError::UnsupportedVersion(9))
    ));
}

#[test]
fn unguided_and_all_padding_configs_match_bitwise() {
    let guided = ModelConfig {
        roles: vec![MaskRole::Padding, MaskRole::Padding],
        extra_heads: 0,
        dropout: 0.1,
        ..tiny_config()
    };
    let baseline = ModelConfig {
        roles: Vec::new(),
        extra_heads: 2,
        ..guided.clone()
    };
    let data = toy_corpus(20, 6);
    let a = train(&guided, &data[..14], &data[14..]).unwrap();
    let b = train(&baseline, &data[..14], &data[14..]).unwrap();
    assert_eq!(a.meta.history, b.meta.history);
    assert_eq!(a.params, b.params);
}

#[test]
fn non_finite_values_are_located() {
    let cfg = tiny_config();
    let data = toy_corpus(4, 7);
    let vocab = Vocabulary::build(&data).unwrap();
    let mut params = Params::init(&cfg, vocab.size());
    params.get_mut("embed.tokens").unwrap().data_mut()[cfg.d_model * 2] = f64::NAN;
    let ex = encode(&data, &vocab, cfg.max_len, &cfg.mask_roles()).unwrap();
    let batch = &shuffled_batches(&ex, 4, None).unwrap()[0];
    match batch_gradients(&params, &cfg, batch) {
        Err(e @ ModelError::NonFinite { .. }) => {
            let ModelError::NonFinite { op, param, shape, .. } = &e else { unreachable!() };
            assert_eq!(*op, "leaf");
            assert_eq!(param.as_deref(), Some("embed.tokens"));
            assert_eq!(shape, &vec![vocab.size(), cfg.d_model]);
            assert!(e.to_string().contains("embed.tokens"));
        }
        other => panic!("expected a non-finite diagnostic, got {other:?}"),
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let cfg = tiny_config();
    let data = toy_corpus(6, 8);
    assert!(matches!(train(&cfg, &[], &data), Err(ModelError::EmptySplit("train"))));
    let unlabeled = vec![Sentence::from_text("u", "good movie")];
    assert!(matches!(train(&cfg, &unlabeled, &data), Err(ModelError::MissingLabel(_))));
    let wide = vec![Sentence::from_text("w", "good movie").with_label(5)];
    assert!(matches!(train(&cfg, &wide, &data), Err(ModelError::LabelOutOfRange { .. })));
    let broken = ModelConfig { d_model: 7, ..cfg };
    assert!(matches!(train(&broken, &data, &data), Err(ModelError::Config(_))));
}

#[test]
fn loss_falls_on_the_adjacency_task() {
    let spec = SynthSpec {
        train: 200,
        dev: 50,
        test: 0,
        ..SynthSpec::default()
    };
    let data = local_pattern_task(&spec).unwrap();
    let cfg = ModelConfig {
        layers: 1,
        d_model: 12,
        d_ff: 24,
        dropout: 0.0,
        learning_rate: 3e-3,
        epochs: 5,
        max_len: 12,
        ..ModelConfig::default()
    };
    let ckpt = train(&cfg, &data.train, &data.dev).unwrap();
    let losses: Vec<f64> = ckpt.meta.history.iter().map(|h| h.train_loss).collect();
    let mut best = f64::INFINITY;
    for l in &losses {
        best = best.min(*l);
    }
    assert!(losses[4] < losses[0], "{losses:?}");
    assert_eq!(best, losses.iter().copied().fold(f64::INFINITY, f64::min));
}
