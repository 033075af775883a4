mod common;

use guti_core::corpus::SerializedSample;
use guti_core::model::{init_params, load_checkpoint, ModelConfig, ModelParams};
use guti_core::tokenizer::{build_vocab, Vocab};
use guti_core::trainer::{adam_step, fine_tune, is_heldout, split_heldout, AdamConfig, AdamState, TrainConfig};
use proptest::prelude::*;

fn setup(n: usize) -> (Vec<SerializedSample>, Vocab, ModelParams<f32>) {
    let samples = common::samples(&common::toy_poems()[..n]);
    let vocab = build_vocab(&samples, 1).unwrap();
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        context_len: 128,
        vocab_size: vocab.len(),
        dropout_rate: 0.1,
        tie_embeddings: true,
    };
    let params = init_params(&cfg, 1).unwrap();
    (samples, vocab, params)
}

fn quick(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        max_steps: steps,
        log_interval: 5,
        heldout_fraction: 0.2,
        optimizer: AdamConfig {
            learning_rate: 3e-3,
            ..Default::default()
        },
        warmup_steps: 3,
        ..Default::default()
    }
}

#[test]
fn training_is_deterministic_and_lowers_loss() {
    let (samples, vocab, init) = setup(12);
    let cat = common::catalog();
    let mut a = init.clone();
    let mut b = init.clone();
    let ra = fine_tune(&samples, &vocab, &cat, &mut a, &quick(30)).unwrap();
    let rb = fine_tune(&samples, &vocab, &cat, &mut b, &quick(30)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.metrics_jsonl(), rb.metrics_jsonl());
    assert_eq!(ra.intervals.len(), 6);
    assert!(ra.aborted_steps.is_empty());
    assert_eq!(ra.train_sequences + ra.heldout_sequences, 12);
    let first = ra.intervals.first().unwrap().mean_loss;
    let last = ra.intervals.last().unwrap().mean_loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn checkpoints_and_novelty_probe() {
    let (samples, vocab, mut params) = setup(6);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_interval: 4,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        novelty_eval_interval: 4,
        novelty_probes: 2,
        early_stop_novelty: Some(2.0),
        heldout_fraction: 0.0,
        ..quick(12)
    };
    let report = fine_tune(&samples, &vocab, &common::catalog(), &mut params, &cfg).unwrap();
    assert!(report.early_stopped);
    assert_eq!(report.steps_run, 4);
    assert_eq!(report.checkpoints.len(), 1);
    assert!(report.checkpoints[0].ends_with("step-000004.ckpt"));
    assert_eq!(load_checkpoint(&report.checkpoints[0]).unwrap(), params);
    let novelty = report.intervals.last().unwrap().novelty.unwrap();
    assert!((0.0..=1.0).contains(&novelty));
}

#[test]
fn bad_settings_are_rejected() {
    let (samples, vocab, mut params) = setup(4);
    let cat = common::catalog();
    for cfg in [
        TrainConfig { batch_size: 0, ..quick(1) },
        TrainConfig { heldout_fraction: 1.0, ..quick(1) },
        TrainConfig { checkpoint_interval: 2, ..quick(1) },
    ] {
        assert!(fine_tune(&samples, &vocab, &cat, &mut params, &cfg).is_err());
    }
    assert!(fine_tune(&[], &vocab, &cat, &mut params, &quick(1)).is_err());
    let narrow = ModelConfig {
        context_len: 8,
        ..params.config.clone()
    };
    let mut short = init_params(&narrow, 0).unwrap();
    assert!(fine_tune(&samples, &vocab, &cat, &mut short, &quick(1)).is_err());
}

#[test]
fn heldout_split_is_stable() {
    let samples = common::samples(&common::fixtures());
    let (train, held) = split_heldout(&samples, 0.3);
    assert_eq!(train.len() + held.len(), samples.len());
    assert!(!held.is_empty() && !train.is_empty());
    for s in &held {
        assert!(is_heldout(s, 0.3));
        assert!(is_heldout(s, 0.6));
    }
    assert!(split_heldout(&samples, 0.0).1.is_empty());
}

#[test]
fn warmup_is_linear() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(50), cfg.optimizer.learning_rate * 0.5);
    assert_eq!(cfg.lr_at(100), cfg.optimizer.learning_rate);
    assert_eq!(cfg.lr_at(5000), cfg.optimizer.learning_rate);
}

proptest! {
    #[test]
    fn adam_first_step_moves_each_coordinate_by_lr(
        grads in prop::collection::vec(-10.0f64..10.0, 1..20),
        lr in 1e-4f64..1e-1,
    ) {
        let mut p = vec![0.0f64; grads.len()];
        let mut state = AdamState::new(grads.len());
        adam_step(&mut p, &grads, &mut state, &AdamConfig::default(), lr).unwrap();
        for (x, g) in p.iter().zip(&grads) {
            if g.abs() > 1e-3 {
                prop_assert!((x + lr * g.signum()).abs() < lr * 1e-4);
            }
            prop_assert!(x.abs() <= lr * (1.0 + 1e-9));
        }
    }

    #[test]
    fn adam_aborts_on_any_nan(grads in prop::collection::vec(-1.0f64..1.0, 1..10), at in any::<prop::sample::Index>()) {
        let mut g = grads.clone();
        g[at.index(grads.len())] = f64::NAN;
        let mut p = vec![1.0f64; grads.len()];
        let mut state = AdamState::new(grads.len());
        prop_assert!(adam_step(&mut p, &g, &mut state, &AdamConfig::default(), 0.1).is_err());
        prop_assert_eq!(p, vec![1.0f64; grads.len()]);
        prop_assert_eq!(state.t, 0);
    }
}
