//! Training loop: determinism, zero-epoch contract, abort on non-finite
//! loss, checkpoint resumption.

use hifi_core::data::{synth_pairs, DegradationSpec};
use hifi_core::train::{load_checkpoint, train, train_with, TrainConfig};
use hifi_core::{init_params_with, Shape, Tensor};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 2,
        learning_rate: 1e-3,
        crop: 16,
        seed: 5,
        ..Default::default()
    }
}

fn tiny_pairs(n: usize) -> Vec<hifi_core::ImagePair> {
    synth_pairs(n, 24, 24, &DegradationSpec::default(), 33).unwrap()
}

#[test]
fn zero_epochs_returns_initial_params() {
    let pairs = tiny_pairs(4);
    let cfg = TrainConfig { epochs: 0, ..tiny_config() };
    let out = train(&pairs, &cfg).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.steps_run, 0);
    let init = init_params_with(&cfg.net, cfg.seed).unwrap();
    for ((name, a), (_, b)) in out.params.named_tensors().iter().zip(init.named_tensors()) {
        assert!(a.bit_eq(b), "{name} must be untouched");
    }
}

#[test]
fn training_is_reproducible() {
    let pairs = tiny_pairs(4);
    let cfg = TrainConfig { max_steps: 4, ..tiny_config() };
    let a = train(&pairs, &cfg).unwrap();
    let b = train(&pairs, &cfg).unwrap();
    assert_eq!(a.history.len(), 4);
    for (ra, rb) in a.history.iter().zip(&b.history) {
        assert_eq!(ra.loss.to_bits(), rb.loss.to_bits(), "step {}", ra.step);
    }
    for ((name, ta), (_, tb)) in a.params.named_tensors().iter().zip(b.params.named_tensors()) {
        assert!(ta.bit_eq(tb), "{name} must be bitwise reproducible");
    }
}

#[test]
fn loss_decreases_on_tiny_run() {
    let pairs = tiny_pairs(6);
    let cfg = TrainConfig { epochs: 8, max_steps: 24, ..tiny_config() };
    let out = train(&pairs, &cfg).unwrap();
    assert_eq!(out.history.len(), 24);
    assert!(out.history.iter().all(|r| r.loss.is_finite()));
    let first = out.history[0].loss;
    let last = out.history.last().unwrap().loss;
    assert!(last < first, "loss should move: {first} -> {last}");
}

#[test]
fn non_finite_input_aborts_with_step_number() {
    let mut pairs = tiny_pairs(2);
    pairs[0].degraded = Tensor::full(Shape::new(1, 3, 24, 24), f64::NAN);
    pairs[1].degraded = Tensor::full(Shape::new(1, 3, 24, 24), f64::NAN);
    let cfg = TrainConfig { max_steps: 2, ..tiny_config() };
    let err = train(&pairs, &cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("step 1"), "diagnostic must name the step: {msg}");
}

#[test]
fn crop_too_large_is_a_usage_error() {
    let pairs = tiny_pairs(2);
    let cfg = TrainConfig { crop: 64, ..tiny_config() };
    assert!(train(&pairs, &cfg).is_err());
}

#[test]
fn checkpoint_resume_replays_identical_history() {
    let pairs = tiny_pairs(4);
    let dir = tempfile::tempdir().unwrap();

    // uninterrupted run: 6 steps
    let full_cfg = TrainConfig { epochs: 3, max_steps: 6, ..tiny_config() };
    let full = train(&pairs, &full_cfg).unwrap();

    // interrupted run: 3 steps + checkpoint, then resume for 3 more
    let head_cfg = TrainConfig {
        epochs: 3,
        max_steps: 3,
        checkpoint_every: 3,
        out_dir: Some(dir.path().to_path_buf()),
        ..tiny_config()
    };
    let _ = train(&pairs, &head_cfg).unwrap();
    let ckpt_path = dir.path().join("checkpoint_step_000003.hifiw");
    assert!(ckpt_path.exists());

    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    assert_eq!(ckpt.step, 3);
    let tail_cfg = TrainConfig { epochs: 3, max_steps: 6, ..tiny_config() };
    let tail = train_with(&pairs, &tail_cfg, Some(ckpt), |_| {}).unwrap();

    assert_eq!(tail.history.len(), 3);
    for (resumed, original) in tail.history.iter().zip(&full.history[3..]) {
        assert_eq!(resumed.step, original.step);
        assert_eq!(
            resumed.loss.to_bits(),
            original.loss.to_bits(),
            "step {} diverged after resume",
            resumed.step
        );
    }
    for ((name, a), (_, b)) in tail.params.named_tensors().iter().zip(full.params.named_tensors()) {
        assert!(a.bit_eq(b), "{name} must match the uninterrupted run");
    }
}

#[test]
fn config_validation_errors() {
    let bad_lr = TrainConfig { learning_rate: 0.0, ..tiny_config() };
    assert!(bad_lr.validate().is_err());
    let bad_batch = TrainConfig { batch_size: 0, ..tiny_config() };
    assert!(bad_batch.validate().is_err());
    let bad_beta = TrainConfig { beta1: 1.0, ..tiny_config() };
    assert!(bad_beta.validate().is_err());
}
