//! End-to-end checks of the training loop: analytic gradients against
//! finite differences, loss descent on learnable data, determinism, and
//! checkpoint round trips that preserve scores bit for bit.

mod common;

use speakergraph::checkpoint::{self, Checkpoint};
use speakergraph::graph::GraphSegment;
use speakergraph::model::{model_forward, GraphBatch, Mode};
use speakergraph::synth::{bench_scenes, build_dataset, SceneConfig};
use speakergraph::train::{check_gradients, train, GradCheckConfig, TrainConfig, TrainResult};

fn small_dataset() -> Vec<GraphSegment> {
    let base =
        SceneConfig { duration: 6.0, d_visual: 8, d_audio: 8, seed: 40, ..Default::default() };
    build_dataset(&bench_scenes(&base, 2), 150, 0.9).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        filter_dim: 8,
        edge_hidden: 8,
        nodes_per_graph: 150,
        epochs: 6,
        batch_size: 2,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let report = check_gradients(&GradCheckConfig::default()).unwrap();
    assert!(
        report.passed(),
        "worst relative error {:.3e} exceeds {:.1e}:\n{}",
        report.max_rel_err,
        report.tolerance,
        report.to_text()
    );
    let names: Vec<&str> = report.tensors.iter().map(|t| t.name.as_str()).collect();
    for expected in [
        "spatial_proj.weight",
        "visual_bn.gamma",
        "audio_fuse.bias",
        "sage_mid.weight",
        "edge_conv.fwd.hidden.weight",
        "head.bwd.bias",
        "edge_bn.und.beta",
    ] {
        assert!(names.contains(&expected), "{expected} missing from the sweep: {names:?}");
    }
}

#[test]
fn loss_descends_on_planted_signal() {
    let dataset = small_dataset();
    let mut cfg = small_config();
    cfg.val_fraction = 0.0;
    let result: TrainResult<f64> = train(&dataset, &cfg).unwrap();
    assert_eq!(result.history.len(), cfg.epochs);
    let losses: Vec<f64> = result.history.iter().map(|r| r.train_loss).collect();
    assert!(
        losses.last().unwrap() < &losses[0],
        "final loss {:.4} did not improve on the initial {:.4}",
        losses.last().unwrap(),
        losses[0]
    );
    assert!(
        losses[..4].windows(2).all(|w| w[1] < w[0]),
        "early epochs should descend monotonically, got {losses:?}"
    );
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(min < 0.3 * losses[0], "descent too shallow: {losses:?}");

    // Train-mode passes must have folded batch statistics into the
    // running estimates.
    assert!(
        result.params.visual_bn.running_mean.iter().any(|&m| m != 0.0),
        "running statistics never updated"
    );
}

#[test]
fn seeded_training_is_deterministic() {
    let dataset = small_dataset();
    let cfg = small_config();
    let a: TrainResult<f64> = train(&dataset, &cfg).unwrap();
    let b: TrainResult<f64> = train(&dataset, &cfg).unwrap();
    assert_eq!(a.params, b.params, "identical seeds must yield identical parameters");
    let loss_a: Vec<f64> = a.history.iter().map(|r| r.train_loss).collect();
    let loss_b: Vec<f64> = b.history.iter().map(|r| r.train_loss).collect();
    assert_eq!(loss_a, loss_b, "identical seeds must replay the identical loss curve");
    assert_eq!(a.best_epoch, b.best_epoch);
}

#[test]
fn checkpoint_round_trip_preserves_scores_exactly() {
    let dataset = small_dataset();
    let mut cfg = small_config();
    cfg.epochs = 2;
    let result: TrainResult<f64> = train(&dataset, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    checkpoint::save(&path, &result.params, Some(&cfg)).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.train.as_ref(), Some(&cfg), "training config rides along");
    let params = loaded.to_params::<f64>().unwrap();
    assert_eq!(params, result.params, "every tensor survives the JSON round trip bit for bit");

    let batch = GraphBatch::from_segment(&dataset[0]).unwrap();
    let before = model_forward(&batch, &result.params, Mode::Eval).unwrap();
    let after = model_forward(&batch, &params, Mode::Eval).unwrap();
    assert_eq!(before, after, "reloaded parameters must reproduce identical scores");
}

#[test]
fn checkpoint_narrows_to_f32_and_back() {
    let dataset = small_dataset();
    let mut cfg = small_config();
    cfg.epochs = 1;
    cfg.graph = false;
    cfg.bi_dir = false;
    let result: TrainResult<f32> = train(&dataset, &cfg).unwrap();
    let ckpt = Checkpoint::from_params(&result.params, None);
    let restored = ckpt.to_params::<f32>().unwrap();
    assert_eq!(restored, result.params, "f32 values are exactly representable in the format");
}

#[test]
fn single_stream_config_trains() {
    let dataset = small_dataset();
    let mut cfg = small_config();
    cfg.bi_dir = false;
    cfg.epochs = 2;
    let result: TrainResult<f64> = train(&dataset, &cfg).unwrap();
    assert_eq!(result.params.streams.len(), 1);
    assert!(result.history.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn schedule_and_history_are_coherent() {
    let dataset = small_dataset();
    let cfg = small_config();
    let result: TrainResult<f64> = train(&dataset, &cfg).unwrap();
    let lrs: Vec<f64> = result.history.iter().map(|r| r.lr).collect();
    assert!((lrs[0] - cfg.lr0).abs() < 1e-12, "first epoch runs at the peak rate");
    assert!(
        lrs.windows(2).all(|w| w[1] <= w[0] + 1e-15),
        "cosine schedule never increases: {lrs:?}"
    );
    assert!(*lrs.last().unwrap() > 0.0, "the final epoch still takes steps");

    // Epochs are numbered from 0 and the validation column tracks a real
    // split (20% of 4 segments rounds to at least one held-out segment).
    assert!(result.history.iter().enumerate().all(|(i, r)| r.epoch == i));
    assert!(result.best_val_map.is_some());
    let best = result.best_val_map.unwrap();
    let seen_max =
        result.history.iter().filter_map(|r| r.val_map).fold(f64::NEG_INFINITY, f64::max);
    assert!((best - seen_max).abs() < 1e-15, "best_val_map is the max of the history column");
}

#[test]
fn unlabeled_nodes_are_rejected_up_front() {
    let mut dataset = small_dataset();
    dataset[0].nodes[3].label = None;
    let err = train::<f64>(&dataset, &small_config()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("label") || msg.contains("unlabeled"), "unhelpful error: {msg}");
}
