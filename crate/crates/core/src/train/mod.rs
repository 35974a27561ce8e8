//! Training engine: weighted BCE loss, hand-derived backward pass, Adam,
//! cosine learning-rate schedule, and the seeded epoch loop with
//! best-validation checkpoint retention.

mod adam;
mod backward;
mod grad_check;
mod loss;
mod schedule;

pub use adam::{adam_step, AdamState};
pub use backward::{model_backward, GradStore};
pub use grad_check::{check_gradients, GradCheckConfig, GradCheckReport, TensorCheck};
pub use loss::bce_loss;
pub use schedule::cosine_lr;

use crate::graph::GraphSegment;
use crate::metrics::{map_over_groups, PredEntry, TiePolicy};
use crate::model::forward::{
    apply_bn_updates, model_forward, model_forward_cached, GraphBatch, Mode,
};
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("segment {segment} node {index} has no label; training needs fully labeled segments")]
    Unlabeled { segment: String, index: usize },
    #[error("no segments to train on")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

/// Which scalar type a run materializes its tensors in. The core is generic;
/// this is the knob callers (CLI, configs) dispatch on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::F64
    }
}

/// Everything the epoch loop needs. Serde-backed so a config file section
/// maps onto it directly; unknown keys are rejected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Temporal connection window in seconds.
    pub tau: f64,
    /// Segment size used when partitioning streams into graphs.
    pub nodes_per_graph: usize,
    pub filter_dim: usize,
    pub edge_hidden: usize,
    /// Initial learning rate of the cosine schedule.
    pub lr0: f64,
    pub epochs: usize,
    /// Segments per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Three-stream bidirectional architecture; off = undirected stream only.
    pub bi_dir: bool,
    /// Graph ablation: off restricts every aggregation to self-loops.
    pub graph: bool,
    /// Spatial ablation: off drops the box-geometry projection.
    pub spatial_feat: bool,
    /// Positive-class weight of the BCE loss.
    pub pos_weight: f64,
    /// Fraction of segments held out for validation (by segment, seeded).
    pub val_fraction: f64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.9,
            nodes_per_graph: 2000,
            filter_dim: 64,
            edge_hidden: 64,
            lr0: 5e-3,
            epochs: 70,
            batch_size: 16,
            seed: 0,
            bi_dir: true,
            graph: true,
            spatial_feat: true,
            pos_weight: 1.0,
            val_fraction: 0.2,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be finite and non-negative");
        }
        if self.nodes_per_graph == 0 || self.filter_dim == 0 || self.edge_hidden == 0 {
            return bad("nodes_per_graph, filter_dim and edge_hidden must be positive");
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.pos_weight > 0.0 && self.pos_weight.is_finite()) {
            return bad("pos_weight must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        if !self.graph && self.bi_dir {
            return bad("graph=off forces bi_dir=off (streams differ only via edges)");
        }
        Ok(())
    }

    /// The model shape this run trains, given the data's feature widths.
    pub fn model_config(&self, d_visual: usize, d_audio: usize) -> ModelConfig {
        ModelConfig {
            filter_dim: self.filter_dim,
            edge_hidden: self.edge_hidden,
            d_visual,
            d_audio,
            bi_dir: self.bi_dir,
            graph: self.graph,
            spatial_feat: self.spatial_feat,
        }
    }
}

/// One history row; `val_map` is present when a validation split exists and
/// at least one validation group had positives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_map: Option<f64>,
}

/// History rows as the CSV the CLI emits: `epoch,lr,train_loss,val_map`
/// (empty cell when no validation value exists).
pub fn history_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_map\n");
    for r in rows {
        let vm = r.val_map.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, vm));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainResult<S> {
    /// The retained checkpoint: parameters of the best validation epoch, or
    /// the final parameters when no validation score was ever available.
    pub params: ModelParams<S>,
    pub history: Vec<EpochRow>,
    pub best_epoch: Option<usize>,
    pub best_val_map: Option<f64>,
}

/// Mutable optimization state, exposed for callers that drive epochs
/// manually (the packaged [`train`] loop covers the normal path).
pub struct TrainState<S> {
    pub params: ModelParams<S>,
    pub adam: AdamState<S>,
}

/// Run one optimization step on a prepared batch: train-mode forward, BCE,
/// backward, BN running-stat update, Adam. Returns the batch loss.
pub fn train_step<S: Scalar>(
    state: &mut TrainState<S>,
    batch: &GraphBatch<S>,
    labels: &[u8],
    pos_weight: f64,
    lr: f64,
) -> Result<f64, TrainError> {
    let (scores, cache) = model_forward_cached(batch, &state.params, Mode::Train)?;
    let (loss, dlogits) = bce_loss(&scores, labels, S::from_real(pos_weight))?;
    let grads = model_backward(batch, &state.params, &cache, &dlogits)?;
    apply_bn_updates(&mut state.params, &cache);
    adam_step(&mut state.params, &grads, &mut state.adam, S::from_real(lr))?;
    Ok(loss.to_real())
}

fn validation_map<S: Scalar>(
    params: &ModelParams<S>,
    batches: &[GraphBatch<S>],
    labels: &[Vec<u8>],
    val_idx: &[usize],
) -> Result<Option<f64>, TrainError> {
    let mut entries = Vec::new();
    for &i in val_idx {
        let scores = model_forward(&batches[i], params, Mode::Eval)?;
        let segment_id = batches[i].segment_ids()[0].clone();
        for (node_index, (&s, &label)) in scores.iter().zip(&labels[i]).enumerate() {
            entries.push(PredEntry {
                segment_id: segment_id.clone(),
                node_index,
                score: s.to_real(),
                label,
            });
        }
    }
    match map_over_groups(&entries, TiePolicy::Stable) {
        Ok(report) => Ok(Some(report.mean_ap)),
        Err(e) => {
            log::warn!("validation mAP unavailable this epoch: {e}");
            Ok(None)
        }
    }
}

/// Train on fully labeled segments: seeded validation split by segment,
/// seeded per-epoch shuffling into mini-batches of `batch_size` segments,
/// cosine-annealed Adam, per-epoch history, best-validation retention.
/// `epochs == 0` runs validation only and returns the initial parameters
/// with an empty history.
pub fn train<S: Scalar>(
    dataset: &[GraphSegment],
    cfg: &TrainConfig,
) -> Result<TrainResult<S>, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for seg in dataset {
        if let Some(index) = seg.nodes.iter().position(|n| n.label.is_none()) {
            return Err(TrainError::Unlabeled { segment: seg.segment_id.clone(), index });
        }
    }
    let d_visual = dataset[0].nodes[0].visual_feat.len();
    let d_audio = dataset[0].nodes[0].audio_feat.len();
    let model_cfg = cfg.model_config(d_visual, d_audio);
    let params = ModelParams::<S>::init(model_cfg, cfg.seed)?;

    let batches: Vec<GraphBatch<S>> =
        dataset.iter().map(GraphBatch::from_segment).collect::<Result<_, _>>()?;
    let labels: Vec<Vec<u8>> =
        batches.iter().map(|b| b.labels_dense().expect("labels checked above")).collect();

    // Parameter init consumes stream 0 of the seed; the loop's shuffles use
    // their own stream so adding epochs never perturbs the init.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if cfg.val_fraction > 0.0 && dataset.len() >= 2 {
        (((dataset.len() as f64) * cfg.val_fraction).round() as usize).clamp(1, dataset.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);

    let mut state = TrainState { adam: AdamState::for_params(&params), params };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams<S>)> = None;

    if cfg.epochs == 0 {
        let vm = if n_val > 0 {
            validation_map(&state.params, &batches, &labels, val_idx)?
        } else {
            None
        };
        return Ok(TrainResult {
            params: state.params,
            history,
            best_epoch: None,
            best_val_map: vm,
        });
    }

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg);
        let mut epoch_order = train_idx.to_vec();
        epoch_order.shuffle(&mut rng);
        let mut loss_sum = 0f64;
        let mut node_sum = 0usize;
        for chunk in epoch_order.chunks(cfg.batch_size) {
            let parts: Vec<&GraphBatch<S>> = chunk.iter().map(|&i| &batches[i]).collect();
            let joint = GraphBatch::union(&parts)?;
            let joint_labels: Vec<u8> =
                chunk.iter().flat_map(|&i| labels[i].iter().copied()).collect();
            let loss = train_step(&mut state, &joint, &joint_labels, cfg.pos_weight, lr)?;
            loss_sum += loss * joint.n_nodes() as f64;
            node_sum += joint.n_nodes();
        }
        let train_loss = loss_sum / node_sum.max(1) as f64;
        let val_map = if n_val > 0 {
            validation_map(&state.params, &batches, &labels, val_idx)?
        } else {
            None
        };
        if let Some(vm) = val_map {
            if best.as_ref().map_or(true, |(b, _, _)| vm > *b) {
                best = Some((vm, epoch, state.params.clone()));
            }
        }
        history.push(EpochRow { epoch, lr, train_loss, val_map });
        log::debug!("epoch {epoch}: lr {lr:.3e}, train loss {train_loss:.4}, val mAP {val_map:?}");
    }

    let (params_out, best_epoch, best_val_map) = match best {
        Some((vm, e, p)) => (p, Some(e), Some(vm)),
        None => (state.params, None, None),
    };
    Ok(TrainResult { params: params_out, history, best_epoch, best_val_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_segment;
    use crate::records::FaceRecord;

    fn labeled_segment(seed: u64, n_frames: usize, id_suffix: &str) -> GraphSegment {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = Vec::new();
        for k in 0..n_frames {
            for id in ["a", "b"] {
                nodes.push(FaceRecord {
                    bbox: [0.3, 0.3, 0.2, 0.2],
                    time: k as f64 / 25.0,
                    identity: id.to_string(),
                    visual_feat: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    audio_feat: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    label: Some(rng.gen_bool(0.5) as u8),
                });
            }
        }
        build_segment(nodes, 0.2, format!("seg{id_suffix}"))
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            filter_dim: 4,
            edge_hidden: 4,
            epochs: 2,
            batch_size: 2,
            val_fraction: 0.25,
            ..Default::default()
        }
    }

    #[test]
    fn zero_lr_one_epoch_keeps_trainable_params() {
        let segs = vec![labeled_segment(1, 5, "0")];
        let cfg = TrainConfig { lr0: 0.0, epochs: 1, val_fraction: 0.0, ..tiny_cfg() };
        let result = train::<f64>(&segs, &cfg).unwrap();
        let fresh = ModelParams::<f64>::init(cfg.model_config(3, 2), cfg.seed).unwrap();
        let mut same = true;
        let mut got = Vec::new();
        result.params.visit_trainable(&mut |_, d, _| got.extend_from_slice(d));
        let mut want = Vec::new();
        fresh.visit_trainable(&mut |_, d, _| want.extend_from_slice(d));
        for (g, w) in got.iter().zip(&want) {
            same &= g == w;
        }
        assert!(same, "zero learning rate must not move trainable parameters");
        assert_eq!(result.history.len(), 1);
        assert!(result.history[0].train_loss.is_finite());
    }

    #[test]
    fn same_seed_replays_identical_history() {
        let segs: Vec<GraphSegment> =
            (0..4).map(|i| labeled_segment(i, 4, &i.to_string())).collect();
        let cfg = tiny_cfg();
        let a = train::<f64>(&segs, &cfg).unwrap();
        let b = train::<f64>(&segs, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn unlabeled_node_is_reported_with_location() {
        let mut seg = labeled_segment(3, 3, "x");
        seg.nodes[2].label = None;
        let err = train::<f64>(&[seg], &tiny_cfg()).unwrap_err();
        match err {
            TrainError::Unlabeled { segment, index } => {
                assert_eq!(segment, "segx");
                assert_eq!(index, 2);
            }
            other => panic!("expected Unlabeled, got {other}"),
        }
    }

    #[test]
    fn zero_epochs_is_validation_only() {
        let segs: Vec<GraphSegment> =
            (0..3).map(|i| labeled_segment(10 + i, 4, &i.to_string())).collect();
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let result = train::<f64>(&segs, &cfg).unwrap();
        assert!(result.history.is_empty());
        assert!(result.best_val_map.is_some());
    }

    #[test]
    fn history_csv_round_trips_shape() {
        let rows = vec![
            EpochRow { epoch: 0, lr: 5e-3, train_loss: 0.7, val_map: Some(0.5) },
            EpochRow { epoch: 1, lr: 2.5e-3, train_loss: 0.6, val_map: None },
        ];
        let csv = history_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,lr,train_loss,val_map"));
        assert_eq!(lines.next(), Some("0,0.005,0.7,0.5"));
        assert_eq!(lines.next(), Some("1,0.0025,0.6,"));
    }

    #[test]
    fn config_validation_cross_checks_flags() {
        let cfg = TrainConfig { graph: false, bi_dir: true, ..Default::default() };
        assert!(cfg.validate().is_err());
        let ok = TrainConfig { graph: false, bi_dir: false, ..Default::default() };
        assert!(ok.validate().is_ok());
    }
}
