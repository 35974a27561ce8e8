//! Finite-difference verification of the hand-derived backward pass.
//!
//! Central differences of the train-mode loss are well defined because the
//! forward pass is pure: batch-norm running statistics are only *reported*
//! in the cache, never applied during the forward itself. Dimensions default
//! small so checking every coordinate of every tensor stays fast; the
//! backward code is dimension-agnostic, so correctness at small widths
//! transfers.

use crate::graph::build_segment;
use crate::model::forward::{model_forward, model_forward_cached, GraphBatch, Mode};
use crate::model::{ModelConfig, ModelParams};
use crate::records::FaceRecord;
use crate::train::{bce_loss, model_backward, TrainError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub n_segments: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub tau: f64,
    /// Central-difference step h.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    pub pos_weight: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            // Small widths keep the full sweep over every coordinate cheap;
            // the layer code has no width-dependent branches.
            model: ModelConfig {
                filter_dim: 8,
                edge_hidden: 6,
                d_visual: 7,
                d_audio: 5,
                ..Default::default()
            },
            n_segments: 5,
            min_nodes: 10,
            max_nodes: 20,
            tau: 0.9,
            step: 1e-6,
            tolerance: 1e-4,
            pos_weight: 1.3,
            seed: 42,
        }
    }
}

/// Worst relative error seen for one named tensor, across all segments and
/// coordinates.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub max_rel_err: f64,
    /// Per-tensor worst errors, in the fixed tensor-visit order.
    pub tensors: Vec<TensorCheck>,
    pub n_segments: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    /// Plain-text table, one row per tensor.
    pub fn to_text(&self) -> String {
        let width = self.tensors.iter().map(|t| t.name.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  max_rel_err\n", "tensor");
        for t in &self.tensors {
            out.push_str(&format!("{:<width$}  {:.3e}\n", t.name, t.max_rel_err));
        }
        out.push_str(&format!(
            "overall {:.3e} (tolerance {:.1e}, {} segments): {}\n",
            self.max_rel_err,
            self.tolerance,
            self.n_segments,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

fn random_records(
    rng: &mut ChaCha8Rng,
    n: usize,
    d_visual: usize,
    d_audio: usize,
) -> Vec<FaceRecord> {
    let ids = ["p0", "p1", "p2"];
    let n_ids = rng.gen_range(2..=3usize);
    let mut records: Vec<FaceRecord> = (0..n)
        .map(|_| FaceRecord {
            bbox: [
                rng.gen_range(0.05..0.6),
                rng.gen_range(0.05..0.6),
                rng.gen_range(0.05..0.3),
                rng.gen_range(0.05..0.3),
            ],
            time: rng.gen_range(0.0..n as f64 * 0.08),
            identity: ids[rng.gen_range(0..n_ids)].to_string(),
            visual_feat: (0..d_visual).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            audio_feat: (0..d_audio).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            label: Some(rng.gen_bool(0.4) as u8),
        })
        .collect();
    // Both classes present so the weighted loss exercises both branches.
    records[0].label = Some(1);
    records[1].label = Some(0);
    records
}

fn read_elem(params: &ModelParams<f64>, tensor: usize, elem: usize) -> f64 {
    let mut k = 0;
    let mut out = f64::NAN;
    params.visit_trainable(&mut |_, data, _| {
        if k == tensor {
            out = data[elem];
        }
        k += 1;
    });
    out
}

fn write_elem(params: &mut ModelParams<f64>, tensor: usize, elem: usize, value: f64) {
    let mut k = 0;
    params.visit_trainable_mut(&mut |_, data, _| {
        if k == tensor {
            data[elem] = value;
        }
        k += 1;
    });
}

/// Compare the analytic backward pass against central finite differences of
/// the train-mode BCE loss, for every coordinate of every trainable tensor
/// on several random segments. The error metric is
/// `|fd − analytic| / max(|fd|, |analytic|, 0.01)`.
pub fn check_gradients(cfg: &GradCheckConfig) -> Result<GradCheckReport, TrainError> {
    cfg.model.validate()?;
    if cfg.n_segments == 0 || cfg.min_nodes < 2 || cfg.max_nodes < cfg.min_nodes {
        return Err(TrainError::InvalidConfig(
            "gradient check needs ≥1 segment and 2 ≤ min_nodes ≤ max_nodes".into(),
        ));
    }
    if !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(TrainError::InvalidConfig("step and tolerance must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Fixed tensor schema from a throwaway instance.
    let mut names: Vec<(String, usize)> = Vec::new();
    ModelParams::<f64>::zeros(cfg.model)?
        .visit_trainable(&mut |name, data, _| names.push((name.to_string(), data.len())));
    let mut worst = vec![0f64; names.len()];

    let h = cfg.step;
    for seg_idx in 0..cfg.n_segments {
        let n = rng.gen_range(cfg.min_nodes..=cfg.max_nodes);
        let records = random_records(&mut rng, n, cfg.model.d_visual, cfg.model.d_audio);
        let segment = build_segment(records, cfg.tau, &format!("check:{seg_idx}"));
        let batch = GraphBatch::<f64>::from_segment(&segment)?;
        let labels = batch.labels_dense().expect("generator labels every node");
        let mut params = ModelParams::<f64>::init(cfg.model, rng.gen())?;

        let (scores, cache) = model_forward_cached(&batch, &params, Mode::Train)?;
        let (_, dlogits) = bce_loss(&scores, &labels, cfg.pos_weight)?;
        let analytic = model_backward(&batch, &params, &cache, &dlogits)?.to_map();

        let loss_of = |p: &ModelParams<f64>| -> Result<f64, TrainError> {
            let s = model_forward(&batch, p, Mode::Train)?;
            Ok(bce_loss(&s, &labels, cfg.pos_weight)?.0)
        };

        for (t, (name, len)) in names.iter().enumerate() {
            let grad = &analytic[name];
            for i in 0..*len {
                let orig = read_elem(&params, t, i);
                write_elem(&mut params, t, i, orig + h);
                let lp = loss_of(&params)?;
                write_elem(&mut params, t, i, orig - h);
                let lm = loss_of(&params)?;
                write_elem(&mut params, t, i, orig);
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(0.01);
                if rel > worst[t] {
                    worst[t] = rel;
                }
            }
        }
    }

    let tensors: Vec<TensorCheck> = names
        .into_iter()
        .zip(worst)
        .map(|((name, _), max_rel_err)| TensorCheck { name, max_rel_err })
        .collect();
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        max_rel_err,
        tensors,
        n_segments: cfg.n_segments,
    })
}
