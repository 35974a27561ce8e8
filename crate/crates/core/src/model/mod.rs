//! The three-stream graph network over fused audio-visual node features.
//!
//! Pipeline (all widths for the default config, filter dim F = 64):
//!
//! 1. spatial projection: box (4) → 64, no activation;
//! 2. visual fuse: `[visual ∘ spatial]` (512+64) → F, then BN + ReLU;
//! 3. audio fuse: audio (512) → F, then BN + ReLU; the two branches are
//!    added to give the fused per-node feature `h`;
//! 4. per stream (forward / backward / undirected edge set): a pair-MLP
//!    edge aggregation (2F → hidden → F summed over in-edges), BN + ReLU;
//! 5. a neighbor-sum linear layer F → F whose weight/bias are a single
//!    tensor shared by all three streams, then per-stream BN + ReLU;
//! 6. a per-stream neighbor-sum linear head F → 1, no activation;
//! 7. the three head outputs are summed and squashed by a sigmoid.
//!
//! Ablation flags: `graph` off routes every stream over self-loops only
//! (per-node computation), `bi_dir` off keeps only the undirected stream,
//! `spatial_feat` off drops the box projection from the visual fuse input.

pub mod forward;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub use forward::{
    apply_bn_updates, batch_norm, edge_conv, fuse_features, model_forward, model_forward_cached,
    sage_conv, ForwardCache, GraphBatch, Mode,
};

/// Output width of the box projection. Fixed: the spatial feature is defined
/// as a 64-dimensional embedding of the 4 box coordinates regardless of the
/// filter dimension.
pub const SPATIAL_DIM: usize = 64;
/// Batch-norm variance guard.
pub const BN_EPS: f64 = 1e-5;
/// Batch-norm running-statistics update rate.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{op}: {message}")]
    Shape { op: &'static str, message: String },
    #[error("batch norm over zero nodes")]
    EmptyBatch,
}

pub(crate) fn shape_err(op: &'static str, message: impl Into<String>) -> ModelError {
    ModelError::Shape { op, message: message.into() }
}

/// Architecture knobs; everything else about the layer graph is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Filter dimension F: width of the fused features and of every
    /// graph-layer output except the scalar heads.
    pub filter_dim: usize,
    /// Hidden width of the per-edge pair MLP (defaults to `filter_dim`).
    pub edge_hidden: usize,
    pub d_visual: usize,
    pub d_audio: usize,
    /// Three streams (forward/backward/undirected) when true, otherwise a
    /// single undirected stream.
    pub bi_dir: bool,
    /// When false every stream sees self-loops only: scores become
    /// independent of the edge sets (the per-node baseline).
    pub graph: bool,
    /// Include the box projection in the visual fuse input.
    pub spatial_feat: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            filter_dim: 64,
            edge_hidden: 64,
            d_visual: crate::records::DEFAULT_FEATURE_DIM,
            d_audio: crate::records::DEFAULT_FEATURE_DIM,
            bi_dir: true,
            graph: true,
            spatial_feat: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.filter_dim == 0 || self.edge_hidden == 0 || self.d_visual == 0 || self.d_audio == 0
        {
            return Err(ModelError::InvalidConfig("all dimensions must be positive".to_string()));
        }
        if !self.graph && self.bi_dir {
            return Err(ModelError::InvalidConfig(
                "graph=off requires bi_dir=off (directed streams are meaningless without edges)"
                    .to_string(),
            ));
        }
        Ok(())
    }

    /// Width of the visual fuse input: the visual feature, concatenated with
    /// the spatial projection unless that ablation is off.
    pub fn visual_in(&self) -> usize {
        self.d_visual + if self.spatial_feat { SPATIAL_DIM } else { 0 }
    }

    /// Streams instantiated by this config, in fixed order.
    pub fn streams(&self) -> &'static [Stream] {
        if self.bi_dir {
            &Stream::ALL
        } else {
            &[Stream::Undirected]
        }
    }
}

/// Which edge set a stream aggregates over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stream {
    Forward,
    Backward,
    Undirected,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Forward, Stream::Backward, Stream::Undirected];

    /// Short label used in tensor names and reports.
    pub fn label(self) -> &'static str {
        match self {
            Stream::Forward => "fwd",
            Stream::Backward => "bwd",
            Stream::Undirected => "und",
        }
    }
}

/// A dense linear layer; weight stored `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn zeros(fan_out: usize, fan_in: usize) -> Self {
        Linear { weight: Matrix::zeros(fan_out, fan_in), bias: vec![S::zero(); fan_out] }
    }

    /// Uniform ±sqrt(6/(fan_in+fan_out)) weights, zero bias. Draws are f64
    /// (then narrowed) so f32 and f64 models start from identical values.
    fn glorot(fan_out: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight =
            Matrix::from_fn(fan_out, fan_in, |_, _| S::from_real(rng.gen_range(-limit..=limit)));
        Linear { weight, bias: vec![S::zero(); fan_out] }
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix<S>) -> Matrix<S> {
        x.affine(&self.weight, &self.bias)
    }
}

/// Per-feature batch normalization parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub momentum: f64,
    pub eps: f64,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![S::one(); dim],
            beta: vec![S::zero(); dim],
            running_mean: vec![S::zero(); dim],
            running_var: vec![S::one(); dim],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// The learned per-edge transformation g of the edge aggregation:
/// `Linear(2F → H) → ReLU → Linear(H → F)`, applied to `[center ∘ neighbor]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMlp<S> {
    pub hidden: Linear<S>,
    pub out: Linear<S>,
}

/// Per-stream parameters (everything not shared across streams).
#[derive(Clone, Debug, PartialEq)]
pub struct StreamParams<S> {
    pub pair_mlp: PairMlp<S>,
    pub edge_bn: BatchNorm<S>,
    pub mid_bn: BatchNorm<S>,
    /// Scalar neighbor-sum head, weight `[1 × F]`.
    pub head: Linear<S>,
}

/// Every learnable tensor of the network, plus BN running statistics.
///
/// The mid-layer weight/bias (`sage_mid`) exists exactly once and is used by
/// all streams; its gradient is the sum of the streams' contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub spatial_proj: Option<Linear<S>>,
    pub visual_fuse: Linear<S>,
    pub visual_bn: BatchNorm<S>,
    pub audio_fuse: Linear<S>,
    pub audio_bn: BatchNorm<S>,
    pub sage_mid: Linear<S>,
    /// Active streams in the fixed order of [`ModelConfig::streams`].
    pub streams: Vec<(Stream, StreamParams<S>)>,
}

impl<S: Scalar> ModelParams<S> {
    /// Seeded deterministic initialization. Linears draw in the fixed tensor
    /// order (spatial, visual fuse, audio fuse, shared mid, then per stream:
    /// pair MLP hidden, pair MLP out, head); BN starts at γ=1, β=0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.filter_dim;
        let spatial_proj = config.spatial_feat.then(|| Linear::glorot(SPATIAL_DIM, 4, &mut rng));
        let visual_fuse = Linear::glorot(f, config.visual_in(), &mut rng);
        let audio_fuse = Linear::glorot(f, config.d_audio, &mut rng);
        let sage_mid = Linear::glorot(f, f, &mut rng);
        let streams = config
            .streams()
            .iter()
            .map(|&s| {
                let pair_mlp = PairMlp {
                    hidden: Linear::glorot(config.edge_hidden, 2 * f, &mut rng),
                    out: Linear::glorot(f, config.edge_hidden, &mut rng),
                };
                let params = StreamParams {
                    pair_mlp,
                    edge_bn: BatchNorm::new(f),
                    mid_bn: BatchNorm::new(f),
                    head: Linear::glorot(1, f, &mut rng),
                };
                (s, params)
            })
            .collect();
        Ok(ModelParams {
            config,
            spatial_proj,
            visual_fuse,
            visual_bn: BatchNorm::new(f),
            audio_fuse,
            audio_bn: BatchNorm::new(f),
            sage_mid,
            streams,
        })
    }

    /// All-zero parameters (γ too); the shell the checkpoint loader fills.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        let mut params = Self::init(config, 0)?;
        params.visit_trainable_mut(&mut |_, data, _| data.fill(S::zero()));
        Ok(params)
    }

    pub fn stream(&self, which: Stream) -> Option<&StreamParams<S>> {
        self.streams.iter().find(|(s, _)| *s == which).map(|(_, p)| p)
    }

    /// Swap the full parameter sets of two streams (used by the
    /// time-reversal identity check).
    pub fn swap_streams(&mut self, a: Stream, b: Stream) {
        let ia = self.streams.iter().position(|(s, _)| *s == a);
        let ib = self.streams.iter().position(|(s, _)| *s == b);
        if let (Some(ia), Some(ib)) = (ia, ib) {
            let pa = self.streams[ia].1.clone();
            let pb = std::mem::replace(&mut self.streams[ib].1, pa);
            self.streams[ia].1 = pb;
        }
    }

    /// Visit every trainable tensor (weights, biases, γ, β — running stats
    /// excluded) in the fixed order that also defines gradient-store and
    /// optimizer-state alignment.
    pub fn visit_trainable(&self, f: &mut impl FnMut(&str, &[S], &[usize])) {
        let visit_linear = |name: &str, l: &Linear<S>, f: &mut dyn FnMut(&str, &[S], &[usize])| {
            f(&format!("{name}.weight"), l.weight.data(), &[l.fan_out(), l.fan_in()]);
            f(&format!("{name}.bias"), &l.bias, &[l.fan_out()]);
        };
        let visit_bn = |name: &str, bn: &BatchNorm<S>, f: &mut dyn FnMut(&str, &[S], &[usize])| {
            f(&format!("{name}.gamma"), &bn.gamma, &[bn.dim()]);
            f(&format!("{name}.beta"), &bn.beta, &[bn.dim()]);
        };
        if let Some(sp) = &self.spatial_proj {
            visit_linear("spatial_proj", sp, f);
        }
        visit_linear("visual_fuse", &self.visual_fuse, f);
        visit_bn("visual_bn", &self.visual_bn, f);
        visit_linear("audio_fuse", &self.audio_fuse, f);
        visit_bn("audio_bn", &self.audio_bn, f);
        visit_linear("sage_mid", &self.sage_mid, f);
        for (stream, sp) in &self.streams {
            let tag = stream.label();
            visit_linear(&format!("edge_conv.{tag}.hidden"), &sp.pair_mlp.hidden, f);
            visit_linear(&format!("edge_conv.{tag}.out"), &sp.pair_mlp.out, f);
            visit_bn(&format!("edge_bn.{tag}"), &sp.edge_bn, f);
            visit_bn(&format!("mid_bn.{tag}"), &sp.mid_bn, f);
            visit_linear(&format!("head.{tag}"), &sp.head, f);
        }
    }

    /// Mutable variant of [`visit_trainable`], same order.
    pub fn visit_trainable_mut(&mut self, f: &mut impl FnMut(&str, &mut [S], &[usize])) {
        fn linear<S: Scalar>(
            name: &str,
            l: &mut Linear<S>,
            f: &mut impl FnMut(&str, &mut [S], &[usize]),
        ) {
            let (rows, cols) = (l.fan_out(), l.fan_in());
            f(&format!("{name}.weight"), l.weight.data_mut(), &[rows, cols]);
            f(&format!("{name}.bias"), &mut l.bias, &[rows]);
        }
        fn bn<S: Scalar>(
            name: &str,
            b: &mut BatchNorm<S>,
            f: &mut impl FnMut(&str, &mut [S], &[usize]),
        ) {
            let dim = b.dim();
            f(&format!("{name}.gamma"), &mut b.gamma, &[dim]);
            f(&format!("{name}.beta"), &mut b.beta, &[dim]);
        }
        if let Some(sp) = &mut self.spatial_proj {
            linear("spatial_proj", sp, f);
        }
        linear("visual_fuse", &mut self.visual_fuse, f);
        bn("visual_bn", &mut self.visual_bn, f);
        linear("audio_fuse", &mut self.audio_fuse, f);
        bn("audio_bn", &mut self.audio_bn, f);
        linear("sage_mid", &mut self.sage_mid, f);
        for (stream, sp) in &mut self.streams {
            let tag = stream.label();
            linear(&format!("edge_conv.{tag}.hidden"), &mut sp.pair_mlp.hidden, f);
            linear(&format!("edge_conv.{tag}.out"), &mut sp.pair_mlp.out, f);
            bn(&format!("edge_bn.{tag}"), &mut sp.edge_bn, f);
            bn(&format!("mid_bn.{tag}"), &mut sp.mid_bn, f);
            linear(&format!("head.{tag}"), &mut sp.head, f);
        }
    }

    /// Visit the full persistent state: trainable tensors plus BN running
    /// statistics (what a checkpoint stores).
    pub fn visit_state(&self, f: &mut impl FnMut(&str, &[S], &[usize])) {
        self.visit_trainable(&mut |name, data, shape| f(name, data, shape));
        let mut running = |name: &str, bn: &BatchNorm<S>| {
            f(&format!("{name}.running_mean"), &bn.running_mean, &[bn.dim()]);
            f(&format!("{name}.running_var"), &bn.running_var, &[bn.dim()]);
        };
        running("visual_bn", &self.visual_bn);
        running("audio_bn", &self.audio_bn);
        for (stream, sp) in &self.streams {
            running(&format!("edge_bn.{}", stream.label()), &sp.edge_bn);
            running(&format!("mid_bn.{}", stream.label()), &sp.mid_bn);
        }
    }

    /// Mutable variant of [`visit_state`], same order.
    pub fn visit_state_mut(&mut self, f: &mut impl FnMut(&str, &mut [S], &[usize])) {
        self.visit_trainable_mut(&mut |name, data, shape| f(name, data, shape));
        fn running<S: Scalar>(
            name: &str,
            bn: &mut BatchNorm<S>,
            f: &mut impl FnMut(&str, &mut [S], &[usize]),
        ) {
            let dim = bn.dim();
            f(&format!("{name}.running_mean"), &mut bn.running_mean, &[dim]);
            f(&format!("{name}.running_var"), &mut bn.running_var, &[dim]);
        }
        running("visual_bn", &mut self.visual_bn, f);
        running("audio_bn", &mut self.audio_bn, f);
        for (stream, sp) in &mut self.streams {
            let tag = stream.label();
            running(&format!("edge_bn.{tag}"), &mut sp.edge_bn, f);
            running(&format!("mid_bn.{tag}"), &mut sp.mid_bn, f);
        }
    }
}

/// Count of trainable scalars (running statistics excluded).
pub fn param_count<S: Scalar>(params: &ModelParams<S>) -> usize {
    let mut count = 0;
    params.visit_trainable(&mut |_, data, _| count += data.len());
    count
}

/// Parameter count with its serialized sizes at both precisions.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct ParamSizes {
    pub trainable: usize,
    pub bytes_f32: usize,
    pub bytes_f64: usize,
}

pub fn param_sizes<S: Scalar>(params: &ModelParams<S>) -> ParamSizes {
    let trainable = param_count(params);
    ParamSizes { trainable, bytes_f32: trainable * 4, bytes_f64: trainable * 8 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_projection_alone_has_320_parameters() {
        let l = Linear::<f64>::zeros(SPATIAL_DIM, 4);
        assert_eq!(l.weight.data().len() + l.bias.len(), 4 * 64 + 64);
    }

    #[test]
    fn default_param_count_is_exactly_112707() {
        let params = ModelParams::<f64>::init(ModelConfig::default(), 0).unwrap();
        assert_eq!(param_count(&params), 112_707);
        let sizes = param_sizes(&params);
        assert_eq!(sizes.bytes_f32, 450_828);
    }

    #[test]
    fn shared_mid_layer_appears_exactly_once() {
        let params = ModelParams::<f64>::init(ModelConfig::default(), 0).unwrap();
        let mut mid_tensors = 0;
        params.visit_trainable(&mut |name, _, _| {
            if name.starts_with("sage_mid.") {
                mid_tensors += 1;
            }
        });
        assert_eq!(mid_tensors, 2, "sage_mid must contribute one weight and one bias");
    }

    #[test]
    fn ablations_change_the_tensor_set() {
        let base = ModelConfig::default();
        let no_spatial = ModelConfig { spatial_feat: false, ..base };
        let p = ModelParams::<f64>::init(no_spatial, 0).unwrap();
        assert!(p.spatial_proj.is_none());
        assert_eq!(p.visual_fuse.fan_in(), base.d_visual);

        let single = ModelConfig { bi_dir: false, ..base };
        let p = ModelParams::<f64>::init(single, 0).unwrap();
        assert_eq!(p.streams.len(), 1);
        assert_eq!(p.streams[0].0, Stream::Undirected);

        let bad = ModelConfig { graph: false, bi_dir: true, ..base };
        assert!(ModelParams::<f64>::init(bad, 0).is_err());
    }

    #[test]
    fn init_is_deterministic_and_precision_agnostic() {
        let a = ModelParams::<f64>::init(ModelConfig::default(), 7).unwrap();
        let b = ModelParams::<f64>::init(ModelConfig::default(), 7).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::<f32>::init(ModelConfig::default(), 7).unwrap();
        // Same draws, narrowed.
        assert_eq!(c.visual_fuse.weight.get(0, 0), a.visual_fuse.weight.get(0, 0) as f32);
    }

    #[test]
    fn visit_orders_agree_between_const_and_mut() {
        let mut params = ModelParams::<f64>::init(ModelConfig::default(), 1).unwrap();
        let mut names_const = Vec::new();
        params.visit_trainable(&mut |n, _, _| names_const.push(n.to_string()));
        let mut names_mut = Vec::new();
        params.visit_trainable_mut(&mut |n, _, _| names_mut.push(n.to_string()));
        assert_eq!(names_const, names_mut);
        assert!(names_const.contains(&"edge_conv.fwd.hidden.weight".to_string()));
        assert!(names_const.contains(&"head.und.bias".to_string()));
    }
}
