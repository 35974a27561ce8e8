//! Forward computation of the network, with the activation caches the
//! backward pass consumes.
//!
//! Forward is pure: train mode *computes* updated BN running statistics and
//! stashes them in the cache, but mutates nothing — the training loop applies
//! them via [`apply_bn_updates`] after each step. This is what makes central
//! finite differences of the train-mode loss well defined.
//!
//! The per-edge pair MLP is evaluated in factored form: with the first-layer
//! weight split as `W1 = [W1L | W1R]` over the (center ∘ neighbor)
//! concatenation, `W1·[x_v ∘ x_w] = W1L·x_v + W1R·x_w`, so both halves are
//! projected once per node and each edge costs O(hidden) instead of
//! O(hidden·width). This is exact algebra, not an approximation; tests check
//! it against a naive per-edge concatenation evaluation.

use crate::graph::{EdgeSet, GraphSegment};
use crate::model::{shape_err, ModelError, ModelParams, PairMlp, Stream};
use crate::records::FaceRecord;
use crate::scalar::Scalar;
use crate::tensor::{dot, Matrix};

/// Whether batch statistics (train) or running statistics (eval) normalize.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Node tensors plus connectivity for one segment or a disjoint union of
/// segments (a mini-batch). Record data is converted to the scalar type once,
/// here.
#[derive(Clone, Debug)]
pub struct GraphBatch<S> {
    boxes: Matrix<S>,
    visual: Matrix<S>,
    audio: Matrix<S>,
    labels: Vec<Option<u8>>,
    e_forward: EdgeSet,
    e_backward: EdgeSet,
    e_undirected: EdgeSet,
    loops: EdgeSet,
    /// Index into `segment_ids` for every node.
    node_segment: Vec<u32>,
    segment_ids: Vec<String>,
}

impl<S: Scalar> GraphBatch<S> {
    pub fn from_segment(segment: &GraphSegment) -> Result<Self, ModelError> {
        Self::from_segments(&[segment])
    }

    /// Disjoint union: features are stacked and the edge sets are offset
    /// block-diagonally, so message passing never crosses segments.
    pub fn from_segments(segments: &[&GraphSegment]) -> Result<Self, ModelError> {
        if segments.is_empty() {
            return Err(shape_err("batch", "no segments"));
        }
        let d_visual = segments[0].nodes[0].visual_feat.len();
        let d_audio = segments[0].nodes[0].audio_feat.len();
        for seg in segments {
            for node in &seg.nodes {
                if node.visual_feat.len() != d_visual || node.audio_feat.len() != d_audio {
                    return Err(shape_err(
                        "batch",
                        format!(
                            "segment {} mixes feature dimensions (expected visual {d_visual}, audio {d_audio})",
                            seg.segment_id
                        ),
                    ));
                }
            }
        }
        let nodes: Vec<&FaceRecord> = segments.iter().flat_map(|s| s.nodes.iter()).collect();
        let n = nodes.len();
        let boxes = Matrix::from_fn(n, 4, |r, c| S::from_real(nodes[r].bbox[c]));
        let visual = Matrix::from_fn(n, d_visual, |r, c| S::from_real(nodes[r].visual_feat[c]));
        let audio = Matrix::from_fn(n, d_audio, |r, c| S::from_real(nodes[r].audio_feat[c]));
        let labels = nodes.iter().map(|r| r.label).collect();
        let mut node_segment = Vec::with_capacity(n);
        for (i, seg) in segments.iter().enumerate() {
            node_segment.extend(std::iter::repeat(i as u32).take(seg.nodes.len()));
        }
        let union = |pick: fn(&GraphSegment) -> &EdgeSet| {
            EdgeSet::disjoint_union(&segments.iter().map(|s| pick(s)).collect::<Vec<_>>())
        };
        Ok(GraphBatch {
            boxes,
            visual,
            audio,
            labels,
            e_forward: union(|s| &s.e_forward),
            e_backward: union(|s| &s.e_backward),
            e_undirected: union(|s| &s.e_undirected),
            loops: EdgeSet::self_loops(n),
            node_segment,
            segment_ids: segments.iter().map(|s| s.segment_id.clone()).collect(),
        })
    }

    /// Disjoint union of already-built batches. Same result as
    /// [`GraphBatch::from_segments`] on the underlying segments, without
    /// re-converting features — what the epoch loop uses per mini-batch.
    pub fn union(parts: &[&GraphBatch<S>]) -> Result<Self, ModelError> {
        if parts.is_empty() {
            return Err(shape_err("batch", "no parts"));
        }
        let (d_v, d_a) = (parts[0].d_visual(), parts[0].d_audio());
        if parts.iter().any(|p| p.d_visual() != d_v || p.d_audio() != d_a) {
            return Err(shape_err("batch", "parts mix feature dimensions"));
        }
        let n: usize = parts.iter().map(|p| p.n_nodes()).sum();
        let stack = |pick: fn(&GraphBatch<S>) -> &Matrix<S>, cols: usize| {
            let mut data = Vec::with_capacity(n * cols);
            for p in parts {
                data.extend_from_slice(pick(p).data());
            }
            Matrix::from_flat(n, cols, data)
        };
        let union = |pick: fn(&GraphBatch<S>) -> &EdgeSet| {
            EdgeSet::disjoint_union(&parts.iter().map(|p| pick(p)).collect::<Vec<_>>())
        };
        let mut node_segment = Vec::with_capacity(n);
        let mut segment_ids = Vec::new();
        for p in parts {
            let shift = segment_ids.len() as u32;
            node_segment.extend(p.node_segment.iter().map(|&s| s + shift));
            segment_ids.extend(p.segment_ids.iter().cloned());
        }
        Ok(GraphBatch {
            boxes: stack(|p| &p.boxes, 4),
            visual: stack(|p| &p.visual, d_v),
            audio: stack(|p| &p.audio, d_a),
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            e_forward: union(|p| &p.e_forward),
            e_backward: union(|p| &p.e_backward),
            e_undirected: union(|p| &p.e_undirected),
            loops: EdgeSet::self_loops(n),
            node_segment,
            segment_ids,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.boxes.rows()
    }

    pub fn d_visual(&self) -> usize {
        self.visual.cols()
    }

    pub fn d_audio(&self) -> usize {
        self.audio.cols()
    }

    pub fn boxes(&self) -> &Matrix<S> {
        &self.boxes
    }

    pub fn visual(&self) -> &Matrix<S> {
        &self.visual
    }

    pub fn audio(&self) -> &Matrix<S> {
        &self.audio
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    /// Labels as a dense vector; `None` if any node is unlabeled.
    pub fn labels_dense(&self) -> Option<Vec<u8>> {
        self.labels.iter().copied().collect()
    }

    pub fn segment_ids(&self) -> &[String] {
        &self.segment_ids
    }

    pub fn node_segment(&self) -> &[u32] {
        &self.node_segment
    }

    /// The edge set a stream aggregates over (before the graph ablation).
    pub fn edge_set(&self, stream: Stream) -> &EdgeSet {
        match stream {
            Stream::Forward => &self.e_forward,
            Stream::Backward => &self.e_backward,
            Stream::Undirected => &self.e_undirected,
        }
    }

    pub fn self_loops(&self) -> &EdgeSet {
        &self.loops
    }
}

/// Batch-norm activations needed by the backward pass and by the deferred
/// running-statistics update.
#[derive(Clone, Debug)]
pub struct BnCache<S> {
    /// Normalized pre-affine activations (x − μ)/√(σ² + ε).
    pub(crate) x_hat: Matrix<S>,
    /// 1/√(σ² + ε) per feature (batch stats in train mode).
    pub(crate) inv_std: Vec<S>,
    /// Running statistics as they should be after this step.
    pub(crate) new_running_mean: Vec<S>,
    pub(crate) new_running_var: Vec<S>,
}

/// Pure batch-norm forward. Train mode normalizes with the biased batch
/// variance over all rows and reports updated running statistics in the
/// cache (running variance uses the unbiased estimate; a single-row batch
/// leaves it unchanged). Eval mode normalizes with the stored running
/// statistics.
fn bn_forward<S: Scalar>(
    x: &Matrix<S>,
    bn: &crate::model::BatchNorm<S>,
    mode: Mode,
) -> Result<(Matrix<S>, BnCache<S>), ModelError> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if d != bn.dim() {
        return Err(shape_err("batch_norm", format!("input width {d} != bn width {}", bn.dim())));
    }
    let eps = S::from_real(bn.eps);
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![S::zero(); d];
            for r in 0..n {
                for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            let inv_n = S::one() / S::from_real(n as f64);
            for m in mean.iter_mut() {
                *m *= inv_n;
            }
            let mut var = vec![S::zero(); d];
            for r in 0..n {
                for ((v, &xv), &m) in var.iter_mut().zip(x.row(r)).zip(mean.iter()) {
                    let dcol = xv - m;
                    *v += dcol * dcol;
                }
            }
            for v in var.iter_mut() {
                *v *= inv_n;
            }
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut x_hat = Matrix::zeros(n, d);
    for r in 0..n {
        let xr = x.row(r);
        let hr = x_hat.row_mut(r);
        for c in 0..d {
            hr[c] = (xr[c] - mean[c]) * inv_std[c];
        }
    }
    let mut y = Matrix::zeros(n, d);
    for r in 0..n {
        let hr = x_hat.row(r);
        let yr = y.row_mut(r);
        for c in 0..d {
            yr[c] = bn.gamma[c] * hr[c] + bn.beta[c];
        }
    }
    let (new_running_mean, new_running_var) = match mode {
        Mode::Train => {
            let m = S::from_real(bn.momentum);
            let keep = S::one() - m;
            let new_mean: Vec<S> = bn
                .running_mean
                .iter()
                .zip(mean.iter())
                .map(|(&rm, &bm)| keep * rm + m * bm)
                .collect();
            let new_var: Vec<S> = if n >= 2 {
                let unbias = S::from_real(n as f64 / (n as f64 - 1.0));
                bn.running_var
                    .iter()
                    .zip(var.iter())
                    .map(|(&rv, &bv)| keep * rv + m * (bv * unbias))
                    .collect()
            } else {
                bn.running_var.clone()
            };
            (new_mean, new_var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    Ok((y, BnCache { x_hat, inv_std, new_running_mean, new_running_var }))
}

/// Self-contained batch norm: train mode also applies the running-statistics
/// update to `bn` in place. (The model forward uses the pure variant and
/// defers updates to the training loop.)
pub fn batch_norm<S: Scalar>(
    x: &Matrix<S>,
    bn: &mut crate::model::BatchNorm<S>,
    mode: Mode,
) -> Result<Matrix<S>, ModelError> {
    let (y, cache) = bn_forward(x, bn, mode)?;
    if mode == Mode::Train {
        bn.running_mean.copy_from_slice(&cache.new_running_mean);
        bn.running_var.copy_from_slice(&cache.new_running_var);
    }
    Ok(y)
}

fn relu<S: Scalar>(mut x: Matrix<S>) -> Matrix<S> {
    x.map_inplace(|v| v.max(S::zero()));
    x
}

/// Numerically stable logistic function, clamped to the open interval at
/// machine precision so downstream logs stay finite.
fn sigmoid<S: Scalar>(z: S) -> S {
    let one = S::one();
    let s = if z >= S::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    };
    s.max(S::min_positive_value()).min(one - S::epsilon())
}

/// Neighbor-sum linear layer: `Y[v] = M·(Σ_{w∈N_v} X[w]) + bias`, where N_v
/// is the in-neighbor set of v (self-loops make v ∈ N_v). Sum aggregation,
/// bias applied once per node; any nonlinearity is the caller's.
pub fn sage_conv<S: Scalar>(
    x: &Matrix<S>,
    edges: &EdgeSet,
    m: &Matrix<S>,
    bias: &[S],
) -> Result<Matrix<S>, ModelError> {
    Ok(sage_conv_cached(x, edges, m, bias)?.0)
}

/// As [`sage_conv`], also returning the aggregated neighbor sums (the
/// backward pass needs them for the weight gradient).
fn sage_conv_cached<S: Scalar>(
    x: &Matrix<S>,
    edges: &EdgeSet,
    m: &Matrix<S>,
    bias: &[S],
) -> Result<(Matrix<S>, Matrix<S>), ModelError> {
    if edges.n_nodes() != x.rows() {
        return Err(shape_err(
            "sage_conv",
            format!("edge set over {} nodes, features have {} rows", edges.n_nodes(), x.rows()),
        ));
    }
    if m.cols() != x.cols() || m.rows() != bias.len() {
        return Err(shape_err(
            "sage_conv",
            format!(
                "weight {:?} incompatible with features width {} / bias length {}",
                m.shape(),
                x.cols(),
                bias.len()
            ),
        ));
    }
    let n = x.rows();
    let mut agg = Matrix::zeros(n, x.cols());
    for v in 0..n {
        let row = agg.row_mut(v);
        for &w in edges.in_neighbors(v) {
            let src = x.row(w as usize);
            for (a, &b) in row.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    let y = agg.affine(m, bias);
    Ok((y, agg))
}

/// Cached intermediates of the factored pair-MLP aggregation.
#[derive(Clone, Debug)]
pub struct EdgeConvCache<S> {
    /// Center-half projection plus first bias: `W1L·x_v + b1` per node.
    pub(crate) xlb: Matrix<S>,
    /// Neighbor-half projection `W1R·x_w` per node.
    pub(crate) xr: Matrix<S>,
    /// Per-node sum of post-ReLU hidden activations over in-edges.
    pub(crate) s: Matrix<S>,
}

/// Pair-MLP edge aggregation: `Y[v] = Σ_{w∈N_v} g([x_v ∘ x_w])` with g the
/// two-layer transformation (first linear, ReLU, second linear). Both biases
/// of g apply per edge, so the second bias contributes deg(v)·b2.
pub fn edge_conv<S: Scalar>(
    x: &Matrix<S>,
    edges: &EdgeSet,
    g: &PairMlp<S>,
) -> Result<Matrix<S>, ModelError> {
    Ok(edge_conv_cached(x, edges, g)?.0)
}

fn edge_conv_cached<S: Scalar>(
    x: &Matrix<S>,
    edges: &EdgeSet,
    g: &PairMlp<S>,
) -> Result<(Matrix<S>, EdgeConvCache<S>), ModelError> {
    let (n, width) = x.shape();
    if edges.n_nodes() != n {
        return Err(shape_err(
            "edge_conv",
            format!("edge set over {} nodes, features have {n} rows", edges.n_nodes()),
        ));
    }
    if g.hidden.fan_in() != 2 * width {
        return Err(shape_err(
            "edge_conv",
            format!("pair MLP expects width {}, features are {width}", g.hidden.fan_in()),
        ));
    }
    if g.out.fan_in() != g.hidden.fan_out() {
        return Err(shape_err(
            "edge_conv",
            format!(
                "pair MLP hidden out {} != second layer in {}",
                g.hidden.fan_out(),
                g.out.fan_in()
            ),
        ));
    }
    let hdim = g.hidden.fan_out();
    // Project both concatenation halves once per node; the first-layer weight
    // rows are [left | right] so each half is a contiguous slice.
    let mut xlb = Matrix::zeros(n, hdim);
    let mut xr = Matrix::zeros(n, hdim);
    for v in 0..n {
        let xv = x.row(v);
        let lrow = xlb.row_mut(v);
        for h in 0..hdim {
            let wrow = g.hidden.weight.row(h);
            lrow[h] = dot(xv, &wrow[..width]) + g.hidden.bias[h];
        }
        let rrow = xr.row_mut(v);
        for h in 0..hdim {
            let wrow = g.hidden.weight.row(h);
            rrow[h] = dot(xv, &wrow[width..]);
        }
    }
    // s[v] = Σ_{w∈N_v} ReLU(xlb[v] + xr[w])
    let mut s = Matrix::zeros(n, hdim);
    for v in 0..n {
        let center = xlb.row(v);
        let srow = s.row_mut(v);
        for &w in edges.in_neighbors(v) {
            let nb = xr.row(w as usize);
            for h in 0..hdim {
                srow[h] += (center[h] + nb[h]).max(S::zero());
            }
        }
    }
    // Y[v] = W2·s[v] + deg(v)·b2
    let fan_out = g.out.fan_out();
    let mut y = Matrix::zeros(n, fan_out);
    for v in 0..n {
        let deg = S::from_real(edges.in_degree(v) as f64);
        let sv = s.row(v);
        let yr = y.row_mut(v);
        for (o, slot) in yr.iter_mut().enumerate() {
            *slot = dot(sv, g.out.weight.row(o)) + deg * g.out.bias[o];
        }
    }
    Ok((y, EdgeConvCache { xlb, xr, s }))
}

/// Fusion-stage cache.
#[derive(Clone, Debug)]
pub struct FuseCache<S> {
    /// The visual fuse input: `[visual ∘ spatial]`, or just the visual
    /// features when the spatial ablation is off.
    pub(crate) visual_in: Matrix<S>,
    pub(crate) v_bn: BnCache<S>,
    pub(crate) v_act: Matrix<S>,
    pub(crate) a_bn: BnCache<S>,
    pub(crate) a_act: Matrix<S>,
    /// Fused node features (the graph layers' input).
    pub(crate) h: Matrix<S>,
}

fn fuse_cached<S: Scalar>(
    batch: &GraphBatch<S>,
    params: &ModelParams<S>,
    mode: Mode,
) -> Result<(Matrix<S>, FuseCache<S>), ModelError> {
    let cfg = &params.config;
    if batch.d_visual() != cfg.d_visual || batch.d_audio() != cfg.d_audio {
        return Err(shape_err(
            "fuse_features",
            format!(
                "batch features ({}, {}) do not match model dims ({}, {})",
                batch.d_visual(),
                batch.d_audio(),
                cfg.d_visual,
                cfg.d_audio
            ),
        ));
    }
    let visual_in = match &params.spatial_proj {
        Some(sp) => {
            let spatial = sp.forward(&batch.boxes);
            Matrix::concat_cols(&batch.visual, &spatial)
        }
        None => batch.visual.clone(),
    };
    let t_visual = params.visual_fuse.forward(&visual_in);
    let (v_bn_y, v_bn) = bn_forward(&t_visual, &params.visual_bn, mode)?;
    let v_act = relu(v_bn_y);
    let t_audio = params.audio_fuse.forward(&batch.audio);
    let (a_bn_y, a_bn) = bn_forward(&t_audio, &params.audio_bn, mode)?;
    let a_act = relu(a_bn_y);
    let mut h = v_act.clone();
    h.add_assign(&a_act);
    Ok((h.clone(), FuseCache { visual_in, v_bn, v_act, a_bn, a_act, h }))
}

/// Fused per-node features: ReLU(BN(W_vf·[visual ∘ spatial])) +
/// ReLU(BN(W_af·audio)). Pure — train-mode running-statistics updates are the
/// training loop's job.
pub fn fuse_features<S: Scalar>(
    batch: &GraphBatch<S>,
    params: &ModelParams<S>,
    mode: Mode,
) -> Result<Matrix<S>, ModelError> {
    Ok(fuse_cached(batch, params, mode)?.0)
}

/// Everything one stream computed, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct StreamCache<S> {
    pub(crate) stream: Stream,
    pub(crate) ec: EdgeConvCache<S>,
    pub(crate) edge_bn: BnCache<S>,
    pub(crate) edge_act: Matrix<S>,
    pub(crate) mid_agg: Matrix<S>,
    pub(crate) mid_bn: BnCache<S>,
    pub(crate) mid_act: Matrix<S>,
    pub(crate) head_agg: Matrix<S>,
    /// This stream's contribution to the logits (head output column).
    pub(crate) logit: Vec<S>,
}

/// Activation cache of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<S> {
    pub(crate) mode: Mode,
    pub(crate) fuse: FuseCache<S>,
    pub(crate) streams: Vec<StreamCache<S>>,
    pub(crate) logits: Vec<S>,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn logits(&self) -> &[S] {
        &self.logits
    }

    /// Per-stream head outputs (their sum is the logit vector).
    pub fn stream_logits(&self) -> Vec<(Stream, &[S])> {
        self.streams.iter().map(|sc| (sc.stream, sc.logit.as_slice())).collect()
    }
}

/// Full forward pass returning per-node speaking scores in (0, 1).
pub fn model_forward<S: Scalar>(
    batch: &GraphBatch<S>,
    params: &ModelParams<S>,
    mode: Mode,
) -> Result<Vec<S>, ModelError> {
    Ok(model_forward_cached(batch, params, mode)?.0)
}

/// Forward pass that also returns the activation cache for
/// [`crate::train::model_backward`] and [`apply_bn_updates`].
pub fn model_forward_cached<S: Scalar>(
    batch: &GraphBatch<S>,
    params: &ModelParams<S>,
    mode: Mode,
) -> Result<(Vec<S>, ForwardCache<S>), ModelError> {
    params.config.validate()?;
    let n = batch.n_nodes();
    let (h, fuse) = fuse_cached(batch, params, mode)?;
    let mut logits = vec![S::zero(); n];
    let mut streams = Vec::with_capacity(params.streams.len());
    for (stream, sp) in &params.streams {
        let edges = if params.config.graph { batch.edge_set(*stream) } else { batch.self_loops() };
        let (edge_y, ec) = edge_conv_cached(&h, edges, &sp.pair_mlp)?;
        let (edge_bn_y, edge_bn) = bn_forward(&edge_y, &sp.edge_bn, mode)?;
        let edge_act = relu(edge_bn_y);
        let (mid_y, mid_agg) =
            sage_conv_cached(&edge_act, edges, &params.sage_mid.weight, &params.sage_mid.bias)?;
        let (mid_bn_y, mid_bn) = bn_forward(&mid_y, &sp.mid_bn, mode)?;
        let mid_act = relu(mid_bn_y);
        let (c, head_agg) = sage_conv_cached(&mid_act, edges, &sp.head.weight, &sp.head.bias)?;
        let logit: Vec<S> = (0..n).map(|v| c.get(v, 0)).collect();
        for (acc, &l) in logits.iter_mut().zip(logit.iter()) {
            *acc += l;
        }
        streams.push(StreamCache {
            stream: *stream,
            ec,
            edge_bn,
            edge_act,
            mid_agg,
            mid_bn,
            mid_act,
            head_agg,
            logit,
        });
    }
    let scores: Vec<S> = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok((scores, ForwardCache { mode, fuse, streams, logits }))
}

/// Fold the running-statistics updates computed by a train-mode forward into
/// the parameters. Call once per optimization step.
pub fn apply_bn_updates<S: Scalar>(params: &mut ModelParams<S>, cache: &ForwardCache<S>) {
    assert_eq!(cache.mode, Mode::Train, "running stats only update from train-mode caches");
    let apply = |bn: &mut crate::model::BatchNorm<S>, c: &BnCache<S>| {
        bn.running_mean.copy_from_slice(&c.new_running_mean);
        bn.running_var.copy_from_slice(&c.new_running_var);
    };
    apply(&mut params.visual_bn, &cache.fuse.v_bn);
    apply(&mut params.audio_bn, &cache.fuse.a_bn);
    for ((_, sp), sc) in params.streams.iter_mut().zip(cache.streams.iter()) {
        apply(&mut sp.edge_bn, &sc.edge_bn);
        apply(&mut sp.mid_bn, &sc.mid_bn);
    }
}
