//! Hand-derived reverse-mode gradients for the fixed layer graph.
//!
//! The architecture is static, so instead of a general autodiff tape each
//! layer's adjoint is written out in reverse order of the forward pass. The
//! pair-MLP aggregation is differentiated in the same factored form the
//! forward uses: per-edge ReLU masks are recomputed from the cached
//! half-projections, and the per-edge hidden gradients are folded into two
//! per-node accumulators (center half, neighbor half) so no per-edge tensor
//! is ever materialized.

use crate::graph::EdgeSet;
use crate::model::forward::{BnCache, EdgeConvCache, ForwardCache, GraphBatch, Mode};
use crate::model::{
    param_count, shape_err, BatchNorm, ModelConfig, ModelError, ModelParams, PairMlp, SPATIAL_DIM,
};
use crate::scalar::Scalar;
use crate::tensor::{accumulate_outer, axpy, Matrix};

/// One gradient tensor per trainable tensor of [`ModelParams`], mirrored
/// shapes. The shared mid layer has a single accumulator that all three
/// streams add into.
#[derive(Clone, Debug)]
pub struct GradStore<S> {
    pub(crate) inner: ModelParams<S>,
}

impl<S: Scalar> GradStore<S> {
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        Ok(GradStore { inner: ModelParams::zeros(config)? })
    }

    /// Visit every gradient tensor in the same fixed order as
    /// [`ModelParams::visit_trainable`].
    pub fn for_each(&self, f: &mut impl FnMut(&str, &[S], &[usize])) {
        self.inner.visit_trainable(f)
    }

    pub fn n_params(&self) -> usize {
        param_count(&self.inner)
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(&mut |_, data, _| ok &= data.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0f64;
        self.for_each(&mut |_, data, _| {
            for v in data {
                m = m.max(v.to_real().abs());
            }
        });
        m
    }

    /// Named copies of all gradient tensors (test/report convenience).
    pub fn to_map(&self) -> std::collections::BTreeMap<String, Vec<S>> {
        let mut out = std::collections::BTreeMap::new();
        self.for_each(&mut |name, data, _| {
            out.insert(name.to_string(), data.to_vec());
        });
        out
    }
}

/// dY ∘ 1[act > 0] — ReLU backward using the cached activation as the mask.
fn mask_relu<S: Scalar>(mut dy: Matrix<S>, act: &Matrix<S>) -> Matrix<S> {
    debug_assert_eq!(dy.shape(), act.shape());
    for r in 0..dy.rows() {
        let a = act.row(r);
        let d = dy.row_mut(r);
        for c in 0..a.len() {
            if a[c] <= S::zero() {
                d[c] = S::zero();
            }
        }
    }
    dy
}

/// Adjoint of the neighbor-sum aggregation `agg[v] = Σ_{w∈N_v} x[w]`:
/// scatter each destination's gradient back to its sources.
fn scatter_to_sources<S: Scalar>(d_agg: &Matrix<S>, edges: &EdgeSet) -> Matrix<S> {
    let mut out = Matrix::zeros(d_agg.rows(), d_agg.cols());
    for v in 0..d_agg.rows() {
        let dv = d_agg.row(v);
        for &w in edges.in_neighbors(v) {
            axpy(S::one(), dv, out.row_mut(w as usize));
        }
    }
    out
}

fn add_colsum<S: Scalar>(dy: &Matrix<S>, out: &mut [S]) {
    debug_assert_eq!(dy.cols(), out.len());
    for r in 0..dy.rows() {
        for (o, &d) in out.iter_mut().zip(dy.row(r)) {
            *o += d;
        }
    }
}

/// Train-mode batch-norm backward. Accumulates dγ/dβ and returns dX:
/// `dX = (γ·inv_std/N) · (N·dx̂ − Σ_r dx̂ − x̂·Σ_r(dx̂∘x̂))`,
/// the full adjoint through the batch mean and variance.
fn bn_backward<S: Scalar>(
    dy: &Matrix<S>,
    bn: &BatchNorm<S>,
    cache: &BnCache<S>,
    dgamma: &mut [S],
    dbeta: &mut [S],
) -> Matrix<S> {
    let (n, d) = dy.shape();
    debug_assert_eq!(cache.x_hat.shape(), (n, d));
    let nf = S::from_real(n as f64);
    let mut sum_dxhat = vec![S::zero(); d];
    let mut sum_dxhat_xhat = vec![S::zero(); d];
    for r in 0..n {
        let dyr = dy.row(r);
        let xh = cache.x_hat.row(r);
        for c in 0..d {
            let dxh = dyr[c] * bn.gamma[c];
            sum_dxhat[c] += dxh;
            sum_dxhat_xhat[c] += dxh * xh[c];
            dgamma[c] += dyr[c] * xh[c];
            dbeta[c] += dyr[c];
        }
    }
    let mut dx = Matrix::zeros(n, d);
    for r in 0..n {
        let dyr = dy.row(r);
        let xh = cache.x_hat.row(r);
        let out = dx.row_mut(r);
        for c in 0..d {
            let dxh = dyr[c] * bn.gamma[c];
            out[c] = cache.inv_std[c] / nf * (nf * dxh - sum_dxhat[c] - xh[c] * sum_dxhat_xhat[c]);
        }
    }
    dx
}

/// Adjoint of the factored pair-MLP aggregation. Accumulates the pair-MLP
/// gradients into `grad` and adds the input gradient into `dh`.
#[allow(clippy::too_many_arguments)]
fn edge_conv_backward<S: Scalar>(
    d_out: &Matrix<S>,
    ec: &EdgeConvCache<S>,
    edges: &EdgeSet,
    mlp: &PairMlp<S>,
    h: &Matrix<S>,
    grad: &mut PairMlp<S>,
    dh: &mut Matrix<S>,
) {
    let n = d_out.rows();
    let hdim = mlp.hidden.fan_out();
    let width = h.cols();
    let zero = S::zero();

    // Second layer: Y[v] = W2·s[v] + deg(v)·b2.
    accumulate_outer(&mut grad.out.weight, d_out, &ec.s);
    for v in 0..n {
        let deg = S::from_real(edges.in_degree(v) as f64);
        axpy(deg, d_out.row(v), &mut grad.out.bias);
    }
    // ds[v] = dY[v]·W2; per edge the hidden gradient is ds[v] masked by the
    // edge's ReLU pattern. Fold edges into per-node sums: dcenter[v] collects
    // the center-half mass of v's in-edges, dneighbor[w] the neighbor-half
    // mass of w's out-edges.
    let u = d_out.matmul(&mlp.out.weight);
    let mut dcenter = Matrix::zeros(n, hdim);
    let mut dneighbor = Matrix::zeros(n, hdim);
    for v in 0..n {
        let uv = u.row(v);
        let xlb_v = ec.xlb.row(v);
        let dcv = dcenter.row_mut(v);
        for &w in edges.in_neighbors(v) {
            let xr_w = ec.xr.row(w as usize);
            let dnw = dneighbor.row_mut(w as usize);
            for j in 0..hdim {
                if xlb_v[j] + xr_w[j] > zero {
                    let d = uv[j];
                    dcv[j] += d;
                    dnw[j] += d;
                }
            }
        }
    }
    // First bias sees every edge's hidden gradient: Σ_edges = Σ_v dcenter[v].
    add_colsum(&dcenter, &mut grad.hidden.bias);
    // First weight, half by half: dW1L[j] += Σ_v dcenter[v][j]·h[v],
    // dW1R[j] += Σ_w dneighbor[w][j]·h[w].
    for v in 0..n {
        let hv = h.row(v);
        let dc = dcenter.row(v);
        let dn = dneighbor.row(v);
        for j in 0..hdim {
            let wrow = grad.hidden.weight.row_mut(j);
            if dc[j] != zero {
                axpy(dc[j], hv, &mut wrow[..width]);
            }
            if dn[j] != zero {
                axpy(dn[j], hv, &mut wrow[width..]);
            }
        }
    }
    // Input gradient: dh[v] += dcenter[v]·W1L + dneighbor[v]·W1R.
    for v in 0..n {
        let dc = dcenter.row(v);
        let dn = dneighbor.row(v);
        let out = dh.row_mut(v);
        for j in 0..hdim {
            let wrow = mlp.hidden.weight.row(j);
            if dc[j] != zero {
                axpy(dc[j], &wrow[..width], out);
            }
            if dn[j] != zero {
                axpy(dn[j], &wrow[width..], out);
            }
        }
    }
}

/// Exact reverse-mode gradients of every trainable tensor given the upstream
/// gradient with respect to the pre-sigmoid logits (as returned by
/// [`crate::train::bce_loss`]). Requires the cache of a train-mode forward
/// on the same batch and parameters.
pub fn model_backward<S: Scalar>(
    batch: &GraphBatch<S>,
    params: &ModelParams<S>,
    cache: &ForwardCache<S>,
    dlogits: &[S],
) -> Result<GradStore<S>, ModelError> {
    if cache.mode != Mode::Train {
        return Err(shape_err(
            "model_backward",
            "cache comes from an eval-mode forward; gradients need train mode",
        ));
    }
    let n = batch.n_nodes();
    if dlogits.len() != n || cache.logits.len() != n {
        return Err(shape_err(
            "model_backward",
            format!(
                "batch has {n} nodes, upstream gradient {} entries, cache {}",
                dlogits.len(),
                cache.logits.len()
            ),
        ));
    }
    if cache.streams.len() != params.streams.len() {
        return Err(shape_err("model_backward", "cache and parameters disagree on the stream set"));
    }
    let cfg = params.config;
    let mut grads = GradStore::zeros(cfg)?;
    let dc = Matrix::from_fn(n, 1, |r, _| dlogits[r]);

    let mut dh = Matrix::zeros(n, cfg.filter_dim);
    let g = &mut grads.inner;
    for (((stream, sp), sc), (_, gs)) in
        params.streams.iter().zip(cache.streams.iter()).zip(g.streams.iter_mut())
    {
        debug_assert_eq!(*stream, sc.stream);
        let edges = if cfg.graph { batch.edge_set(*stream) } else { batch.self_loops() };

        // Head: c = head_agg·Whᵀ + bh, and the logit sum passes dlogits
        // through unchanged.
        accumulate_outer(&mut gs.head.weight, &dc, &sc.head_agg);
        add_colsum(&dc, &mut gs.head.bias);
        let d_head_agg = dc.matmul(&sp.head.weight);
        let d_mid_act = scatter_to_sources(&d_head_agg, edges);

        let d_mid_bn_y = mask_relu(d_mid_act, &sc.mid_act);
        let d_mid_lin = bn_backward(
            &d_mid_bn_y,
            &sp.mid_bn,
            &sc.mid_bn,
            &mut gs.mid_bn.gamma,
            &mut gs.mid_bn.beta,
        );

        // Shared mid layer: one accumulator, all streams add into it.
        accumulate_outer(&mut g.sage_mid.weight, &d_mid_lin, &sc.mid_agg);
        add_colsum(&d_mid_lin, &mut g.sage_mid.bias);
        let d_mid_agg = d_mid_lin.matmul(&params.sage_mid.weight);
        let d_edge_act = scatter_to_sources(&d_mid_agg, edges);

        let d_edge_bn_y = mask_relu(d_edge_act, &sc.edge_act);
        let d_edge_y = bn_backward(
            &d_edge_bn_y,
            &sp.edge_bn,
            &sc.edge_bn,
            &mut gs.edge_bn.gamma,
            &mut gs.edge_bn.beta,
        );

        edge_conv_backward(
            &d_edge_y,
            &sc.ec,
            edges,
            &sp.pair_mlp,
            &cache.fuse.h,
            &mut gs.pair_mlp,
            &mut dh,
        );
    }

    // Fusion: h = ReLU(BN(visual linear)) + ReLU(BN(audio linear)); the sum
    // routes dh into both branches unchanged.
    let d_v_bn_y = mask_relu(dh.clone(), &cache.fuse.v_act);
    let d_t_visual = bn_backward(
        &d_v_bn_y,
        &params.visual_bn,
        &cache.fuse.v_bn,
        &mut g.visual_bn.gamma,
        &mut g.visual_bn.beta,
    );
    accumulate_outer(&mut g.visual_fuse.weight, &d_t_visual, &cache.fuse.visual_in);
    add_colsum(&d_t_visual, &mut g.visual_fuse.bias);
    if let Some(gsp) = g.spatial_proj.as_mut() {
        // Only the spatial block of the fuse input gradient is needed: the
        // visual block would differentiate the (fixed) input features.
        let mut d_spatial = Matrix::zeros(n, SPATIAL_DIM);
        for r in 0..n {
            let dt = d_t_visual.row(r);
            let out = d_spatial.row_mut(r);
            for o in 0..cfg.filter_dim {
                if dt[o] != S::zero() {
                    axpy(dt[o], &params.visual_fuse.weight.row(o)[cfg.d_visual..], out);
                }
            }
        }
        accumulate_outer(&mut gsp.weight, &d_spatial, batch.boxes());
        add_colsum(&d_spatial, &mut gsp.bias);
    }

    let d_a_bn_y = mask_relu(dh, &cache.fuse.a_act);
    let d_t_audio = bn_backward(
        &d_a_bn_y,
        &params.audio_bn,
        &cache.fuse.a_bn,
        &mut g.audio_bn.gamma,
        &mut g.audio_bn.beta,
    );
    accumulate_outer(&mut g.audio_fuse.weight, &d_t_audio, batch.audio());
    add_colsum(&d_t_audio, &mut g.audio_fuse.bias);

    Ok(grads)
}
