//! Shared oracles for the integration suites: an O(n²) edge-rule evaluator,
//! a straight-line reimplementation of the model forward pass, a pairwise
//! counting form of average precision, and small random-instance generators.
//! Each oracle recomputes its answer from the definitions, independently of
//! the library's data structures and traversal order.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use speakergraph::graph::EdgeSet;
use speakergraph::model::{BatchNorm, Linear, ModelParams, Stream};
use speakergraph::records::FaceRecord;
use std::collections::BTreeSet;

/// Ordered (src, dst) pairs of an edge set, for order-free comparison.
pub fn edge_pairs(set: &EdgeSet) -> BTreeSet<(u32, u32)> {
    set.pairs().into_iter().collect()
}

/// Literal per-pair evaluation of the three connection rules. For every
/// ordered pair (i, j): a self-loop when i = j; an undirected edge when the
/// identities match and |t_j − t_i| ≤ τ, or when the timestamps are equal;
/// a forward edge when the identities match and 0 ≤ t_j − t_i ≤ τ (same-frame
/// pairs stay bidirectional when `directed_same_frame`); a backward edge is
/// the forward rule with the orientation flipped.
pub fn brute_force_edges(
    nodes: &[FaceRecord],
    tau: f64,
    directed_same_frame: bool,
) -> (BTreeSet<(u32, u32)>, BTreeSet<(u32, u32)>, BTreeSet<(u32, u32)>) {
    let mut und = BTreeSet::new();
    let mut fwd = BTreeSet::new();
    let mut bwd = BTreeSet::new();
    for i in 0..nodes.len() {
        for j in 0..nodes.len() {
            let (a, b) = (&nodes[i], &nodes[j]);
            let pair = (i as u32, j as u32);
            if i == j {
                und.insert(pair);
                fwd.insert(pair);
                bwd.insert(pair);
                continue;
            }
            let dt = b.time - a.time;
            let same_id = a.identity == b.identity;
            let same_frame = a.time == b.time;
            if (same_id && dt.abs() <= tau) || same_frame {
                und.insert(pair);
            }
            let temporal_ok = same_id && (0.0..=tau).contains(&dt);
            if temporal_ok || (directed_same_frame && same_frame) {
                fwd.insert(pair);
            }
            let temporal_rev = same_id && (0.0..=tau).contains(&(-dt));
            if temporal_rev || (directed_same_frame && same_frame) {
                bwd.insert(pair);
            }
        }
    }
    (und, fwd, bwd)
}

/// Random instance on a frame grid: `n_identities` tracks over `n_frames`
/// frames spaced `dt` apart, each identity present in each frame with
/// probability `p_present` (at most once — the validated-stream invariant).
/// Returned in shuffled order so nothing downstream can rely on sortedness.
pub fn gen_nodes(
    rng: &mut ChaCha8Rng,
    n_identities: usize,
    n_frames: usize,
    dt: f64,
    p_present: f64,
    d_visual: usize,
    d_audio: usize,
) -> Vec<FaceRecord> {
    let mut nodes = Vec::new();
    for frame in 0..n_frames {
        for id in 0..n_identities {
            if !rng.gen_bool(p_present) {
                continue;
            }
            nodes.push(FaceRecord {
                bbox: [rng.gen(), rng.gen(), rng.gen(), rng.gen()],
                time: frame as f64 * dt,
                identity: format!("id{id}"),
                visual_feat: (0..d_visual).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                audio_feat: (0..d_audio).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                label: Some(u8::from(rng.gen_bool(0.3))),
            });
        }
    }
    // Fisher-Yates shuffle, so node index order is unrelated to time order.
    for i in (1..nodes.len()).rev() {
        let j = rng.gen_range(0..=i);
        nodes.swap(i, j);
    }
    nodes
}

/// Apply one linear layer to a single feature vector.
fn naive_linear(layer: &Linear<f64>, x: &[f64]) -> Vec<f64> {
    (0..layer.fan_out())
        .map(|o| layer.weight.row(o).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + layer.bias[o])
        .collect()
}

/// Batch normalization over rows: batch statistics (biased variance) in
/// train mode, stored running statistics in eval mode.
fn naive_bn(bn: &BatchNorm<f64>, rows: &[Vec<f64>], train: bool) -> Vec<Vec<f64>> {
    let dim = bn.dim();
    let n = rows.len() as f64;
    let (mean, var) = if train {
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for c in 0..dim {
                var[c] += (row[c] - mean[c]).powi(2) / n;
            }
        }
        (mean, var)
    } else {
        (bn.running_mean.clone(), bn.running_var.clone())
    };
    rows.iter()
        .map(|row| {
            (0..dim)
                .map(|c| bn.gamma[c] * (row[c] - mean[c]) / (var[c] + bn.eps).sqrt() + bn.beta[c])
                .collect()
        })
        .collect()
}

fn naive_relu(rows: &mut [Vec<f64>]) {
    for row in rows {
        for v in row {
            *v = v.max(0.0);
        }
    }
}

/// In-edges of each node as plain (src, dst) lists.
fn in_edges(edges: &[(usize, usize)], n: usize) -> Vec<Vec<usize>> {
    let mut by_dst = vec![Vec::new(); n];
    for &(src, dst) in edges {
        by_dst[dst].push(src);
    }
    by_dst
}

/// Straight-line reimplementation of the full forward pass from the layer
/// definitions, over plain nested `Vec`s. Scores must match
/// `model_forward` up to floating-point reassociation.
pub fn naive_forward(
    params: &ModelParams<f64>,
    boxes: &[[f64; 4]],
    visual: &[Vec<f64>],
    audio: &[Vec<f64>],
    und: &[(usize, usize)],
    fwd: &[(usize, usize)],
    bwd: &[(usize, usize)],
    train: bool,
) -> Vec<f64> {
    let n = boxes.len();

    // Fusion: h = ReLU(BN(W_vf·[visual ∘ W_sp·box])) + ReLU(BN(W_af·audio)).
    let visual_in: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let mut row = visual[v].clone();
            if let Some(sp) = &params.spatial_proj {
                row.extend(naive_linear(sp, &boxes[v]));
            }
            row
        })
        .collect();
    let t_visual: Vec<Vec<f64>> =
        visual_in.iter().map(|row| naive_linear(&params.visual_fuse, row)).collect();
    let mut v_act = naive_bn(&params.visual_bn, &t_visual, train);
    naive_relu(&mut v_act);
    let t_audio: Vec<Vec<f64>> =
        audio.iter().map(|row| naive_linear(&params.audio_fuse, row)).collect();
    let mut a_act = naive_bn(&params.audio_bn, &t_audio, train);
    naive_relu(&mut a_act);
    let h: Vec<Vec<f64>> =
        (0..n).map(|v| v_act[v].iter().zip(&a_act[v]).map(|(a, b)| a + b).collect()).collect();

    let self_loops: Vec<(usize, usize)> = (0..n).map(|v| (v, v)).collect();
    let mut logits = vec![0.0; n];
    for (stream, sp) in &params.streams {
        let edges: &[(usize, usize)] = if !params.config.graph {
            &self_loops
        } else {
            match stream {
                Stream::Forward => fwd,
                Stream::Backward => bwd,
                Stream::Undirected => und,
            }
        };
        let by_dst = in_edges(edges, n);

        // Pair-MLP edge aggregation: both layer biases apply once per edge.
        let y1: Vec<Vec<f64>> = (0..n)
            .map(|v| {
                let mut acc = vec![0.0; sp.pair_mlp.out.fan_out()];
                for &w in &by_dst[v] {
                    let mut cat = h[v].clone();
                    cat.extend_from_slice(&h[w]);
                    let mut hid = naive_linear(&sp.pair_mlp.hidden, &cat);
                    for x in &mut hid {
                        *x = x.max(0.0);
                    }
                    for (a, b) in acc.iter_mut().zip(naive_linear(&sp.pair_mlp.out, &hid)) {
                        *a += b;
                    }
                }
                acc
            })
            .collect();
        let mut a1 = naive_bn(&sp.edge_bn, &y1, train);
        naive_relu(&mut a1);

        // Shared mid layer: linear map of the in-neighbor sum.
        let y2: Vec<Vec<f64>> = (0..n)
            .map(|v| {
                let mut agg = vec![0.0; a1[0].len()];
                for &w in &by_dst[v] {
                    for (a, b) in agg.iter_mut().zip(&a1[w]) {
                        *a += b;
                    }
                }
                naive_linear(&params.sage_mid, &agg)
            })
            .collect();
        let mut a2 = naive_bn(&sp.mid_bn, &y2, train);
        naive_relu(&mut a2);

        // Scalar head over the in-neighbor sum; streams add up.
        for v in 0..n {
            let mut agg = vec![0.0; a2[0].len()];
            for &w in &by_dst[v] {
                for (a, b) in agg.iter_mut().zip(&a2[w]) {
                    *a += b;
                }
            }
            logits[v] += naive_linear(&sp.head, &agg)[0];
        }
    }

    logits
        .iter()
        .map(|&z| {
            let s = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
            s.max(f64::MIN_POSITIVE).min(1.0 - f64::EPSILON)
        })
        .collect()
}

/// Average precision as the mean, over positives, of precision at that
/// positive's rank — each rank computed by pairwise counting, no sort.
/// Ties follow the input order (stable) unless `pessimistic`, which counts
/// tied negatives ahead of tied positives. `None` when nothing is positive.
pub fn brute_force_ap(scores: &[f64], labels: &[u8], pessimistic: bool) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return None;
    }
    let ahead = |q: usize, p: usize| -> bool {
        if scores[q] != scores[p] {
            return scores[q] > scores[p];
        }
        if pessimistic && labels[q] != labels[p] {
            return labels[q] < labels[p];
        }
        q < p
    };
    let mut sum = 0.0;
    for p in 0..scores.len() {
        if labels[p] != 1 {
            continue;
        }
        let mut rank = 1;
        let mut pos_at_or_above = 1;
        for q in 0..scores.len() {
            if q != p && ahead(q, p) {
                rank += 1;
                pos_at_or_above += usize::from(labels[q] == 1);
            }
        }
        sum += pos_at_or_above as f64 / rank as f64;
    }
    Some(sum / n_pos as f64)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
