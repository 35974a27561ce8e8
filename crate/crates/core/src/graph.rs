//! Construction of the three edge sets over a chunk of face records.
//!
//! Connectivity rules over nodes i, j (i ≠ j):
//! - undirected: both directions present iff the nodes share an identity with
//!   |Δt| ≤ τ, or share an exact timestamp (cross-identity, same frame);
//! - forward: same-identity pairs are directed past→future (edge i→j iff
//!   time(i) ≤ time(j) ≤ time(i) + τ);
//! - backward: the mirror image (future→past).
//!
//! Same-frame cross-identity edges stay bidirectional in all three sets by
//! default; [`GraphOptions::directed_same_frame`] = false drops them from the
//! two directed sets for sensitivity studies. Every set contains a self-loop
//! per node. An edge (src, dst) is a message from src to dst; aggregation
//! iterates in-neighbors, so the adjacency index is keyed by destination.
//!
//! Builders run in O(n log n + |E|) using identity/time-sorted windows; a
//! brute-force O(n²) evaluation of the same rules lives in the test suite as
//! the oracle these builders are checked against.

use serde::Serialize;

use crate::records::{node_stats, sort_and_partition, FaceRecord, IngestError, RecordStream};

/// Directed edge list with a per-destination in-adjacency index.
///
/// Stored in compressed sparse form keyed by destination, sources sorted
/// ascending within each destination. This representation is canonical:
/// two `EdgeSet`s are equal iff they contain the same edge set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSet {
    n_nodes: usize,
    /// `srcs[offsets[v]..offsets[v+1]]` = sorted in-neighbor sources of v.
    offsets: Vec<usize>,
    srcs: Vec<u32>,
}

impl EdgeSet {
    /// Build from (src, dst) pairs; duplicates are merged.
    pub fn from_pairs(n_nodes: usize, mut pairs: Vec<(u32, u32)>) -> Self {
        assert!(n_nodes <= u32::MAX as usize, "node count exceeds index width");
        debug_assert!(
            pairs.iter().all(|&(s, d)| (s as usize) < n_nodes && (d as usize) < n_nodes),
            "edge endpoint out of range"
        );
        pairs.sort_unstable_by_key(|&(s, d)| (d, s));
        pairs.dedup();
        let mut offsets = vec![0usize; n_nodes + 1];
        for &(_, d) in &pairs {
            offsets[d as usize + 1] += 1;
        }
        for v in 0..n_nodes {
            offsets[v + 1] += offsets[v];
        }
        let srcs = pairs.into_iter().map(|(s, _)| s).collect();
        EdgeSet { n_nodes, offsets, srcs }
    }

    /// Only the mandatory self-loops; the connectivity used when the graph
    /// ablation is off (message passing degenerates to per-node computation).
    pub fn self_loops(n_nodes: usize) -> Self {
        EdgeSet::from_pairs(n_nodes, (0..n_nodes as u32).map(|v| (v, v)).collect())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.srcs.len()
    }

    /// Sources of edges arriving at `dst`, ascending.
    #[inline]
    pub fn in_neighbors(&self, dst: usize) -> &[u32] {
        &self.srcs[self.offsets[dst]..self.offsets[dst + 1]]
    }

    pub fn in_degree(&self, dst: usize) -> usize {
        self.offsets[dst + 1] - self.offsets[dst]
    }

    pub fn contains(&self, src: u32, dst: u32) -> bool {
        self.in_neighbors(dst as usize).binary_search(&src).is_ok()
    }

    /// All edges as (src, dst), sorted by (dst, src).
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.srcs.len());
        for dst in 0..self.n_nodes {
            for &src in self.in_neighbors(dst) {
                out.push((src, dst as u32));
            }
        }
        out
    }

    pub fn transpose(&self) -> EdgeSet {
        EdgeSet::from_pairs(self.n_nodes, self.pairs().into_iter().map(|(s, d)| (d, s)).collect())
    }

    pub fn is_symmetric(&self) -> bool {
        self.pairs().iter().all(|&(s, d)| self.contains(d, s))
    }

    pub fn is_subset_of(&self, other: &EdgeSet) -> bool {
        self.n_nodes == other.n_nodes && self.pairs().iter().all(|&(s, d)| other.contains(s, d))
    }

    pub fn has_all_self_loops(&self) -> bool {
        (0..self.n_nodes as u32).all(|v| self.contains(v, v))
    }

    /// Apply a node relabeling: node v becomes `perm[v]`.
    pub fn permuted(&self, perm: &[u32]) -> EdgeSet {
        assert_eq!(perm.len(), self.n_nodes);
        EdgeSet::from_pairs(
            self.n_nodes,
            self.pairs().into_iter().map(|(s, d)| (perm[s as usize], perm[d as usize])).collect(),
        )
    }

    /// Block-diagonal union: node ranges are concatenated and each set's
    /// sources shifted accordingly, so no edges cross between the inputs.
    pub fn disjoint_union(sets: &[&EdgeSet]) -> EdgeSet {
        let n_nodes: usize = sets.iter().map(|s| s.n_nodes).sum();
        let total_edges: usize = sets.iter().map(|s| s.n_edges()).sum();
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0);
        let mut srcs = Vec::with_capacity(total_edges);
        let mut node_shift = 0u32;
        for set in sets {
            for v in 0..set.n_nodes {
                srcs.extend(set.in_neighbors(v).iter().map(|&s| s + node_shift));
                offsets.push(srcs.len());
            }
            node_shift += set.n_nodes as u32;
        }
        EdgeSet { n_nodes, offsets, srcs }
    }
}

/// Knobs for edge-set construction beyond τ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphOptions {
    /// Keep same-frame cross-identity edges (bidirectional) in the forward
    /// and backward sets. The undirected set always has them.
    pub directed_same_frame: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions { directed_same_frame: true }
    }
}

/// A contiguous chunk of ≤ n records together with its three edge sets.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSegment {
    /// Stable identifier, `"<source>:<chunk index>"` for partitioned streams.
    pub segment_id: String,
    pub nodes: Vec<FaceRecord>,
    pub e_undirected: EdgeSet,
    pub e_forward: EdgeSet,
    pub e_backward: EdgeSet,
    pub tau: f64,
}

/// Per-set and per-segment size statistics.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SegmentStats {
    pub segment_id: String,
    pub n_nodes: usize,
    pub undirected_edges: usize,
    pub forward_edges: usize,
    pub backward_edges: usize,
    /// Mean in-degree per set (self-loops included).
    pub mean_in_degree_undirected: f64,
    pub mean_in_degree_forward: f64,
    pub mean_in_degree_backward: f64,
    pub n_frames: usize,
    pub n_identities: usize,
    pub time_span_seconds: f64,
}

fn check_build_inputs(nodes: &[FaceRecord], tau: f64) {
    assert!(!nodes.is_empty(), "edge construction over an empty node set");
    assert!(tau.is_finite() && tau >= 0.0, "tau must be finite and ≥ 0");
}

/// Node indices grouped by identity, each group sorted by time ascending.
fn identity_runs(nodes: &[FaceRecord]) -> Vec<Vec<u32>> {
    let mut order: Vec<u32> = (0..nodes.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&nodes[a as usize], &nodes[b as usize]);
        ra.identity.cmp(&rb.identity).then(ra.time.total_cmp(&rb.time))
    });
    let mut runs: Vec<Vec<u32>> = Vec::new();
    for idx in order {
        match runs.last_mut() {
            Some(run) if nodes[run[0] as usize].identity == nodes[idx as usize].identity => {
                run.push(idx)
            }
            _ => runs.push(vec![idx]),
        }
    }
    runs
}

/// Node indices grouped by exact timestamp.
fn frame_runs(nodes: &[FaceRecord]) -> Vec<Vec<u32>> {
    let mut order: Vec<u32> = (0..nodes.len() as u32).collect();
    order.sort_by(|&a, &b| nodes[a as usize].time.total_cmp(&nodes[b as usize].time));
    let mut runs: Vec<Vec<u32>> = Vec::new();
    for idx in order {
        match runs.last_mut() {
            Some(run) if nodes[run[0] as usize].time == nodes[idx as usize].time => run.push(idx),
            _ => runs.push(vec![idx]),
        }
    }
    runs
}

/// Same-identity index pairs (earlier, later) with 0 ≤ Δt ≤ τ.
fn temporal_pairs(nodes: &[FaceRecord], tau: f64) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for run in identity_runs(nodes) {
        for (p, &a) in run.iter().enumerate() {
            let ta = nodes[a as usize].time;
            for &b in &run[p + 1..] {
                if nodes[b as usize].time - ta > tau {
                    break;
                }
                out.push((a, b));
            }
        }
    }
    out
}

/// Cross-identity index pairs sharing an exact timestamp, both directions.
fn same_frame_pairs(nodes: &[FaceRecord]) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for run in frame_runs(nodes) {
        for (p, &a) in run.iter().enumerate() {
            for &b in &run[p + 1..] {
                out.push((a, b));
                out.push((b, a));
            }
        }
    }
    out
}

fn self_loop_pairs(n: usize) -> impl Iterator<Item = (u32, u32)> {
    (0..n as u32).map(|v| (v, v))
}

/// Undirected connectivity: same identity within τ, or same frame; plus
/// self-loops. Both directions of every pair are present.
pub fn build_undirected(nodes: &[FaceRecord], tau: f64) -> EdgeSet {
    check_build_inputs(nodes, tau);
    let mut pairs = Vec::new();
    for (a, b) in temporal_pairs(nodes, tau) {
        pairs.push((a, b));
        pairs.push((b, a));
    }
    pairs.extend(same_frame_pairs(nodes));
    pairs.extend(self_loop_pairs(nodes.len()));
    EdgeSet::from_pairs(nodes.len(), pairs)
}

/// Forward connectivity: same-identity edges run past→future (plus same-frame
/// pairs per options, plus self-loops).
pub fn build_forward(nodes: &[FaceRecord], tau: f64) -> EdgeSet {
    build_forward_with(nodes, tau, GraphOptions::default())
}

pub fn build_forward_with(nodes: &[FaceRecord], tau: f64, opts: GraphOptions) -> EdgeSet {
    check_build_inputs(nodes, tau);
    let mut pairs = temporal_pairs(nodes, tau);
    if opts.directed_same_frame {
        pairs.extend(same_frame_pairs(nodes));
    }
    pairs.extend(self_loop_pairs(nodes.len()));
    EdgeSet::from_pairs(nodes.len(), pairs)
}

/// Backward connectivity: same-identity edges run future→past.
pub fn build_backward(nodes: &[FaceRecord], tau: f64) -> EdgeSet {
    build_backward_with(nodes, tau, GraphOptions::default())
}

pub fn build_backward_with(nodes: &[FaceRecord], tau: f64, opts: GraphOptions) -> EdgeSet {
    check_build_inputs(nodes, tau);
    let mut pairs: Vec<(u32, u32)> =
        temporal_pairs(nodes, tau).into_iter().map(|(a, b)| (b, a)).collect();
    if opts.directed_same_frame {
        pairs.extend(same_frame_pairs(nodes));
    }
    pairs.extend(self_loop_pairs(nodes.len()));
    EdgeSet::from_pairs(nodes.len(), pairs)
}

/// Bundle the three edge sets over one node chunk.
pub fn build_segment(
    nodes: Vec<FaceRecord>,
    tau: f64,
    segment_id: impl Into<String>,
) -> GraphSegment {
    build_segment_with(nodes, tau, segment_id, GraphOptions::default())
}

pub fn build_segment_with(
    nodes: Vec<FaceRecord>,
    tau: f64,
    segment_id: impl Into<String>,
    opts: GraphOptions,
) -> GraphSegment {
    let e_undirected = build_undirected(&nodes, tau);
    let e_forward = build_forward_with(&nodes, tau, opts);
    let e_backward = build_backward_with(&nodes, tau, opts);
    GraphSegment { segment_id: segment_id.into(), nodes, e_undirected, e_forward, e_backward, tau }
}

/// Full stream-to-graphs pipeline: sort, chunk into segments of at most
/// `nodes_per_graph` records, and build the three edge sets per segment.
/// Segment ids are `<source_id>:<chunk index>`.
pub fn stream_to_segments(
    stream: &RecordStream,
    nodes_per_graph: usize,
    tau: f64,
) -> Result<Vec<GraphSegment>, IngestError> {
    let chunks = sort_and_partition(stream, nodes_per_graph)?;
    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(k, nodes)| build_segment(nodes, tau, format!("{}:{k}", stream.source_id)))
        .collect())
}

pub fn segment_stats(segment: &GraphSegment) -> SegmentStats {
    let n = segment.nodes.len();
    let stats = node_stats(&segment.nodes);
    let mean = |edges: usize| edges as f64 / n as f64;
    SegmentStats {
        segment_id: segment.segment_id.clone(),
        n_nodes: n,
        undirected_edges: segment.e_undirected.n_edges(),
        forward_edges: segment.e_forward.n_edges(),
        backward_edges: segment.e_backward.n_edges(),
        mean_in_degree_undirected: mean(segment.e_undirected.n_edges()),
        mean_in_degree_forward: mean(segment.e_forward.n_edges()),
        mean_in_degree_backward: mean(segment.e_backward.n_edges()),
        n_frames: stats.n_frames,
        n_identities: stats.n_identities,
        time_span_seconds: stats.time_span,
    }
}
