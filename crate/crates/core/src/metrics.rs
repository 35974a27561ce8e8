//! Ranked-retrieval quality: average precision over scored binary labels,
//! its mean over groups, and CSV reporting for hyperparameter sweeps.
//!
//! AP here is the mean of precision evaluated at each positive's rank in the
//! score-sorted list — the plain detection-style definition, with no
//! interpolation. Scores and labels are plain `f64`/`u8` regardless of the
//! model's scalar type; metrics operate on emitted predictions, not on
//! in-training tensors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One scored node: where it came from, the model's speaking probability,
/// and the ground-truth label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredEntry {
    pub segment_id: String,
    pub node_index: usize,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty entry set")]
    Empty,
    #[error("no positive labels in the entry set")]
    NoPositives,
    #[error("score {score} for {segment_id}[{node_index}] is not finite")]
    NonFiniteScore { segment_id: String, node_index: usize, score: f64 },
    #[error("label {got} for {segment_id}[{node_index}] is not 0 or 1")]
    BadLabel { segment_id: String, node_index: usize, got: u8 },
}

/// How equal scores are ordered before computing precision ranks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Keep the input order within a tie (stable sort). AP then depends on
    /// the input order of tied entries — callers wanting order invariance
    /// must either avoid exact ties or use [`TiePolicy::Pessimistic`].
    Stable,
    /// Rank negatives above positives within a tie: the worst-case reading
    /// of tied scores, and invariant to input order.
    Pessimistic,
}

impl Default for TiePolicy {
    fn default() -> Self {
        TiePolicy::Stable
    }
}

fn validate(entries: &[PredEntry]) -> Result<(), MetricsError> {
    if entries.is_empty() {
        return Err(MetricsError::Empty);
    }
    for e in entries {
        if !e.score.is_finite() {
            return Err(MetricsError::NonFiniteScore {
                segment_id: e.segment_id.clone(),
                node_index: e.node_index,
                score: e.score,
            });
        }
        if e.label > 1 {
            return Err(MetricsError::BadLabel {
                segment_id: e.segment_id.clone(),
                node_index: e.node_index,
                got: e.label,
            });
        }
    }
    Ok(())
}

/// Average precision: sort by score descending (ties per `ties`), then
/// average precision-at-rank over the positive entries.
///
/// Errors when there is no positive label — AP is undefined there, and
/// silently returning 0 would poison group means.
pub fn average_precision(entries: &[PredEntry], ties: TiePolicy) -> Result<f64, MetricsError> {
    validate(entries)?;
    let mut order: Vec<usize> = (0..entries.len()).collect();
    match ties {
        TiePolicy::Stable => {
            order.sort_by(|&a, &b| entries[b].score.total_cmp(&entries[a].score));
        }
        TiePolicy::Pessimistic => {
            order.sort_by(|&a, &b| {
                entries[b]
                    .score
                    .total_cmp(&entries[a].score)
                    .then(entries[a].label.cmp(&entries[b].label))
            });
        }
    }
    let mut positives_seen = 0usize;
    let mut precision_sum = 0.0;
    for (rank0, &i) in order.iter().enumerate() {
        if entries[i].label == 1 {
            positives_seen += 1;
            precision_sum += positives_seen as f64 / (rank0 + 1) as f64;
        }
    }
    if positives_seen == 0 {
        return Err(MetricsError::NoPositives);
    }
    Ok(precision_sum / positives_seen as f64)
}

/// Per-group APs and their arithmetic mean.
#[derive(Clone, Debug, Serialize)]
pub struct MapReport {
    pub mean_ap: f64,
    /// (group id, AP), ordered by group id.
    pub per_group: Vec<(String, f64)>,
    /// Groups dropped because they contained no positive label.
    pub skipped_groups: usize,
}

/// Group entries by segment id, compute AP per group, and average.
/// Groups without positives are skipped (counted and logged), mirroring how
/// unscoreable scenes are conventionally dropped from mAP.
pub fn map_over_groups(entries: &[PredEntry], ties: TiePolicy) -> Result<MapReport, MetricsError> {
    validate(entries)?;
    let mut groups: std::collections::BTreeMap<&str, Vec<PredEntry>> =
        std::collections::BTreeMap::new();
    for e in entries {
        groups.entry(e.segment_id.as_str()).or_default().push(e.clone());
    }
    let mut per_group = Vec::new();
    let mut skipped = 0usize;
    for (gid, members) in &groups {
        match average_precision(members, ties) {
            Ok(ap) => per_group.push((gid.to_string(), ap)),
            Err(MetricsError::NoPositives) => {
                log::warn!("group {gid} has no positive labels; skipped from mAP");
                skipped += 1;
            }
            Err(other) => return Err(other),
        }
    }
    if per_group.is_empty() {
        return Err(MetricsError::NoPositives);
    }
    let mean_ap = per_group.iter().map(|(_, ap)| ap).sum::<f64>() / per_group.len() as f64;
    Ok(MapReport { mean_ap, per_group, skipped_groups: skipped })
}

/// One point of a hyperparameter sweep: the swept value and the mAP it
/// reached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepEntry {
    pub value: f64,
    pub map: f64,
}

/// CSV for external plotting: header `<param>,map`, one row per point,
/// ordered by the swept value ascending. An empty sweep yields the header
/// only.
pub fn sweep_report(param: &str, entries: &[SweepEntry]) -> String {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut out = format!("{param},map\n");
    for e in &sorted {
        out.push_str(&format!("{},{}\n", e.value, e.map));
    }
    out
}
