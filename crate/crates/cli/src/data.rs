//! Filesystem plumbing shared by the subcommands: record-stream discovery,
//! the predictions CSV round trip, and output-directory handling.

use crate::errors::CliError;
use speakergraph::graph::{stream_to_segments, GraphSegment};
use speakergraph::metrics::PredEntry;
use speakergraph::records::{open_records, RecordStream};
use std::path::{Path, PathBuf};

/// Record files this tool recognizes inside a data directory.
fn is_record_file(name: &str) -> bool {
    name.ends_with(".jsonl") || name.ends_with(".jsonl.gz")
}

/// Load one record file, or every record file (sorted by name) in a
/// directory.
pub fn load_streams(path: &Path) -> Result<Vec<RecordStream>, CliError> {
    if path.is_file() {
        return Ok(vec![open_records(path)?]);
    }
    if !path.is_dir() {
        return Err(CliError::bad_input(format!("data path {} does not exist", path.display())));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| CliError::bad_input(format!("cannot list {}: {e}", path.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name().map(|n| is_record_file(&n.to_string_lossy())).unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::bad_input(format!(
            "no record files (*.jsonl, *.jsonl.gz) in {}",
            path.display()
        )));
    }
    let mut streams = Vec::with_capacity(files.len());
    for file in &files {
        streams.push(open_records(file)?);
    }
    for s in &streams[1..] {
        if (s.d_visual, s.d_audio) != (streams[0].d_visual, streams[0].d_audio) {
            return Err(CliError::bad_input(format!(
                "feature dimensions differ across files: {} has ({}, {}) but {} has ({}, {})",
                streams[0].source_id,
                streams[0].d_visual,
                streams[0].d_audio,
                s.source_id,
                s.d_visual,
                s.d_audio
            )));
        }
    }
    Ok(streams)
}

pub fn streams_to_segments(
    streams: &[RecordStream],
    nodes_per_graph: usize,
    tau: f64,
) -> Result<Vec<GraphSegment>, CliError> {
    let mut segments = Vec::new();
    for stream in streams {
        segments.extend(stream_to_segments(stream, nodes_per_graph, tau)?);
    }
    Ok(segments)
}

pub fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| {
        CliError::bad_input(format!("cannot create output directory {}: {e}", path.display()))
    })
}

pub fn write_output(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Internal(anyhow::anyhow!("writing {} failed: {e}", path.display())))
}

pub const PREDICTIONS_HEADER: &str = "segment_id,node_index,score,label";

/// One scored node; `label` is empty in the CSV when the input record had
/// none.
pub struct PredictionRow {
    pub segment_id: String,
    pub node_index: usize,
    pub score: f64,
    pub label: Option<u8>,
}

pub fn predictions_csv(rows: &[PredictionRow]) -> Result<String, CliError> {
    let mut out = String::from(PREDICTIONS_HEADER);
    out.push('\n');
    for row in rows {
        if row.segment_id.contains(',') || row.segment_id.contains('\n') {
            return Err(CliError::bad_input(format!(
                "segment id {:?} contains a CSV delimiter",
                row.segment_id
            )));
        }
        let label = row.label.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", row.segment_id, row.node_index, row.score, label));
    }
    Ok(out)
}

/// Parse a predictions CSV back into labeled entries; every row must carry a
/// label (evaluation is undefined without ground truth).
pub fn read_predictions(path: &Path) -> Result<Vec<PredEntry>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::bad_input(format!("cannot read predictions {}: {e}", path.display()))
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == PREDICTIONS_HEADER => {}
        Some((_, header)) => {
            return Err(CliError::bad_input(format!(
                "{}: expected header {PREDICTIONS_HEADER:?}, found {header:?}",
                path.display()
            )));
        }
        None => return Err(CliError::bad_input(format!("{} is empty", path.display()))),
    }
    let mut entries = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| {
            CliError::bad_input(format!("{} line {}: {what}", path.display(), lineno + 1))
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 comma-separated fields"));
        }
        let node_index: usize =
            fields[1].parse().map_err(|_| bad("node_index is not an integer"))?;
        let score: f64 = fields[2].parse().map_err(|_| bad("score is not a number"))?;
        let label: u8 = match fields[3] {
            "0" => 0,
            "1" => 1,
            "" => return Err(bad("row has no label; eval needs labeled predictions")),
            _ => return Err(bad("label must be 0 or 1")),
        };
        entries.push(PredEntry { segment_id: fields[0].to_string(), node_index, score, label });
    }
    Ok(entries)
}
