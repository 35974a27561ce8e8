//! Face-track record ingestion: parse, validate, order, partition, summarize.
//!
//! External format: one JSON object per line with keys
//! `box` (4 reals: center-x, center-y, height, width, all normalized to the
//! frame), `time` (seconds), `id` (opaque track identity), `visual` /
//! `audio` (feature arrays), and optional `label` (0/1). Lines that are
//! entirely whitespace are skipped; unknown keys are rejected. Readers accept
//! plain or gzip-compressed input.
//!
//! Timestamps are exact reals: two records are "same frame" iff their times
//! compare equal (no epsilon) — producers must quantize to frame times
//! upstream. Records are ordered by `(time, identity)`; the identity
//! tie-break makes partitioning deterministic regardless of input order.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default feature width for both the visual and audio vectors.
pub const DEFAULT_FEATURE_DIM: usize = 512;

/// One cropped face occurrence: a node of the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceRecord {
    /// (center-x, center-y, height, width), each in `[0, 1]`.
    pub bbox: [f64; 4],
    /// Timestamp in seconds; exact equality defines "same frame".
    pub time: f64,
    /// Opaque track identity; shared by all crops of the same person track.
    pub identity: String,
    pub visual_feat: Vec<f64>,
    pub audio_feat: Vec<f64>,
    /// Ground truth: 1 = actively speaking. Absent for unlabeled data.
    pub label: Option<u8>,
}

/// A validated, `(time, identity)`-sorted sequence of records from one source.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordStream {
    pub records: Vec<FaceRecord>,
    pub d_visual: usize,
    pub d_audio: usize,
    /// Identifier of the originating file/video; used to derive segment ids.
    pub source_id: String,
}

/// Summary statistics of a stream.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct StreamStats {
    pub n_records: usize,
    pub n_frames: usize,
    pub n_identities: usize,
    /// `n_records / n_frames`, exact.
    pub faces_per_frame: f64,
    /// `max(time) − min(time)` in seconds.
    pub time_span: f64,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("empty stream")]
    EmptyStream,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {field} feature length {got}, expected {want}")]
    DimensionMismatch { line: usize, field: &'static str, got: usize, want: usize },
    #[error("line {line}: box component {component} = {value} outside [0, 1]")]
    BoxOutOfRange { line: usize, component: usize, value: f64 },
    #[error("line {line}: time {value} is not finite and ≥ 0")]
    BadTime { line: usize, value: f64 },
    #[error("line {line}: non-finite value in {field} features")]
    NonFiniteFeature { line: usize, field: &'static str },
    #[error("line {line}: label {value} is not 0 or 1")]
    BadLabel { line: usize, value: u8 },
    #[error(
        "duplicate record for identity {identity:?} at time {time} (lines {first} and {second})"
    )]
    Duplicate { identity: String, time: f64, first: usize, second: usize },
    #[error("feature dimensions must be ≥ 1 (got visual={d_visual}, audio={d_audio})")]
    ZeroDimension { d_visual: usize, d_audio: usize },
    #[error("partition chunk size must be ≥ 1")]
    InvalidChunkSize,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wire format mirror of [`FaceRecord`]. Field order fixes the key order of
/// serialized lines, which keeps generated files byte-deterministic.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    time: f64,
    id: String,
    visual: Vec<f64>,
    audio: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

/// Parse line-delimited records, inferring feature dimensions from the first
/// record and enforcing them on the rest.
pub fn parse_records<R: BufRead>(
    reader: R,
    source_id: impl Into<String>,
) -> Result<RecordStream, IngestError> {
    parse_records_with_dims(reader, source_id, None)
}

/// As [`parse_records`], but with the feature dimensions pinned up front
/// (the CLI's `--dims D_v,D_a` override) instead of inferred.
pub fn parse_records_with_dims<R: BufRead>(
    reader: R,
    source_id: impl Into<String>,
    dims: Option<(usize, usize)>,
) -> Result<RecordStream, IngestError> {
    if let Some((dv, da)) = dims {
        if dv == 0 || da == 0 {
            return Err(IngestError::ZeroDimension { d_visual: dv, d_audio: da });
        }
    }
    let mut dims = dims;
    // Records carry their 1-based input line for error reporting.
    let mut records: Vec<(FaceRecord, usize)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| IngestError::Malformed { line: line_no, message: e.to_string() })?;
        let record = validate_raw(raw, line_no, &mut dims)?;
        records.push((record, line_no));
    }
    if records.is_empty() {
        return Err(IngestError::EmptyStream);
    }
    let (d_visual, d_audio) = dims.expect("dims set by first record");

    records.sort_by(|(a, _), (b, _)| {
        a.time.total_cmp(&b.time).then_with(|| a.identity.cmp(&b.identity))
    });
    for pair in records.windows(2) {
        let (a, la) = (&pair[0].0, pair[0].1);
        let (b, lb) = (&pair[1].0, pair[1].1);
        if a.time == b.time && a.identity == b.identity {
            return Err(IngestError::Duplicate {
                identity: b.identity.clone(),
                time: b.time,
                first: la.min(lb),
                second: la.max(lb),
            });
        }
    }

    Ok(RecordStream {
        records: records.into_iter().map(|(r, _)| r).collect(),
        d_visual,
        d_audio,
        source_id: source_id.into(),
    })
}

fn validate_raw(
    raw: RawRecord,
    line: usize,
    dims: &mut Option<(usize, usize)>,
) -> Result<FaceRecord, IngestError> {
    for (component, &value) in raw.bbox.iter().enumerate() {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(IngestError::BoxOutOfRange { line, component, value });
        }
    }
    if !raw.time.is_finite() || raw.time < 0.0 {
        return Err(IngestError::BadTime { line, value: raw.time });
    }
    match *dims {
        None => {
            if raw.visual.is_empty() || raw.audio.is_empty() {
                return Err(IngestError::ZeroDimension {
                    d_visual: raw.visual.len(),
                    d_audio: raw.audio.len(),
                });
            }
            *dims = Some((raw.visual.len(), raw.audio.len()));
        }
        Some((dv, da)) => {
            if raw.visual.len() != dv {
                return Err(IngestError::DimensionMismatch {
                    line,
                    field: "visual",
                    got: raw.visual.len(),
                    want: dv,
                });
            }
            if raw.audio.len() != da {
                return Err(IngestError::DimensionMismatch {
                    line,
                    field: "audio",
                    got: raw.audio.len(),
                    want: da,
                });
            }
        }
    }
    if raw.visual.iter().any(|v| !v.is_finite()) {
        return Err(IngestError::NonFiniteFeature { line, field: "visual" });
    }
    if raw.audio.iter().any(|v| !v.is_finite()) {
        return Err(IngestError::NonFiniteFeature { line, field: "audio" });
    }
    if let Some(l) = raw.label {
        if l > 1 {
            return Err(IngestError::BadLabel { line, value: l });
        }
    }
    Ok(FaceRecord {
        bbox: raw.bbox,
        time: raw.time,
        identity: raw.id,
        visual_feat: raw.visual,
        audio_feat: raw.audio,
        label: raw.label,
    })
}

/// Open a record file, transparently decoding gzip (sniffed via magic bytes).
pub fn open_records(path: &Path) -> Result<RecordStream, IngestError> {
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    open_records_with_dims(path, source_id, None)
}

/// As [`open_records`] with explicit source id and optional dimension pins.
pub fn open_records_with_dims(
    path: &Path,
    source_id: impl Into<String>,
    dims: Option<(usize, usize)>,
) -> Result<RecordStream, IngestError> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = read_up_to(&mut file, &mut magic)?;
    let head = &magic[..n];
    let chained = head.chain(file);
    if n == 2 && magic == [0x1f, 0x8b] {
        let reader = BufReader::new(flate2::read::MultiGzDecoder::new(chained));
        parse_records_with_dims(reader, source_id, dims)
    } else {
        parse_records_with_dims(BufReader::new(chained), source_id, dims)
    }
}

fn read_up_to(reader: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = reader.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

/// Serialize one record as its JSON line (inverse of parsing).
pub fn record_to_line(record: &FaceRecord) -> String {
    let raw = RawRecord {
        bbox: record.bbox,
        time: record.time,
        id: record.identity.clone(),
        visual: record.visual_feat.clone(),
        audio: record.audio_feat.clone(),
        label: record.label,
    };
    serde_json::to_string(&raw).expect("record serializes")
}

/// Serialize a whole stream, one line per record, trailing newline included.
pub fn serialize_records(stream: &RecordStream) -> String {
    let mut out = String::new();
    for r in &stream.records {
        out.push_str(&record_to_line(r));
        out.push('\n');
    }
    out
}

impl RecordStream {
    /// Build a stream from in-memory records (sorts and validates invariants
    /// the same way parsing does). Used by the synthetic generator.
    pub fn from_records(
        mut records: Vec<FaceRecord>,
        source_id: impl Into<String>,
    ) -> Result<Self, IngestError> {
        if records.is_empty() {
            return Err(IngestError::EmptyStream);
        }
        let d_visual = records[0].visual_feat.len();
        let d_audio = records[0].audio_feat.len();
        if d_visual == 0 || d_audio == 0 {
            return Err(IngestError::ZeroDimension { d_visual, d_audio });
        }
        records.sort_by(|a, b| a.time.total_cmp(&b.time).then_with(|| a.identity.cmp(&b.identity)));
        for (idx, pair) in records.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if a.time == b.time && a.identity == b.identity {
                return Err(IngestError::Duplicate {
                    identity: b.identity.clone(),
                    time: b.time,
                    first: idx + 1,
                    second: idx + 2,
                });
            }
            if b.visual_feat.len() != d_visual {
                return Err(IngestError::DimensionMismatch {
                    line: idx + 2,
                    field: "visual",
                    got: b.visual_feat.len(),
                    want: d_visual,
                });
            }
            if b.audio_feat.len() != d_audio {
                return Err(IngestError::DimensionMismatch {
                    line: idx + 2,
                    field: "audio",
                    got: b.audio_feat.len(),
                    want: d_audio,
                });
            }
        }
        Ok(RecordStream { records, d_visual, d_audio, source_id: source_id.into() })
    }
}

/// Sort records by `(time, identity)` and split them into consecutive chunks
/// of size ≤ `n`; every chunk except possibly the last has size exactly `n`,
/// and concatenating the chunks reproduces the sorted stream.
pub fn sort_and_partition(
    stream: &RecordStream,
    n: usize,
) -> Result<Vec<Vec<FaceRecord>>, IngestError> {
    if n == 0 {
        return Err(IngestError::InvalidChunkSize);
    }
    let mut records = stream.records.clone();
    records.sort_by(|a, b| a.time.total_cmp(&b.time).then_with(|| a.identity.cmp(&b.identity)));
    let mut chunks = Vec::with_capacity(records.len().div_ceil(n));
    let mut it = records.into_iter().peekable();
    while it.peek().is_some() {
        chunks.push(it.by_ref().take(n).collect());
    }
    Ok(chunks)
}

/// Mean faces per distinct timestamp, time span, identity count.
pub fn stream_stats(stream: &RecordStream) -> StreamStats {
    node_stats(&stream.records)
}

/// [`stream_stats`] over any record slice (segments reuse this).
pub fn node_stats(records: &[FaceRecord]) -> StreamStats {
    assert!(!records.is_empty(), "stats of an empty record set");
    let mut times: Vec<f64> = records.iter().map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    let n_frames = 1 + times.windows(2).filter(|w| w[0] != w[1]).count();
    let span = times[times.len() - 1] - times[0];
    let mut identities: Vec<&str> = records.iter().map(|r| r.identity.as_str()).collect();
    identities.sort_unstable();
    identities.dedup();
    StreamStats {
        n_records: records.len(),
        n_frames,
        n_identities: identities.len(),
        faces_per_frame: records.len() as f64 / n_frames as f64,
        time_span: span,
    }
}
