//! One handler per subcommand. Each validates its inputs up front, does the
//! work through the library crate, writes plain CSV/JSON artifacts, and
//! echoes the configuration it actually used into the output directory.

use crate::config::{FileConfig, SceneFlags, SweepParam, TrainFlags};
use crate::data::{
    ensure_out_dir, load_streams, predictions_csv, read_predictions, streams_to_segments,
    write_output, PredictionRow,
};
use crate::errors::CliError;
use clap::Args;
use log::info;
use serde::Serialize;
use speakergraph::checkpoint::{self, Checkpoint};
use speakergraph::graph::{segment_stats, GraphSegment};
use speakergraph::metrics::{map_over_groups, sweep_report, SweepEntry};
use speakergraph::model::{
    model_forward, param_count, param_sizes, GraphBatch, Mode, ModelConfig, ModelParams,
};
use speakergraph::records::{serialize_records, stream_stats, StreamStats};
use speakergraph::scalar::Scalar;
use speakergraph::synth::{gen_scene, per_frame_oracle_accuracy, SceneConfig};
use speakergraph::train::{
    check_gradients, history_csv, train, GradCheckConfig, Precision, TrainConfig, TrainResult,
};
use std::path::Path;

pub fn cmd_ingest(input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Row<'a> {
        source_id: &'a str,
        #[serde(flatten)]
        stats: StreamStats,
    }
    let streams = load_streams(input)?;
    let rows: Vec<Row> =
        streams.iter().map(|s| Row { source_id: &s.source_id, stats: stream_stats(s) }).collect();
    for row in &rows {
        println!("{}", serde_json::to_string(row).map_err(|e| CliError::Internal(e.into()))?);
    }
    if let Some(out) = out {
        ensure_out_dir(out)?;
        let json = serde_json::to_string_pretty(&rows).map_err(|e| CliError::Internal(e.into()))?;
        write_output(&out.join("ingest_stats.json"), &json)?;
    }
    Ok(())
}

pub fn cmd_build_graph(
    input: &Path,
    tau: Option<f64>,
    nodes_per_graph: Option<usize>,
    out: Option<&Path>,
    file: &FileConfig,
) -> Result<(), CliError> {
    let tau = tau.unwrap_or(file.train.tau);
    let npg = nodes_per_graph.unwrap_or(file.train.nodes_per_graph);
    if !(tau.is_finite() && tau >= 0.0) || npg == 0 {
        return Err(CliError::bad_input("tau must be ≥ 0 and nodes_per_graph positive"));
    }
    let streams = load_streams(input)?;
    let segments = streams_to_segments(&streams, npg, tau)?;
    let mut csv = String::from(
        "segment_id,n_nodes,n_frames,n_identities,time_span_seconds,\
         undirected_edges,forward_edges,backward_edges,\
         mean_in_degree_undirected,mean_in_degree_forward,mean_in_degree_backward\n",
    );
    for seg in &segments {
        let s = segment_stats(seg);
        println!(
            "{}: {} nodes over {:.2} s, edges und/fwd/bwd = {}/{}/{}",
            s.segment_id,
            s.n_nodes,
            s.time_span_seconds,
            s.undirected_edges,
            s.forward_edges,
            s.backward_edges
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            s.segment_id,
            s.n_nodes,
            s.n_frames,
            s.n_identities,
            s.time_span_seconds,
            s.undirected_edges,
            s.forward_edges,
            s.backward_edges,
            s.mean_in_degree_undirected,
            s.mean_in_degree_forward,
            s.mean_in_degree_backward
        ));
    }
    println!("{} segments from {} streams (tau = {tau}, n = {npg})", segments.len(), streams.len());
    if let Some(out) = out {
        ensure_out_dir(out)?;
        write_output(&out.join("segments.csv"), &csv)?;
    }
    Ok(())
}

pub fn cmd_synth(
    out: &Path,
    scenes: Option<usize>,
    flags: &SceneFlags,
    file: &FileConfig,
) -> Result<(), CliError> {
    let mut base = file.synth.clone();
    flags.apply(&mut base);
    let n_scenes = scenes.unwrap_or(file.run.scenes);
    if n_scenes == 0 {
        return Err(CliError::bad_input("--scenes must be positive"));
    }
    base.validate()?;
    ensure_out_dir(out)?;
    for k in 0..n_scenes {
        let cfg = SceneConfig {
            seed: base.seed + k as u64,
            scene_id: format!("scene_{k:03}"),
            ..base.clone()
        };
        let stream = gen_scene(&cfg)?;
        let positives = stream.records.iter().filter(|r| r.label == Some(1)).count();
        info!(
            "{}: {} records, positive rate {:.3}",
            cfg.scene_id,
            stream.records.len(),
            positives as f64 / stream.records.len() as f64
        );
        write_output(&out.join(format!("{}.jsonl", cfg.scene_id)), &serialize_records(&stream))?;
    }
    let oracle = per_frame_oracle_accuracy(&base, 50_000, base.seed ^ 0x0bac1e);
    println!(
        "{n_scenes} scene(s) written to {}; per-frame oracle balanced accuracy ≈ {oracle:.3}",
        out.display()
    );
    echo_config(out, &FileConfig { synth: base, ..file.clone() }, n_scenes)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    n_segments: usize,
    n_nodes: usize,
    trainable_params: usize,
    best_epoch: Option<usize>,
    best_val_map: Option<f64>,
}

fn finish_train<S: Scalar>(
    result: &TrainResult<S>,
    cfg: &TrainConfig,
    segments: &[GraphSegment],
    out: &Path,
) -> Result<TrainSummary, CliError> {
    checkpoint::save(out.join("checkpoint.json"), &result.params, Some(cfg))?;
    write_output(&out.join("history.csv"), &history_csv(&result.history))?;
    Ok(TrainSummary {
        n_segments: segments.len(),
        n_nodes: segments.iter().map(|s| s.nodes.len()).sum(),
        trainable_params: param_count(&result.params),
        best_epoch: result.best_epoch,
        best_val_map: result.best_val_map,
    })
}

pub fn cmd_train(
    data: &Path,
    out: &Path,
    flags: &TrainFlags,
    file: &FileConfig,
) -> Result<(), CliError> {
    let mut cfg = file.train;
    flags.apply(&mut cfg);
    cfg.validate()?;
    let streams = load_streams(data)?;
    let segments = streams_to_segments(&streams, cfg.nodes_per_graph, cfg.tau)?;
    ensure_out_dir(out)?;
    info!(
        "training on {} segments ({} nodes), {} epochs",
        segments.len(),
        segments.iter().map(|s| s.nodes.len()).sum::<usize>(),
        cfg.epochs
    );
    let summary = match cfg.precision {
        Precision::F64 => finish_train(&train::<f64>(&segments, &cfg)?, &cfg, &segments, out)?,
        Precision::F32 => finish_train(&train::<f32>(&segments, &cfg)?, &cfg, &segments, out)?,
    };
    write_output(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.into()))?,
    )?;
    echo_config(out, &FileConfig { train: cfg, ..file.clone() }, file.run.scenes)?;
    match (summary.best_epoch, summary.best_val_map) {
        (Some(e), Some(m)) => println!("best validation mAP {m:.4} at epoch {e}"),
        _ => println!("finished (no validation split)"),
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

pub fn cmd_predict(
    ckpt_path: &Path,
    data: &Path,
    out: &Path,
    tau: Option<f64>,
    nodes_per_graph: Option<usize>,
) -> Result<(), CliError> {
    let ckpt: Checkpoint = checkpoint::load(ckpt_path)?;
    let params: ModelParams<f64> = ckpt.to_params()?;
    let tau = tau.or(ckpt.train.map(|t| t.tau)).unwrap_or_else(|| TrainConfig::default().tau);
    let npg = nodes_per_graph
        .or(ckpt.train.map(|t| t.nodes_per_graph))
        .unwrap_or_else(|| TrainConfig::default().nodes_per_graph);
    let streams = load_streams(data)?;
    if (streams[0].d_visual, streams[0].d_audio) != (ckpt.model.d_visual, ckpt.model.d_audio) {
        return Err(CliError::Incompatible(format!(
            "checkpoint expects feature dims ({}, {}) but data has ({}, {})",
            ckpt.model.d_visual, ckpt.model.d_audio, streams[0].d_visual, streams[0].d_audio
        )));
    }
    let segments = streams_to_segments(&streams, npg, tau)?;
    let mut rows = Vec::new();
    for seg in &segments {
        let batch = GraphBatch::<f64>::from_segment(seg)?;
        let scores = model_forward(&batch, &params, Mode::Eval)?;
        for (node_index, score) in scores.iter().enumerate() {
            rows.push(PredictionRow {
                segment_id: seg.segment_id.clone(),
                node_index,
                score: *score,
                label: seg.nodes[node_index].label,
            });
        }
    }
    ensure_out_dir(out)?;
    write_output(&out.join("predictions.csv"), &predictions_csv(&rows)?)?;
    println!("wrote {} predictions to {}", rows.len(), out.join("predictions.csv").display());
    Ok(())
}

pub fn cmd_eval(
    predictions: &Path,
    ties: Option<&str>,
    out: Option<&Path>,
    file: &FileConfig,
) -> Result<(), CliError> {
    let ties = crate::config::parse_ties(ties, file.run.ties)?;
    let entries = read_predictions(predictions)?;
    let report = map_over_groups(&entries, ties)?;
    println!(
        "mAP {:.6} over {} group(s) ({} skipped without positives)",
        report.mean_ap,
        report.per_group.len(),
        report.skipped_groups
    );
    for (group, ap) in &report.per_group {
        println!("  {group} {ap:.6}");
    }
    if let Some(out) = out {
        ensure_out_dir(out)?;
        let json =
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.into()))?;
        write_output(&out.join("eval.json"), &json)?;
    }
    Ok(())
}

pub fn cmd_sweep(
    data: &Path,
    out: &Path,
    param: Option<SweepParam>,
    values: &[f64],
    flags: &TrainFlags,
    file: &FileConfig,
) -> Result<(), CliError> {
    let mut cfg = file.train;
    flags.apply(&mut cfg);
    cfg.validate()?;
    let param = param.unwrap_or(file.sweep.param);
    let values: Vec<f64> =
        if values.is_empty() { file.sweep.values.clone() } else { values.to_vec() };
    if values.is_empty() {
        return Err(CliError::bad_input("sweep needs --values (or a [sweep] config section)"));
    }
    if cfg.val_fraction <= 0.0 {
        return Err(CliError::bad_input("sweep needs val_fraction > 0 to score each grid point"));
    }
    for &v in &values {
        let integral = v > 0.0 && v.fract() == 0.0;
        match param {
            SweepParam::Tau if v.is_finite() && v >= 0.0 => {}
            SweepParam::NodesPerGraph | SweepParam::FilterDim if integral => {}
            _ => {
                return Err(CliError::bad_input(format!(
                    "value {v} is not valid for {}",
                    param.label()
                )));
            }
        }
    }
    let streams = load_streams(data)?;
    ensure_out_dir(out)?;
    let mut entries = Vec::with_capacity(values.len());
    for &value in &values {
        let mut run = cfg;
        match param {
            SweepParam::Tau => run.tau = value,
            SweepParam::NodesPerGraph => run.nodes_per_graph = value as usize,
            SweepParam::FilterDim => {
                run.filter_dim = value as usize;
                // Keep the pair-MLP width tied to the filter width unless the
                // user pinned it, matching how the published size variants
                // scale.
                if flags.edge_hidden.is_none() {
                    run.edge_hidden = value as usize;
                }
            }
        }
        let segments = streams_to_segments(&streams, run.nodes_per_graph, run.tau)?;
        let map = match run.precision {
            Precision::F64 => train::<f64>(&segments, &run)?.best_val_map,
            Precision::F32 => train::<f32>(&segments, &run)?.best_val_map,
        }
        .ok_or_else(|| {
            CliError::bad_input("no validation mAP produced; is the dataset labeled and split?")
        })?;
        info!("{} = {value}: mAP {map:.4}", param.label());
        entries.push(SweepEntry { value, map });
    }
    let csv = sweep_report(param.label(), &entries);
    print!("{csv}");
    write_output(&out.join("sweep.csv"), &csv)?;
    echo_config(
        out,
        &FileConfig {
            train: cfg,
            sweep: crate::config::SweepSection { param, values },
            ..file.clone()
        },
        file.run.scenes,
    )?;
    Ok(())
}

#[derive(Args, Clone, Debug, Default)]
pub struct GradFlags {
    /// Random segments to test.
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub min_nodes: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Finite-difference step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Maximum allowed relative error.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub pos_weight: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub filter_dim: Option<usize>,
    #[arg(long)]
    pub edge_hidden: Option<usize>,
    #[arg(long)]
    pub d_visual: Option<usize>,
    #[arg(long)]
    pub d_audio: Option<usize>,
    #[arg(long)]
    pub bi_dir: Option<bool>,
    #[arg(long)]
    pub graph: Option<bool>,
    #[arg(long)]
    pub spatial_feat: Option<bool>,
}

pub fn cmd_check_grad(flags: &GradFlags) -> Result<(), CliError> {
    let mut cfg = GradCheckConfig::default();
    macro_rules! over {
        ($flag:ident, $($target:tt)+) => {
            if let Some(v) = flags.$flag {
                cfg.$($target)+ = v;
            }
        };
    }
    over!(segments, n_segments);
    over!(min_nodes, min_nodes);
    over!(max_nodes, max_nodes);
    over!(tau, tau);
    over!(step, step);
    over!(tolerance, tolerance);
    over!(pos_weight, pos_weight);
    over!(seed, seed);
    over!(filter_dim, model.filter_dim);
    over!(edge_hidden, model.edge_hidden);
    over!(d_visual, model.d_visual);
    over!(d_audio, model.d_audio);
    over!(bi_dir, model.bi_dir);
    over!(graph, model.graph);
    over!(spatial_feat, model.spatial_feat);
    if flags.graph == Some(false) && flags.bi_dir.is_none() {
        cfg.model.bi_dir = false;
    }
    let report = check_gradients(&cfg)?;
    print!("{}", report.to_text());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Internal(anyhow::anyhow!(
            "gradient check failed: max relative error {:.3e} > {:.3e}",
            report.max_rel_err,
            report.tolerance
        )))
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct ModelFlags {
    /// Width of the graph layers.
    #[arg(long)]
    pub filter_dim: Option<usize>,
    /// Pair-MLP hidden width; defaults to the filter width.
    #[arg(long)]
    pub edge_hidden: Option<usize>,
    #[arg(long)]
    pub d_visual: Option<usize>,
    #[arg(long)]
    pub d_audio: Option<usize>,
    #[arg(long)]
    pub bi_dir: Option<bool>,
    #[arg(long)]
    pub spatial_feat: Option<bool>,
}

pub fn cmd_param_count(flags: &ModelFlags) -> Result<(), CliError> {
    let filter_dim = flags.filter_dim.unwrap_or(64);
    let cfg = ModelConfig {
        filter_dim,
        edge_hidden: flags.edge_hidden.unwrap_or(filter_dim),
        d_visual: flags.d_visual.unwrap_or(512),
        d_audio: flags.d_audio.unwrap_or(512),
        bi_dir: flags.bi_dir.unwrap_or(true),
        graph: true,
        spatial_feat: flags.spatial_feat.unwrap_or(true),
    };
    let params = ModelParams::<f64>::zeros(cfg)?;
    let sizes = param_sizes(&params);
    println!(
        "config: filter_dim={} edge_hidden={} d_visual={} d_audio={} bi_dir={} spatial_feat={}",
        cfg.filter_dim, cfg.edge_hidden, cfg.d_visual, cfg.d_audio, cfg.bi_dir, cfg.spatial_feat
    );
    println!("trainable_params {}", sizes.trainable);
    println!("millions {:.2}", sizes.trainable as f64 / 1e6);
    println!("bytes_f32 {}", sizes.bytes_f32);
    println!("megabytes_f32 {:.2}", sizes.bytes_f32 as f64 / 1e6);
    println!("bytes_f64 {}", sizes.bytes_f64);
    Ok(())
}

/// Echo the configuration a command actually used; the result is itself a
/// valid `--config` file.
fn echo_config(out: &Path, cfg: &FileConfig, scenes: usize) -> Result<(), CliError> {
    let mut effective = cfg.clone();
    effective.run.scenes = scenes;
    let text = toml::to_string_pretty(&effective)
        .map_err(|e| CliError::Internal(anyhow::anyhow!("config serialization failed: {e}")))?;
    write_output(&out.join("effective_config.toml"), &text)
}
