//! Layered run configuration. A single TOML file holds one section per
//! concern ([run], [train], [synth], [sweep]); command-line flags override
//! file values; unknown keys anywhere are rejected. Whatever configuration a
//! command actually ran with is echoed into its output directory as
//! `effective_config.toml`, itself a loadable config file.

use crate::errors::CliError;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use speakergraph::metrics::TiePolicy;
use speakergraph::synth::SceneConfig;
use speakergraph::train::{Precision, TrainConfig};
use std::path::Path;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub run: RunSection,
    pub train: TrainConfig,
    pub synth: SceneConfig,
    pub sweep: SweepSection,
}

/// CLI-level knobs that belong to no single library module.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// How many scenes `synth` generates (consecutive seeds).
    pub scenes: usize,
    /// Ranking tie policy for `eval`.
    pub ties: TiePolicy,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { scenes: 1, ties: TiePolicy::Stable }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    #[default]
    Tau,
    NodesPerGraph,
    FilterDim,
}

impl SweepParam {
    pub fn label(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::NodesPerGraph => "nodes_per_graph",
            SweepParam::FilterDim => "filter_dim",
        }
    }
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::bad_input(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::bad_input(format!("config {}: {e}", path.display())))
}

/// Training hyperparameter overrides; every field defaults to the config
/// file's value (or the built-in default when no file is given).
#[derive(Args, Clone, Debug, Default)]
pub struct TrainFlags {
    /// Temporal edge threshold in seconds.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Maximum nodes per graph segment.
    #[arg(long)]
    pub nodes_per_graph: Option<usize>,
    /// Width of the graph layers.
    #[arg(long)]
    pub filter_dim: Option<usize>,
    /// Hidden width of the per-edge pair MLP.
    #[arg(long)]
    pub edge_hidden: Option<usize>,
    /// Peak learning rate of the cosine schedule.
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Segments per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Positive-class weight in the loss.
    #[arg(long)]
    pub pos_weight: Option<f64>,
    /// Fraction of segments held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Float width used for training arithmetic.
    #[arg(long, value_parser = ["f32", "f64"])]
    pub precision: Option<String>,
    /// Set to false for the graph-off (per-node) ablation.
    #[arg(long)]
    pub graph: Option<bool>,
    /// Set to false to replace the three-stream model with undirected-only.
    #[arg(long)]
    pub bi_dir: Option<bool>,
    /// Set to false to drop the projected box coordinates from the input.
    #[arg(long)]
    pub spatial_feat: Option<bool>,
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! over {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        over!(tau);
        over!(nodes_per_graph);
        over!(filter_dim);
        over!(edge_hidden);
        over!(lr0);
        over!(epochs);
        over!(batch_size);
        over!(seed);
        over!(pos_weight);
        over!(val_fraction);
        over!(graph);
        over!(bi_dir);
        over!(spatial_feat);
        // Graph-off removes the only thing that distinguishes the streams, so
        // unless bi_dir was requested explicitly, lower it too.
        if self.graph == Some(false) && self.bi_dir.is_none() {
            cfg.bi_dir = false;
        }
        if let Some(p) = &self.precision {
            cfg.precision = if p == "f32" { Precision::F32 } else { Precision::F64 };
        }
    }
}

/// Scene-generator overrides for `synth`.
#[derive(Args, Clone, Debug, Default)]
pub struct SceneFlags {
    #[arg(long)]
    pub n_identities: Option<usize>,
    /// Scene length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Mean speech-turn and silence-gap length in seconds.
    #[arg(long)]
    pub turn_length_mean: Option<f64>,
    /// Per-coordinate feature noise σ.
    #[arg(long)]
    pub feature_noise_sigma: Option<f64>,
    #[arg(long)]
    pub signal_strength: Option<f64>,
    #[arg(long)]
    pub d_visual: Option<usize>,
    #[arg(long)]
    pub d_audio: Option<usize>,
    /// Seed of the first scene; scene k uses seed + k.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Make speaking boxes drift toward the frame center.
    #[arg(long)]
    pub speaker_position_bias: Option<bool>,
}

impl SceneFlags {
    pub fn apply(&self, cfg: &mut SceneConfig) {
        macro_rules! over {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        over!(n_identities);
        over!(duration);
        over!(fps);
        over!(turn_length_mean);
        over!(feature_noise_sigma);
        over!(signal_strength);
        over!(d_visual);
        over!(d_audio);
        over!(seed);
        over!(speaker_position_bias);
    }
}

pub fn parse_ties(raw: Option<&str>, fallback: TiePolicy) -> Result<TiePolicy, CliError> {
    match raw {
        None => Ok(fallback),
        Some("stable") => Ok(TiePolicy::Stable),
        Some("pessimistic") => Ok(TiePolicy::Pessimistic),
        Some(other) => {
            Err(CliError::bad_input(format!("unknown tie policy {other:?} (stable|pessimistic)")))
        }
    }
}
