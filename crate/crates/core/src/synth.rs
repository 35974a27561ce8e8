//! Synthetic conversation scenes with a planted audio-visual speaking
//! signal.
//!
//! A seeded alternating-renewal process switches between silence and speech
//! (both exponentially distributed with mean `turn_length_mean`, so speech
//! occupies half the time in expectation); each speech turn picks one
//! speaker uniformly, so at most one identity is positive per instant and
//! the per-identity positive rate is ≈ 0.5/n_identities. Features are
//! linear-Gaussian:
//!
//! - `visual = identity_embedding + speaking·strength·v_dir + N(0, σ²)`
//! - `audio  = any_speech·strength·a_dir + N(0, σ²)`
//!
//! so audio separates speech from silence and visual separates *who* —
//! exactly the division of labor the fusion stage must learn. Per-frame
//! noise makes single-frame classification unreliable while the speaking
//! state persists across a turn, which is what temporal aggregation
//! exploits; the linear-Gaussian form admits an exact per-frame oracle
//! ([`per_frame_oracle_accuracy`]) used to calibrate σ to a target
//! single-frame difficulty. The signal directions are global constants
//! (independent of the scene seed) so structure learned on one set of scenes
//! transfers to any other.

use crate::graph::{stream_to_segments, GraphSegment};
use crate::records::{FaceRecord, IngestError, RecordStream};
use crate::train::{train, TrainConfig, TrainError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Everything that defines one generated scene. `seed` fixes the stream
/// byte-for-byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_identities: usize,
    /// Scene length in seconds.
    pub duration: f64,
    pub fps: f64,
    /// Mean of the exponential speech-turn and silence-gap lengths, seconds.
    pub turn_length_mean: f64,
    /// Per-coordinate Gaussian noise σ on both feature vectors.
    pub feature_noise_sigma: f64,
    /// Scale of the planted signal along the global directions.
    pub signal_strength: f64,
    pub d_visual: usize,
    pub d_audio: usize,
    pub seed: u64,
    /// When on, a speaking identity's box drifts toward the frame center,
    /// making box geometry informative; off by default so the spatial-feature
    /// ablation measures an honest zero.
    pub speaker_position_bias: bool,
    /// Stream id; also the prefix of downstream segment ids.
    pub scene_id: String,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_identities: 2,
            duration: 120.0,
            fps: 25.0,
            turn_length_mean: 2.0,
            // Calibrated so the exact per-frame oracle sits at ≈0.75
            // balanced accuracy at signal_strength 1 (see the tests).
            feature_noise_sigma: 0.875,
            signal_strength: 1.0,
            d_visual: 512,
            d_audio: 512,
            seed: 0,
            speaker_position_bias: false,
            scene_id: "scene:0".into(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        if self.n_identities == 0 {
            return bad("n_identities must be positive");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive");
        }
        if self.fps * self.duration < 1.0 {
            return bad("fps·duration must cover at least one frame");
        }
        if !(self.turn_length_mean >= 1e-3 && self.turn_length_mean.is_finite()) {
            return bad("turn_length_mean must be at least 1 ms");
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return bad("feature_noise_sigma must be non-negative");
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return bad("signal_strength must be non-negative");
        }
        if self.d_visual == 0 || self.d_audio == 0 {
            return bad("feature dimensions must be positive");
        }
        Ok(())
    }
}

/// Deterministic unit vector from a dedicated seed, independent of scenes.
fn unit_vector(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Global signal directions; fixed seeds so every scene plants the same
/// signal and a model trained on one batch of scenes transfers to another.
fn signal_directions(d_visual: usize, d_audio: usize) -> (Vec<f64>, Vec<f64>) {
    (unit_vector(d_visual, 0x5167_0001), unit_vector(d_audio, 0x5167_0002))
}

/// Identity embeddings hash the identity string so they are stable across
/// scenes and independent of the scene seed.
fn identity_embedding(identity: &str, dim: usize) -> Vec<f64> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in identity.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    unit_vector(dim, h)
}

/// Speaking intervals: `(start, end, speaker index)`; gaps between them are
/// silence.
fn speech_turns(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<(f64, f64, usize)> {
    let mut turns = Vec::new();
    let mut t = 0.0;
    let mut speaking = false;
    while t < cfg.duration {
        let len = -cfg.turn_length_mean * (1.0 - rng.gen::<f64>()).ln();
        if speaking {
            let speaker = rng.gen_range(0..cfg.n_identities);
            turns.push((t, t + len, speaker));
        }
        t += len;
        speaking = !speaking;
    }
    turns
}

/// Generate one labeled scene. Deterministic in `cfg.seed`; identities are
/// named `id0..idN` and present in every frame.
pub fn gen_scene(cfg: &SceneConfig) -> Result<RecordStream, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (v_dir, a_dir) = signal_directions(cfg.d_visual, cfg.d_audio);
    let identities: Vec<String> = (0..cfg.n_identities).map(|i| format!("id{i}")).collect();
    let embeddings: Vec<Vec<f64>> =
        identities.iter().map(|id| identity_embedding(id, cfg.d_visual)).collect();

    let turns = speech_turns(cfg, &mut rng);

    // Per-identity box state: fixed size, bounded random-walk center.
    let mut sizes = Vec::with_capacity(cfg.n_identities);
    let mut centers = Vec::with_capacity(cfg.n_identities);
    for i in 0..cfg.n_identities {
        let w = rng.gen_range(0.12..0.20);
        let h = rng.gen_range(0.14..0.22);
        let cx = (i as f64 + 1.0) / (cfg.n_identities as f64 + 1.0) + rng.gen_range(-0.04..0.04);
        let cy: f64 = 0.5 + rng.gen_range(-0.05..0.05);
        sizes.push((w, h));
        centers.push((cx.clamp(w / 2.0, 1.0 - w / 2.0), cy.clamp(h / 2.0, 1.0 - h / 2.0)));
    }

    let n_frames = (cfg.fps * cfg.duration).floor() as usize;
    let sigma = cfg.feature_noise_sigma;
    let strength = cfg.signal_strength;
    let mut records = Vec::with_capacity(n_frames * cfg.n_identities);
    let mut turn_cursor = 0usize;
    for frame in 0..n_frames {
        let time = frame as f64 / cfg.fps;
        while turn_cursor < turns.len() && turns[turn_cursor].1 <= time {
            turn_cursor += 1;
        }
        let active: Option<usize> = match turns.get(turn_cursor) {
            Some(&(start, _, speaker)) if start <= time => Some(speaker),
            _ => None,
        };
        for (i, identity) in identities.iter().enumerate() {
            let speaking = active == Some(i);
            let any_speech = active.is_some();
            let (w, h) = sizes[i];
            let (cx, cy) = &mut centers[i];
            *cx += 0.006 * rng.sample::<f64, _>(StandardNormal);
            *cy += 0.006 * rng.sample::<f64, _>(StandardNormal);
            if cfg.speaker_position_bias && speaking {
                *cx += 0.05 * (0.5 - *cx);
                *cy += 0.05 * (0.5 - *cy);
            }
            *cx = cx.clamp(w / 2.0, 1.0 - w / 2.0);
            *cy = cy.clamp(h / 2.0, 1.0 - h / 2.0);

            let visual: Vec<f64> = (0..cfg.d_visual)
                .map(|k| {
                    let signal = if speaking { strength * v_dir[k] } else { 0.0 };
                    embeddings[i][k] + signal + sigma * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let audio: Vec<f64> = (0..cfg.d_audio)
                .map(|k| {
                    let signal = if any_speech { strength * a_dir[k] } else { 0.0 };
                    signal + sigma * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            records.push(FaceRecord {
                bbox: [*cx - w / 2.0, *cy - h / 2.0, w, h],
                time,
                identity: identity.clone(),
                visual_feat: visual,
                audio_feat: audio,
                label: Some(speaking as u8),
            });
        }
    }
    Ok(RecordStream::from_records(records, cfg.scene_id.clone())?)
}

/// Exact per-frame Bayes oracle, Monte-Carlo estimated balanced accuracy.
///
/// The linear-Gaussian feature model reduces to two scalar sufficient
/// statistics: the visual projection `u = v_dirᵀ(visual − embedding)` is
/// `N(speaking·s, σ²)` and the audio projection `w = a_dirᵀ·audio` is
/// `N(any_speech·s, σ²)`. The log-likelihood ratio of speaking vs not
/// (marginalizing who else might be speaking) is evaluated exactly on
/// simulated draws; balanced accuracy uses the threshold-0 rule. This is the
/// best any single-frame classifier can do, so it calibrates σ to a target
/// difficulty.
pub fn per_frame_oracle_accuracy(cfg: &SceneConfig, n_samples: usize, seed: u64) -> f64 {
    assert!(n_samples > 0, "need at least one sample");
    let s = cfg.signal_strength;
    let sigma = cfg.feature_noise_sigma;
    if sigma == 0.0 {
        return if s > 0.0 { 1.0 } else { 0.5 };
    }
    if s == 0.0 {
        return 0.5;
    }
    let n_ids = cfg.n_identities as f64;
    let p_any = 0.5; // equal exponential means → speech half the time
    let p_pos = p_any / n_ids;
    // P(someone else speaks | this identity is silent)
    let q1 = if cfg.n_identities > 1 { (p_any - p_pos) / (1.0 - p_pos) } else { 0.0 };
    let q0 = 1.0 - q1;
    let var2 = 2.0 * sigma * sigma;
    let log_n = |x: f64, mean: f64| -(x - mean) * (x - mean) / var2;
    let llr = |u: f64, w: f64| {
        let visual = log_n(u, s) - log_n(u, 0.0);
        let a1 = log_n(w, s);
        // log(q0·e^{b0} + q1·e^{b1}) via log-sum-exp
        let b0 = log_n(w, 0.0);
        let b1 = log_n(w, s);
        let m = b0.max(b1);
        let a0 = m + (q0 * (b0 - m).exp() + q1 * (b1 - m).exp()).ln();
        visual + a1 - a0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fn normal(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
        mean + sigma * rng.sample::<f64, StandardNormal>(StandardNormal)
    }
    let (mut tp, mut tn) = (0usize, 0usize);
    for _ in 0..n_samples {
        // speaking node: u ~ N(s), someone speaks so w ~ N(s)
        if llr(normal(&mut rng, s, sigma), normal(&mut rng, s, sigma)) > 0.0 {
            tp += 1;
        }
        // silent node: u ~ N(0); audio depends on whether someone else speaks
        let z = rng.gen_bool(q1);
        let w_mean = if z { s } else { 0.0 };
        if llr(normal(&mut rng, 0.0, sigma), normal(&mut rng, w_mean, sigma)) <= 0.0 {
            tn += 1;
        }
    }
    (tp as f64 + tn as f64) / (2.0 * n_samples as f64)
}

/// Scene set for benchmarks: same physics, consecutive seeds, ids
/// `scene:<k>`.
pub fn bench_scenes(base: &SceneConfig, n_scenes: usize) -> Vec<SceneConfig> {
    (0..n_scenes)
        .map(|k| SceneConfig {
            seed: base.seed + k as u64,
            scene_id: format!("scene:{k}"),
            ..base.clone()
        })
        .collect()
}

/// The seeded desk-scale learning benchmark: 24 conversations of 12 s at the
/// calibrated single-frame difficulty (per-frame oracle ≈ 0.75). Feature
/// width 32 keeps a full 70-epoch training under two minutes on one core
/// while leaving the signal rank-1 in noise, exactly as at full width — the
/// oracle difficulty does not depend on the width.
pub fn benchmark_scenes() -> Vec<SceneConfig> {
    let base =
        SceneConfig { duration: 12.0, d_visual: 32, d_audio: 32, seed: 100, ..Default::default() };
    bench_scenes(&base, 24)
}

/// Materialize scene configs into training segments.
pub fn build_dataset(
    scenes: &[SceneConfig],
    nodes_per_graph: usize,
    tau: f64,
) -> Result<Vec<GraphSegment>, SynthError> {
    let mut segments = Vec::new();
    for cfg in scenes {
        let stream = gen_scene(cfg)?;
        segments.extend(stream_to_segments(&stream, nodes_per_graph, tau)?);
    }
    Ok(segments)
}

/// Context-free reference point: the same fusion trunk and training budget
/// with every edge set reduced to self-loops, so each node is classified
/// from its own frame alone. Returns best held-out mAP. The gap to the full
/// model measures what temporal-graph reasoning adds.
pub fn baseline_mlp(dataset: &[GraphSegment], cfg: &TrainConfig) -> Result<f64, TrainError> {
    let mut flat = *cfg;
    flat.graph = false;
    flat.bi_dir = false;
    let result = train::<f64>(dataset, &flat)?;
    result.best_val_map.ok_or_else(|| {
        TrainError::InvalidConfig("baseline comparison needs a validation split".into())
    })
}
