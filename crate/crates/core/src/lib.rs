//! Active speaker detection on spatial-temporal face-track graphs.
//!
//! The pipeline: per-frame face records ([`records`]) are partitioned into
//! fixed-size segments and wired into three sparse edge sets — forward,
//! backward, undirected — over a temporal window τ ([`graph`]). A three-stream
//! graph network ([`model`]) fuses visual, audio and box-geometry features,
//! runs one pair-MLP edge aggregation and two neighbor-sum linear layers per
//! stream, and sums the stream heads into per-node speaking scores. Training
//! ([`train`]) is plain Adam on weighted binary cross-entropy with a cosine
//! learning-rate schedule; quality is ranked average precision ([`metrics`]).
//! A synthetic conversation generator ([`synth`]) provides end-to-end
//! fixtures with a known Bayes-optimal accuracy, and [`checkpoint`] persists
//! parameters as versioned JSON.
//!
//! All numerics are generic over the scalar type ([`scalar::Scalar`]);
//! `f64`-backed aliases live at the crate root (`Params`, `Batch`, …) with
//! `f32` twins under a `32` suffix.

pub mod checkpoint;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod records;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

/// Default-precision (f64) aliases for the generic core types.
pub type Matrix = tensor::Matrix<f64>;
pub type Params = model::ModelParams<f64>;
pub type Batch = model::GraphBatch<f64>;
pub type Cache = model::ForwardCache<f64>;
pub type Trainer = train::TrainState<f64>;

/// Single-precision twins.
pub type Matrix32 = tensor::Matrix<f32>;
pub type Params32 = model::ModelParams<f32>;
pub type Batch32 = model::GraphBatch<f32>;
pub type Cache32 = model::ForwardCache<f32>;
pub type Trainer32 = train::TrainState<f32>;
