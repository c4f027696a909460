//! Dual-view patch correspondence: a Siamese matching network on a small
//! reverse-mode tensor core, an NCC baseline, ROC evaluation and a
//! detection-filtering pipeline for paired mammography views.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the usual choice of `f64`.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod ncc;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type MatchModel64 = model::MatchModel<f64>;
pub type MatchModel32 = model::MatchModel<f32>;
pub type PatchPair64 = data::PatchPair<f64>;
pub type Ensemble64 = train::Ensemble<f64>;
pub type Ensemble32 = train::Ensemble<f32>;
