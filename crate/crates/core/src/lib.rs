#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
mod fsutil;
pub mod adjust;
pub mod biasproxy;
pub mod harness;
pub mod metrics;
pub mod numgrad;
pub mod rng;
mod scalar;
pub mod sslpre;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision network used by the experiment pipeline.
pub type Mlp = numgrad::MlpModel<f32>;
/// Double-precision network for gradient checks and exact oracles.
pub type Mlp64 = numgrad::MlpModel<f64>;
pub type DebiasedModel = adjust::DebiasedModel<f32>;
pub type DebiasedModel64 = adjust::DebiasedModel<f64>;
pub type BiasProxy = biasproxy::BiasProxy<f32>;
pub type BiasProxy64 = biasproxy::BiasProxy<f64>;
pub type EncoderCheckpoint = sslpre::EncoderCheckpoint<f32>;
