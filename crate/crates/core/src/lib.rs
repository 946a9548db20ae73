//! Multi-view entropy bottleneck.
//!
//! Siamese self-supervised learning where the objective is to maximize the
//! agreement between two views' embeddings while keeping the embedding
//! distribution's differential entropy high. The entropy gradient comes from a
//! kernel Stein score estimate, detached and folded into a linear surrogate.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix it to `f64`, which is what the trainer and CLI use.

// Parameter checks are written `!(x > 0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod encoder;
pub mod entropy;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod losses;
pub mod oracle;
pub mod scalar;
pub mod sphere;
pub mod stein;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use scalar::Real;

pub type Matrix64 = Matrix<f64>;
pub type Embedding64 = sphere::Embedding<f64>;
pub type Vmf64 = sphere::VmfDistribution<f64>;
pub type KernelSpec64 = kernels::KernelSpec<f64>;
pub type SteinConfig64 = stein::SteinConfig<f64>;
pub type ScoreMatrix64 = stein::ScoreMatrix<f64>;
pub type LossTerms64 = losses::LossTerms<f64>;
pub type EncoderModel64 = encoder::EncoderModel<f64>;
pub type TargetBranch64 = encoder::TargetBranch<f64>;
pub type ViewPairBatch64 = data::ViewPairBatch<f64>;
pub type DiscreteJoint64 = oracle::DiscreteJoint<f64>;
