//! Wavelet-guided, dual-attention, U-shaped selective-scan network for
//! breast-ultrasound lesion segmentation, with its own tensor and autodiff
//! engine, training loop and evaluation metrics.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pick the 64-bit default used for training and gradient checks.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod daff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod selftest;
pub mod ssm;
pub mod tensor;
pub mod train;
pub mod wavelet;
pub mod whf;

pub use autograd::{Tape, Var};
pub use checkpoint::Checkpoint;
pub use config::{DataSource, TrainConfig};
pub use error::{Error, Result};
pub use metrics::{Mask, SegReport};
pub use network::{build_model, Model, ModelConfig, SkipMode, Variant};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
