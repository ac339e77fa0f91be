//! Gate-Shift Module networks: differentiable spatial gating plus temporal
//! shifting for video models, a miniature GSM network with its trainer, a
//! synthetic order-sensitive video generator and an architecture cost
//! analyzer.
//!
//! All math is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checking); the aliases below name the common instantiations.

pub mod analysis;
pub mod backbone;
mod binfmt;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod gradcheck_suite;
pub mod gsm;
pub mod kernels;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use backbone::{build_mini_net, ensemble_average, MiniGsmNet, NetConfig};
pub use error::{GsmError, Result};
pub use gsm::{GateActivation, GateMode, GsmParams};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type GsmParams32 = GsmParams<f32>;
pub type GsmParams64 = GsmParams<f64>;
pub type MiniGsmNet32 = MiniGsmNet<f32>;
pub type MiniGsmNet64 = MiniGsmNet<f64>;
