//! Inertial odometry with a convolution–attention velocity regressor and
//! differentially private training via gradient-aligned noise injection.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what training uses.

pub mod accountant;
pub mod augment;
pub mod dp;
pub mod imu;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type Matrix = dp::Matrix<f64>;
pub type SvdTriple = dp::SvdTriple<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type DpOutput = dp::DpOutput<f64>;
