//! Appearance-based gaze regression.
//!
//! A four-input convolutional network (two eye crops, a face crop and a 25×25
//! face-position grid) regresses the gaze point in centimeters relative to the
//! device's front camera. The crate contains everything needed to train and
//! evaluate it without external ML frameworks:
//!
//! - [`tensor`]: f32 tensors with reverse-mode autodiff and SGD
//! - [`geometry`]: device tables and the screen ↔ camera-centimeter mapping
//! - [`data`]: frame samples, face grids, shift augmentation, subject splits
//!   and a synthetic corpus generator
//! - [`model`]: the full network, its distillation student, and ablations
//! - [`training`]: losses, schedules, training, per-device fine-tuning, distillation
//! - [`calibration`]: per-subject ridge calibration on penultimate features
//! - [`evaluation`]: frame/dot error, test-time augmentation, baselines, studies
//! - [`io`]: the GZT tensor container, checkpoints and dataset directories

pub mod calibration;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{DeviceSpec, GazePoint, Orientation};
pub use params::ModelParams;
pub use tensor::{ConvSpec, Graph, Tensor, Var};
