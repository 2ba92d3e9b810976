//! CM-MLP: a convolutional encoder with multi-scale MLP feature interaction
//! and axial-attention mask refinement for binary segmentation of objects
//! with complex edges, built on a small reverse-mode autodiff engine.
//!
//! Tensors are channel-first `(C, H, W)` and generic over [`Real`] so the
//! same code runs in `f32` for training and `f64` for gradient checks.

pub mod acre;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod mfi;
pub mod network;
pub mod nn;
pub mod params;
pub mod partition;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autodiff::{gradcheck, Bindings, GradcheckOptions, GradcheckReport, Graph, Stencil, Var};
pub use data::{AugmentConfig, Sample, SynthSpec};
pub use error::{Error, Result};
pub use loss::{LossConfig, LossReport};
pub use metrics::MetricReport;
pub use mfi::{CascadeSchedule, Connection, MfiConfig};
pub use network::{ModelConfig, Outputs, Setting};
pub use params::{ParamSpec, ParamStore, ParamVars};
pub use tensor::{DType, Real, Tensor};
pub use train::{EpochRecord, FitResult, OptimizerKind, TrainConfig, Trainer};
