//! Tiny-attention adapter tuning on a frozen toy transformer.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which training and all exactness checks
//! use.

pub mod adapter;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod trainer;

pub use adapter::{count_adapter_params, AdapterConfig};
pub use backbone::{BackboneConfig, Batch, Placement};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tasks::{Rule, TaskSpec};
pub use trainer::{Mode, ScheduleKind, TrainConfig, TrainReport};

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tape::Tape<f64>;
pub type Backbone = backbone::Backbone<f64>;
pub type TinyAttnAdapter = adapter::TinyAttnAdapter<f64>;
pub type AdapterStack = model::AdapterStack<f64>;
pub type Model = model::Model<f64>;
pub type AdamW = trainer::AdamW<f64>;
