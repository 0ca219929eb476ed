//! Multimodal sentiment regression with mutual-information regularised
//! unimodal auxiliary tasks, built on a small reverse-mode autodiff tape.

pub mod ablation;
pub mod checkpoint;
pub mod cpc;
pub mod data;
pub mod encoders;
pub mod error;
pub mod estimate;
pub mod fusion;
pub mod gradcheck;
pub mod gradsuite;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod ulg;

pub use error::{Error, Result};
pub use layers::Modality;
pub use metrics::MetricsReport;
pub use model::{ModelConfig, SelfMiModel, TaskSet};
pub use params::{ParamGroup, ParamStore};
pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;
