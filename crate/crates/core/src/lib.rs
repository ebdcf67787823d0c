//! Domain-adaptive proxy-based deep metric learning on feature vectors.

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod suite;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Axis, Graph, Var};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use data::{FeatureDataset, SynthSpec};
pub use error::{DadaError, Result};
pub use eval::{EvalReport, MetricsRecord};
pub use nn::{ModelSpec, Models};
pub use tensor::Tensor;
pub use trainer::{HyperParams, Trainer};
