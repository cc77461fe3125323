//! Hand-scene network, reverse-mode autodiff, losses and the two-stage
//! training procedure.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod handfk;
pub mod losses;
pub mod network;
pub mod nn;
pub mod params;
pub mod predictions;
pub mod training;

pub use autodiff::{Graph, Tensor, Var};
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use losses::{loss_stage1, loss_stage2, LossBreakdown, LossWeights};
pub use network::{FrameInput, FramePrediction, Hand3R, HandPrediction, HandQuery, ScenePrediction, SceneState};
pub use params::{ParamGroup, ParamStore};
pub use predictions::PredictionsFile;
pub use training::{TrainConfig, TraceRow};
