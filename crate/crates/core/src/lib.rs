//! Gaze-guided hand-motion sequence prediction.
//!
//! A convolutional VQ-VAE learns a discrete codebook of short hand-pose
//! windows; a causal transformer fuses those tokens with gaze and object
//! context and predicts future tokens greedily, which the VQ-VAE decoder
//! turns back into 126-dimensional two-hand poses.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod generator;
pub mod rng;
pub mod synth;
pub mod vqvae;

pub use error::{Error, Result};
pub use autodiff::Tensor;
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use data::{GazeSequence, Hand, Motion, MotionSequence, ObjectKind, ObjectSet, Sample, SceneObject};
pub use eval::{run_grid, ExperimentGrid, Metric, MetricReport, Models, ReportRow};
pub use generator::{generate, Fusion, Generator, GeneratorConfig, Prediction, Predictor};
pub use synth::{build_dataset, SynthConfig, Validation};
pub use vqvae::{VqVae, VqVaeConfig};
