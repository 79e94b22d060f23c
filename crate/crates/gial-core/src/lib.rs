//! Treatment effect estimation on networked observational data.
//!
//! The crate trains a graph-infomax adversarial model: a graph neural
//! encoder (convolutional or attention-based) learns confounder
//! representations, a mutual-information probe ties node representations to
//! a whole-graph structure summary, a two-head generator predicts potential
//! outcomes, and an outcome discriminator plays a minimax game against the
//! generator. A synthetic benchmark generator with known ground truth and a
//! graph-imbalance analyzer round out the toolkit.
//!
//! Everything computes on the crate's own dense reverse-mode
//! differentiation tape in 64-bit floats, and every run is bit-reproducible
//! under a fixed seed.

pub mod datagen;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod infomax;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod outcome;
pub mod training;

pub use datagen::{generate, split, GenConfig, SplitIndices};
pub use dataset::Dataset;
pub use encoders::{Encoder, EncoderConfig, EncoderKind, GraphContext};
pub use error::{Error, Result};
pub use graph::{EdgeCensus, Graph};
pub use infomax::{corrupt, CorruptedBatch, MiDiscriminator};
pub use metrics::{eps_ate, sqrt_pehe, MetricsReport, SplitMse};
pub use model::{GialModel, ModelConfig, ObjectiveInputs};
pub use numerics::{grad_check, AdamConfig, AdamState, Matrix, Tape, TensorId};
pub use outcome::{BalancedBatch, CfDiscriminator, OutcomeGenerator, PotentialOutcomes};
pub use training::{
    ablate, evaluate_model, sensitivity_sweep, train, AblationVariant, TrainConfig, TrainTrace,
    Trainer, ValidationCriterion,
};
