//! Two-stream video activity recognition on the CPU.
//!
//! The pipeline turns a clip into (frame, optical-flow image) pairs, runs a
//! convolutional backbone per stream, pools each final feature map globally
//! (average and max), fuses the four pooled vectors per frame with a short
//! LSTM into a per-frame class distribution, and feeds the sequence of those
//! distributions to a second LSTM that predicts the clip's activity.
//!
//! Everything differentiable is generic over [`Scalar`]; the aliases below
//! fix the precision used by training and the command-line tool.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod gradcheck;
pub mod graph;
pub mod image;
pub mod init;
pub mod layers;
pub mod loss;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision of training and evaluation.
pub type Real = f64;

pub type Tensor = tensor::Tensor<Real>;
pub type Graph = graph::Graph<Real>;
