//! Phoneme-discretized saliency maps for spectrogram classifiers.
//!
//! The crate turns a continuous saliency map over a spectrogram into a
//! binary mask made of whole phoneme spans, and measures how faithful such
//! masks are to the classifier they explain. Everything needed to check
//! this end to end ships in-repo: a small differentiable classifier, six
//! gradient-based attribution methods, two synthetic datasets with known
//! ground truth, and report writers.

pub mod alignment;
pub mod attribution;
pub mod discretize;
pub mod error;
pub mod evaluation;
pub mod interchange;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
pub use matrix::Matrix;
