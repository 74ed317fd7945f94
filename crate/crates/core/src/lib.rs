//! Reproducible benchmark harness for convolutional leaf-disease
//! classifiers on an imbalanced five-class dataset.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model_zoo;
pub mod nn;
pub mod preprocess;
pub mod seeding;
pub mod splitter;
pub mod train_engine;

pub use error::{Error, Result};
