//! Probabilistic longitudinal trajectory prediction with driver-behavior
//! heterogeneity.
//!
//! The pipeline: ingest (or synthesize) 10 Hz car-following tracks, cut them
//! into 20 s behavior / 5 s observation / 4 s future windows, compute
//! driving-behavior indicators per window, identify situation-specific
//! driving preferences (t-SNE + k-medoids), rank indicators with a random
//! forest, quantize the key indicators into behavior vectors, train an LSTM
//! encoder-decoder with a mixture-density output head on the observation
//! segments, and attribute predictions to input channels with Shapley
//! values.

pub mod error;
pub mod explain;
pub mod features;
pub mod preference;
pub mod seqmodel;
pub mod trajdata;
pub mod train_eval;

pub use error::{Error, Result};
