//! Sentence-selecting text classification where the selected rationale is the
//! only evidence the prediction can depend on.
//!
//! The model scores every candidate evidence set (the query alone, each
//! sentence, and optionally each sentence pair) with a full label
//! distribution, and predicts with the candidate it is most confident in.

pub mod analysis;
pub mod baseline;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod logits;
pub mod metrics;
pub mod objective;
pub mod rng;
pub mod stopwords;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
