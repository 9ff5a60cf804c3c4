//! Domain-knowledge mining and knowledge-aware coreference classification
//! for opinionated product reviews.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod general_kb;
pub mod kb_mining;
pub mod knowledge;
pub mod nn;
pub mod scoring;
pub mod span_repr;
pub mod synthetic;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
