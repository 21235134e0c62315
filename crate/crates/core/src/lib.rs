//! Review ranking with LLM-style feature enrichment: a DLRM-style model over
//! dense aggregates, restaurant categories and reduced text/image embeddings,
//! trained with class-weighted cross-entropy and false-positive-rate early
//! stopping.

pub mod cli;
pub mod codec;
pub mod data;
pub mod error;
pub mod features;
pub mod lexicon;
pub mod nn;
pub mod pipeline;
pub mod providers;
pub mod ranker;
pub mod reducer;
pub mod report;
pub mod train;

pub use error::{Error, Result};
