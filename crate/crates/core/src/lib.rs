//! Synthetic doctor/patient dialogue benchmark for differential diagnosis agents.

pub mod agents;
pub mod bundled;
pub mod dialogue;
pub mod error;
pub mod harness;
mod lexicon;
pub mod metrics;
pub mod ontology;
pub mod protocol;
pub mod seed;
pub mod simulator;
pub mod templates;
pub mod text;

pub use error::{Error, Result};
