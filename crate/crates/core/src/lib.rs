//! Continual relation extraction with contrastive demonstrations and a
//! two-part easy/hard replay memory.

pub mod analyst;
pub mod backend;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod evaluation;
pub mod instructions;
pub mod memory;
pub mod orchestrator;
pub mod retrieval;
pub mod seed;
pub mod splitter;

pub use error::{Error, Result};
