pub mod analysis;
pub mod artifact;
pub mod bench;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod metrics;
pub mod prompt;
pub mod pyast;
pub mod tokenize;
pub mod variants;

pub use error::{Error, Result};
