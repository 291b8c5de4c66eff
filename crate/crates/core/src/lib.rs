pub mod annotator;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod metrics;
pub mod policy;
pub mod reward;
pub mod rl;
pub mod textcore;

pub use error::{Error, Result};
