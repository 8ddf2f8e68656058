//! Files, evaluation and experiment orchestration around `mmmf-core`.

pub mod compare;
pub mod error;
pub mod evaluate;
pub mod harness;
pub mod ingest;
pub mod plot;
pub mod store;

pub use error::{Error, Result};
pub use mmmf_core as core;
