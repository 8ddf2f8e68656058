#![no_std]
extern crate alloc;

mod activation;
pub mod autograd;
pub mod data;
pub mod error;
pub mod forecast;
pub mod masking;
pub mod metrics;
pub mod nn;
pub mod normalize;
pub mod optim;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
