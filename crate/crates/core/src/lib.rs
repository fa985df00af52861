#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod deconvolution;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod mcmc;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod sequential;
pub mod special;
pub mod window;

pub use error::{Error, ErrorClass, Result};
