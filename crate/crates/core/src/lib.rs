#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cavi;
pub mod divergence;
pub mod error;
pub mod hybrid;
pub mod mcmc;
pub mod models;
pub mod rng;
pub mod stochastic;

pub use error::{Error, Result};
pub use rng::RngSeed;
