#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod bundle;
pub mod cmaes;
pub mod config;
pub mod episode;
pub mod error;
pub mod estimator;
pub mod export;
pub mod gait;
pub mod geometry;
pub mod nn;
pub mod observation;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod sac;
pub mod sim;
pub mod telemetry;

pub use error::{Error, Result};
