//! Algorithm portfolio selection from performance and Shapley meta-representations.

pub mod aas;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod metarep;
pub mod pipeline;
pub mod portfolio;
pub mod simgraph;
pub mod store;
pub mod synth;
pub mod treeshap;
pub mod util;

pub use error::{Error, Result};
