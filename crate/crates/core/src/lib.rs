//! Robust multiple rotation averaging over camera view-graphs.

pub mod autodiff;
pub mod baselines;
pub mod cleannet;
pub mod error;
pub mod finenet;
pub mod mpnn;
pub mod pipeline;
pub mod so3;
pub mod synthgen;
pub mod trainer;
pub mod tolerances;
pub mod viewgraph;

#[cfg(test)]
mod testutil;

pub use error::{Error, ErrorClass, Result};
pub use so3::UnitQuaternion;
pub use viewgraph::{Edge, ViewGraph};
