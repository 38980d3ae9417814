//! Decentralized random reshuffling and its baselines.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the experiment layer uses.

pub mod checks;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod mixing;
pub mod objectives;
pub mod optim;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use graph::{build_graph, Graph, Topology};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Mixing = mixing::MixingMatrix<f64>;
pub type Dataset = data::LabeledDataset<f64>;
pub type Problem = objectives::FiniteSumProblem<f64>;
