//! Learnable geometric scattering on graphs.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`, which every
//! verification tolerance in this crate assumes.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod filterbank;
pub mod graph;
pub mod heads;
pub mod legs;
pub mod scalar;
pub mod scattering;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default working precision.
pub type Real = f64;

pub type Graph = graph::Graph<Real>;
pub type GraphSignal = graph::GraphSignal<Real>;
pub type DiffusionOperator = graph::DiffusionOperator<Real>;
pub type FilterBank = filterbank::FilterBank<Real>;
pub type FeatureVector = scattering::FeatureVector<Real>;
pub type Tensor = autodiff::Tensor<Real>;
pub type Tape = autodiff::Tape<Real>;
pub type SelectionParams = legs::SelectionParams<Real>;
pub type DatasetBundle = data::DatasetBundle<Real>;
pub type Model = train::Model<Real>;
pub type TrainingData = train::TrainingData<Real>;
