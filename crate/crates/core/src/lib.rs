//! Topology-augmented graph classification of news propagation cascades.

pub mod ablation;
pub mod analysis;
pub mod checks;
pub mod graph;
pub mod io;
pub mod model;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod topo;
pub mod training;

pub use tensor::Tensor;
