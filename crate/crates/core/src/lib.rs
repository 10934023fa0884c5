//! Noisy hybrid quantum neural networks: a density-matrix simulator with
//! Kraus noise channels, parameter-shift gradients, QuanNN/QCNN image
//! classifiers, and a seeded benchmark harness for noise sweeps.

pub mod checks;
pub mod circuit;
pub mod data;
pub mod error;
pub mod grad;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
