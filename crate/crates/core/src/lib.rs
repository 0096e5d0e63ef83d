//! Quantum measurement probabilities as complex Forney factor graphs.
//!
//! The crate is `no_std` and needs only `alloc`. It contains:
//!
//! - [`tensor`]: factor graphs with dense complex factors, box closing and
//!   external functions;
//! - [`model`]: measurement-sequence and hidden Markov models with their
//!   validity checks;
//! - [`mirror`]: compilation of models into conjugate-mirror graphs;
//! - [`inference`]: joint and conditional outcome distributions, density
//!   matrices and trajectory sampling, all by graph contraction;
//! - [`oracle`]: the same quantities from direct matrix arithmetic, used as
//!   an independent check;
//! - [`random`]: seeded generators for valid random models.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod distribution;
pub mod inference;
pub mod linalg;
pub mod mirror;
pub mod model;
pub mod oracle;
pub mod random;
pub mod tensor;

pub use num_complex::Complex64;

pub use inference::{
    conditional_distribution, conditional_given, density_after, density_before, joint_distribution,
    sample_trajectories, Conditional, DensityMatrix, InferenceError, InferenceOptions, OutcomeDistribution,
    Trajectory,
};
pub use linalg::Matrix;
pub use mirror::{build_hmm_graph, build_mirror_graph, Observation};
pub use model::{HmmKernel, HmmModel, InitialState, Measurement, QuantumModel, Stage, Tolerances, ValidationReport};
pub use tensor::{Factor, FactorGraph, FactorId, TensorError, VariableId};
