//! Reconstruction of discrete- and continuous-time Markov chains, and mixtures of
//! them, from hitting-time matrices.
//!
//! Hitting times are an explicit function of the Moore–Penrose pseudoinverse of
//! the generalized Laplacian (`L = I - M` for a stochastic matrix, `L = -K` for a
//! rate matrix) and the stationary distribution, which makes analytic gradients
//! of the squared hitting-time loss available ([`gradients`]). [`learn`] runs
//! projected ADAM on top of them, and [`mixture`] runs the EM procedure that
//! unmixes trails drawn from several chains.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, threading and the
//! command-line tool live in the `htmc` crate.
#![no_std]

extern crate alloc;

pub mod chains;
pub mod error;
pub mod gradients;
pub mod hitting;
pub mod learn;
pub mod linalg;
pub mod metrics;
pub mod mixture;
pub mod simulate;

pub use nalgebra;

pub use chains::{
    Chain, GeneralizedLaplacian, GraphKind, LaplacianPseudoinverse, MixtureModel, Mode,
    StationaryDistribution,
};
pub use error::{Error, Result};
pub use hitting::{HittingTimeAccumulator, HittingTimeEstimate, HittingTimes, NoiseModel};
pub use learn::{Descent, Init, LearnConfig, LearnReport};
pub use metrics::EvalReport;
pub use mixture::{MixtureConfig, MixtureFit, SoftAssignment};
pub use simulate::{Trail, TrailExtent};

/// Dense row-major-agnostic matrix type used across the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
