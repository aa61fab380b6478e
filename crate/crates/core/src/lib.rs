//! Respondent-driven sampling (RDS) on networks.
//!
//! The crate models an RDS study as a Markov process indexed by a referral
//! tree: each recruit's state is drawn from its recruiter's row of the
//! random-walk transition matrix. On top of that it provides the estimator
//! family (sample mean, IPW, Volz-Heckathorn, GLS and the adjusted GLS
//! variants), spectral diagnostics of the chain, multitype branching-process
//! quantities, and distributional summaries of replicate estimates.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`, which is what the experiment harness
//! uses.

pub mod blockmodel;
pub mod branching;
pub mod error;
pub mod estimators;
pub mod graph;
pub mod sampler;
pub mod scalar;
pub mod spectral;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Real;

/// Matrix types used in the public API.
pub use nalgebra::{DMatrix, DVector};

pub type Graph = graph::WeightedGraph<f64>;
pub type Transition = graph::TransitionMatrix<f64>;
pub type Spectrum = spectral::SpectralDecomposition<f64>;
pub type BlockModel = blockmodel::BlockModel<f64>;
pub type Sample = sampler::RdsSample<f64>;
pub type Seed = sampler::SeedSpec<f64>;
pub type Estimate = estimators::EstimateRecord<f64>;
pub type Weights = estimators::GlsWeights<f64>;
pub type Degrees = estimators::PopulationDegrees<f64>;
