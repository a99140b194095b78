//! Fuse a small randomized experiment with a large observational sample to
//! estimate a linear causal effect with lower variance.
//!
//! The observational sample identifies `b_IV = β₁ + b₂/γ` by (incorrectly)
//! treating a first-stage covariate `Z` as an instrument; the experiment
//! identifies the exclusion violation `b₂`. Weighting, penalized regression
//! and GMM each combine the two sources.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which is what the CLI and simulations use.

pub mod cli;
pub mod data;
pub mod efficiency;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod normal;
pub mod probit;
pub mod robustness;
pub mod scalar;
pub mod simulation;

pub use data::{load_csv, read_csv, split, write_csv, Block, EstimateReport, FusedDataset, Group, Method, UnitRecord};
pub use error::{FusionError, Result};
pub use estimators::{gmm_combine, Estimator, EstimatorConfig, Lambda, ObsContext, Weighting};
pub use scalar::Scalar;

pub type Dataset = FusedDataset<f64>;
pub type Report = EstimateReport<f64>;
pub type DataBlock = Block<f64>;
pub type Config = EstimatorConfig<f64>;
pub type Profile = efficiency::MomentProfile<f64>;
pub type SimConfig = simulation::SimulationConfig<f64>;
