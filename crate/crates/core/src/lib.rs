//! Semi-parametric degradation models for accelerated destructive degradation
//! test (ADDT) data.
//!
//! The baseline degradation path is a monotone decreasing B-spline in time and
//! temperature enters through an Arrhenius time-scale factor `exp(beta * s)`,
//! where `s` is the distance of a level's transformed stress from the hottest
//! tested level. The crate provides
//!
//! * data ingestion and Arrhenius stress transforms ([`dataset`]),
//! * B-spline bases, warped design matrices and knot defaults ([`bspline`]),
//! * closed-form compound-symmetric covariance algebra ([`covariance`]),
//! * the monotone GLS / approximate REML / profile likelihood estimator ([`fit`]),
//! * AIC-driven knot selection ([`knotsel`]),
//! * a residual bootstrap with quantile and bias-corrected intervals ([`bootstrap`]),
//! * path prediction and mean time to failure ([`reliability`]),
//! * Monte Carlo study engines ([`simulation`]).

pub mod bootstrap;
pub mod bspline;
pub mod covariance;
pub mod dataset;
mod error;
pub mod fit;
pub mod knotsel;
mod linalg;
mod stats;
pub mod optimize;
pub mod reliability;
pub mod simulation;

pub use bootstrap::{BootstrapOptions, BootstrapResult, Interval, ResidualDecomposition};
pub use bspline::{BaselineCoefficients, SplineSpec};
pub use covariance::ErrorStructure;
pub use dataset::{AddtDataset, Cell, Level, StressSet, DEFAULT_KELVIN_OFFSET};
pub use error::{Error, Result};
pub use fit::{FitControls, KnotPolicy, ModelFit};
pub use knotsel::{KnotSearchReport, SelectionControls};
pub use reliability::{MttfEstimate, Threshold};
pub use simulation::{SimulationScenario, StudyMetrics};
