//! Spam equilibrium engine for blockchains whose spam transactions compete
//! for a single MEV opportunity created by user activity.
//!
//! Core routines are generic over [`Scalar`] (`f32` or `f64`); the `*64` and
//! `*32` aliases below fix the precision.

pub mod demand;
pub mod design_rules;
pub mod equilibrium;
pub mod error;
pub mod mc_oracle;
pub mod metrics;
pub mod numeric;
pub mod pfo;
pub mod scalar;
pub mod scaling;

pub use demand::DemandCurve;
pub use equilibrium::{Counterfactual, Equilibrium, MarketParams, Regime};
pub use error::{ModelError, Result};
pub use metrics::{CostParams, MetricsReport};
pub use numeric::SolverConfig;
pub use pfo::{PfoEquilibrium, PfoParams, PfoSubBlock};
pub use scalar::Scalar;
pub use scaling::{OpportunityConvention, ScalingPoint, ScalingRule};

pub type DemandCurve64 = DemandCurve<f64>;
pub type MarketParams64 = MarketParams<f64>;
pub type Equilibrium64 = Equilibrium<f64>;
pub type CostParams64 = CostParams<f64>;
pub type MetricsReport64 = MetricsReport<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type PfoParams64 = PfoParams<f64>;
pub type PfoEquilibrium64 = PfoEquilibrium<f64>;

pub type DemandCurve32 = DemandCurve<f32>;
pub type MarketParams32 = MarketParams<f32>;
pub type Equilibrium32 = Equilibrium<f32>;
pub type CostParams32 = CostParams<f32>;
pub type MetricsReport32 = MetricsReport<f32>;
pub type SolverConfig32 = SolverConfig<f32>;
pub type PfoParams32 = PfoParams<f32>;
pub type PfoEquilibrium32 = PfoEquilibrium<f32>;
