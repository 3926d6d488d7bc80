//! Uplink channel estimation for RIS-assisted mmWave links.
//!
//! The crate synthesizes pilot observations for a base station array that
//! receives a user both directly (sparse NLoS scattering) and through a
//! reconfigurable intelligent surface, estimates both channels by sparse
//! recovery or by learned angle prediction, and benchmarks the estimators
//! with Monte Carlo NMSE sweeps.
//!
//! The numerical modules are generic over the real scalar (`f32`/`f64`);
//! the aliases below fix it to `f64`, which the neural and harness layers use.

pub mod channel;
pub mod codebook;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod harness;
pub mod neural;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::Real;

pub type CMatrix = numerics::ComplexMatrix<f64>;
pub type CMatrix32 = numerics::ComplexMatrix<f32>;
pub type Complex64 = num_complex::Complex<f64>;
pub type AoaGrid = geometry::AoaGrid<f64>;
pub type UlaConfig = geometry::UlaConfig<f64>;
pub type UpaConfig = geometry::UpaConfig<f64>;
pub type Codebook = codebook::Codebook<f64>;
pub use channel::ScenarioConfig;
pub type ChannelRealization = channel::ChannelRealization<f64>;
pub type GroundTruth = channel::GroundTruth<f64>;
pub type Scenario = channel::Scenario<f64>;
pub type EstimationResult = estimators::EstimationResult<f64>;
