//! Rate analysis of a two-sided intelligent omni-surface (IOS) serving NOMA
//! users on both sides of the surface.
//!
//! The crate covers the full pipeline. It starts from the array geometry and
//! the spatial correlation of its channels. From there it provides
//! closed-form rate bounds and approximations, a Monte Carlo engine for the
//! exact ergodic rates, and config-driven sweeps that write CSV.

pub mod analytic;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod mc;
pub mod specfun;

pub use analytic::{BoundKind, Branch, LinkFactors, RateBound, RateScenario, SumRateVerdict};
pub use channel::{PhaseErrorModel, PowerCoefficients, SystemParams};
pub use error::{Error, Result};
pub use experiments::{ResultRow, SweepSpec};
pub use geometry::{ArrayGeometry, CorrelationMatrix, MagnitudeMomentMatrix};
pub use mc::{ErrorModels, McConfig, McEstimate, McSimulator};
