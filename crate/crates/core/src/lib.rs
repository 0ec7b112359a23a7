//! Reactive beta estimation with leverage effect.
//!
//! The crate is organized around the streaming reactive model
//! ([`volatility`] and [`beta`]), a set of rival estimators
//! ([`estimators`]), seven Monte Carlo market models ([`montecarlo`]),
//! measurement statistics ([`evaluation`]) and beta-neutral factor
//! construction ([`strategies`]). [`experiment`] wires those together into
//! simulation studies and [`io`] holds configuration, ingestion and report
//! formats used by the command-line tool.
//!
//! The streaming state machines are generic over the floating-point type;
//! the aliases below pin the common instantiations.

pub mod beta;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod montecarlo;
pub mod strategies;
pub mod timeseries;
pub mod volatility;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use error::{Error, Result};
pub use volatility::ReactiveParams;

/// Floating-point scalar accepted by the streaming recursions.
pub trait Real: Float + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static {
    /// Lossless for `f64`, rounding for `f32`.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Series = timeseries::Series<f64>;
pub type EmaState = timeseries::EmaState<f64>;
pub type LevelState = volatility::LevelState<f64>;
pub type VolState = volatility::VolState<f64>;
pub type ReactiveVolatility = volatility::ReactiveVolatility<f64>;
pub type BetaState = beta::BetaState<f64>;
pub type ReactiveModel = beta::ReactiveModel<f64>;
pub type ReactiveModel32 = beta::ReactiveModel<f32>;
