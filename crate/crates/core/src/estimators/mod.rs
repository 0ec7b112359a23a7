//! Rival beta estimators: exponentially weighted OLS, quantile regression
//! (MAD and trimean) and DCC / ADCC-GJR conditional beta.

mod dcc;
mod ols;
mod quantile;

pub use dcc::{
    dcc_beta, dcc_calibrate, dcc_log_likelihood, dcc_step, AsymmetrySide, DccCalibration, DccFit,
    DccModel, DccParams, DccState, GarchParams,
};
pub use ols::{ols_beta, ols_beta_through_origin};
pub use quantile::{mad_beta, quantile_beta, trimean_beta, trimean_combine, QuantileFit};

use crate::error::{Error, Result};
use crate::timeseries::exp_weights;

/// Paired returns with exponential weights `(1-λ)^(T-t)`, newest weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedRegressionProblem {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: f64,
    weights: Vec<f64>,
}

impl WeightedRegressionProblem {
    pub fn new(x: Vec<f64>, y: Vec<f64>, lambda: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "x and y lengths differ ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: x.len(),
            });
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Config(format!(
                "lambda must lie in (0, 1), got {lambda}"
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite return".into()));
        }
        let weights = exp_weights(x.len(), lambda);
        Ok(Self {
            x,
            y,
            lambda,
            weights,
        })
    }

    pub fn from_slices(x: &[f64], y: &[f64], lambda: f64) -> Result<Self> {
        Self::new(x.to_vec(), y.to_vec(), lambda)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// The six estimators compared in the simulation study.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ols,
    Mad,
    Trm,
    Dcc,
    Adcc,
    Reactive,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Ols,
        EstimatorKind::Mad,
        EstimatorKind::Trm,
        EstimatorKind::Dcc,
        EstimatorKind::Adcc,
        EstimatorKind::Reactive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ols => "ols",
            EstimatorKind::Mad => "mad",
            EstimatorKind::Trm => "trm",
            EstimatorKind::Dcc => "dcc",
            EstimatorKind::Adcc => "adcc",
            EstimatorKind::Reactive => "reactive",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown estimator '{s}'")))
    }
}
