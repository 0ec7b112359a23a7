//! Streaming and batch primitives shared by every estimator: exponential
//! moving averages, arithmetic returns, trailing Pearson correlation and
//! exponentially weighted moments.

use crate::error::{invalid, Error, Result};
use crate::Real;

/// A labelled daily series. Values are finite and the series is non-empty;
/// the time index is implicit in the position.
#[derive(Debug, Clone, PartialEq)]
pub struct Series<F = f64> {
    pub label: String,
    values: Vec<F>,
}

impl<F: Real> Series<F> {
    pub fn new(label: impl Into<String>, values: Vec<F>) -> Result<Self> {
        let label = label.into();
        if values.is_empty() {
            return Err(invalid(format!("series '{label}' is empty")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "series '{label}' has a non-finite value at position {pos}"
            )));
        }
        Ok(Self { label, values })
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<F> {
        self.values
    }
}

/// Exponential moving average `v' = (1 - λ) v + λ x`, seeded with the first
/// observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaState<F = f64> {
    lambda: F,
    value: F,
    initialized: bool,
}

impl<F: Real> EmaState<F> {
    pub fn new(lambda: F) -> Result<Self> {
        if !(lambda > F::zero() && lambda <= F::one()) {
            return Err(Error::Config(format!(
                "EMA weight must lie in (0, 1], got {lambda:?}"
            )));
        }
        Ok(Self {
            lambda,
            value: F::zero(),
            initialized: false,
        })
    }

    /// An EMA already holding `value`.
    pub fn seeded(lambda: F, value: F) -> Result<Self> {
        let mut ema = Self::new(lambda)?;
        ema.update(value)?;
        Ok(ema)
    }

    pub fn update(&mut self, x: F) -> Result<F> {
        if !x.is_finite() {
            return Err(invalid(format!("EMA input must be finite, got {x:?}")));
        }
        self.value = if self.initialized {
            (F::one() - self.lambda) * self.value + self.lambda * x
        } else {
            x
        };
        self.initialized = true;
        Ok(self.value)
    }

    /// Value-returning form of [`EmaState::update`].
    pub fn updated(mut self, x: F) -> Result<Self> {
        self.update(x)?;
        Ok(self)
    }

    pub fn lambda(&self) -> F {
        self.lambda
    }

    /// Current level, `None` before the first observation.
    pub fn value(&self) -> Option<F> {
        self.initialized.then_some(self.value)
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }
}

/// `r(t) = (P(t) - P(t-1)) / P(t-1)`.
pub fn arithmetic_returns<F: Real>(prices: &Series<F>) -> Result<Series<F>> {
    let p = prices.values();
    if p.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: p.len(),
        });
    }
    if let Some(pos) = p.iter().position(|&v| v <= F::zero()) {
        return Err(Error::Domain(format!(
            "price at position {pos} of '{}' is not positive",
            prices.label
        )));
    }
    let returns = p.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect();
    Series::new(format!("{}_returns", prices.label), returns)
}

/// Trailing-window Pearson correlations. Windows where either side has zero
/// variance are `None` rather than NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingCorrelation<F = f64> {
    pub window: usize,
    pub values: Vec<Option<F>>,
}

impl<F: Real> RollingCorrelation<F> {
    pub fn defined(&self) -> impl Iterator<Item = F> + '_ {
        self.values.iter().filter_map(|v| *v)
    }

    pub fn undefined_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

pub fn rolling_correlation<F: Real>(
    x: &[F],
    y: &[F],
    window: usize,
) -> Result<RollingCorrelation<F>> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "correlation inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if window < 2 {
        return Err(invalid("correlation window must be at least 2"));
    }
    if x.len() < window {
        return Err(Error::InsufficientData {
            needed: window,
            got: x.len(),
        });
    }
    let values = x
        .windows(window)
        .zip(y.windows(window))
        .map(|(wx, wy)| pearson(wx, wy))
        .collect();
    Ok(RollingCorrelation { window, values })
}

/// Two-pass Pearson correlation, clamped to [-1, 1]; `None` on zero variance.
pub fn pearson<F: Real>(x: &[F], y: &[F]) -> Option<F> {
    let n = F::from_usize(x.len())?;
    let mx = x.iter().fold(F::zero(), |a, &v| a + v) / n;
    let my = y.iter().fold(F::zero(), |a, &v| a + v) / n;
    let (mut sxx, mut syy, mut sxy) = (F::zero(), F::zero(), F::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
        sxy = sxy + dx * dy;
    }
    if sxx <= F::zero() || syy <= F::zero() {
        return None;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Some(r.max(-F::one()).min(F::one()))
}

/// Moments under weights proportional to `(1 - λ)^(T - t)`, normalized to
/// sum to one. Variances and covariance are population (weighted) moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMoments<F = f64> {
    pub mean_x: F,
    pub mean_y: F,
    pub var_x: F,
    pub var_y: F,
    pub cov: F,
}

pub fn exp_weights<F: Real>(len: usize, lambda: F) -> Vec<F> {
    let decay = F::one() - lambda;
    let mut w = vec![F::zero(); len];
    let mut cur = F::one();
    for slot in w.iter_mut().rev() {
        *slot = cur;
        cur = cur * decay;
    }
    w
}

pub fn exp_weighted_moments<F: Real>(x: &[F], y: &[F], lambda: F) -> Result<WeightedMoments<F>> {
    if x.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if x.len() != y.len() {
        return Err(invalid("weighted moment inputs differ in length"));
    }
    if !(lambda > F::zero() && lambda < F::one()) {
        return Err(Error::Config(format!(
            "moment decay must lie in (0, 1), got {lambda:?}"
        )));
    }
    let w = exp_weights(x.len(), lambda);
    let total = w.iter().fold(F::zero(), |a, &v| a + v);
    let wmean = |s: &[F]| s.iter().zip(&w).fold(F::zero(), |a, (&v, &wt)| a + wt * v) / total;
    let mean_x = wmean(x);
    let mean_y = wmean(y);
    let wcov = |a: &[F], ma: F, b: &[F], mb: F| {
        a.iter()
            .zip(b)
            .zip(&w)
            .fold(F::zero(), |acc, ((&u, &v), &wt)| {
                acc + wt * (u - ma) * (v - mb)
            })
            / total
    };
    Ok(WeightedMoments {
        mean_x,
        mean_y,
        var_x: wcov(x, mean_x, x, mean_x),
        var_y: wcov(y, mean_y, y, mean_y),
        cov: wcov(x, mean_x, y, mean_y),
    })
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
