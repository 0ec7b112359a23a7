//! Measurement statistics: estimator error tables, strategy hedge quality,
//! the closed-form selection bias of low-beta portfolios, the leverage
//! calibration regression and the beta-elasticity diagnostic.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf_inv;

use crate::error::{invalid, Error, Result};
use crate::timeseries::{mean, pearson, rolling_correlation, sample_variance};

/// Trading days in the "last month" used to split winners from losers.
pub const WINNER_WINDOW: usize = 21;

/// Rolling window for the correlation-stability statistic.
pub const CORSTD_WINDOW: usize = 90;

/// One path's estimate compared with the true beta at the final date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub estimated_beta: f64,
    pub true_beta: f64,
    pub winner: bool,
    pub low: bool,
}

impl ErrorSample {
    pub fn new(estimated_beta: f64, true_beta: f64, winner: bool) -> Result<Self> {
        if !(estimated_beta.is_finite() && true_beta.is_finite()) {
            return Err(invalid("estimated and true beta must be finite"));
        }
        Ok(Self {
            estimated_beta,
            true_beta,
            winner,
            low: true_beta < 1.0,
        })
    }

    pub fn error(&self) -> f64 {
        self.estimated_beta - self.true_beta
    }
}

/// Cumulative stock return minus cumulative index return over the trailing
/// `window` observations. `None` when there is not enough history.
pub fn trailing_outperformance(stock: &[f64], index: &[f64], window: usize) -> Option<f64> {
    let n = stock.len();
    if n != index.len() || n < window || window == 0 {
        return None;
    }
    let grow = |r: &[f64]| r.iter().fold(1.0, |acc, v| acc * (1.0 + v));
    Some(grow(&stock[n - window..]) - grow(&index[n - window..]))
}

/// Mean of a subset together with its standard error and a significance
/// flag (|mean| above three standard errors).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub significant: bool,
}

impl BiasCell {
    fn from_errors(errors: &[f64]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let value = mean(errors);
        let stderr = if errors.len() > 1 {
            (sample_variance(errors) / errors.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        let significant = stderr.is_finite() && value.abs() > 3.0 * stderr;
        Some(Self {
            value,
            stderr,
            n: errors.len(),
            significant,
        })
    }
}

/// One row of the estimator comparison table. Empty subsets leave their
/// cell as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub n: usize,
    pub bias: BiasCell,
    pub winner_bias: Option<BiasCell>,
    pub loser_bias: Option<BiasCell>,
    pub low_bias: Option<BiasCell>,
    pub high_bias: Option<BiasCell>,
    pub absd: f64,
    pub error_variance: f64,
    pub variance_ratio: Option<f64>,
}

/// Aggregate per-path errors. `reference_variance` is the error variance of
/// the benchmark estimator; the ratio is undefined when this row's error
/// variance is zero.
pub fn table2_stats(samples: &[ErrorSample], reference_variance: f64) -> Result<StatRow> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let errors: Vec<f64> = samples.iter().map(ErrorSample::error).collect();
    let pick = |keep: &dyn Fn(&ErrorSample) -> bool| -> Vec<f64> {
        samples
            .iter()
            .filter(|s| keep(s))
            .map(ErrorSample::error)
            .collect()
    };
    let error_variance = if errors.len() > 1 {
        sample_variance(&errors)
    } else {
        0.0
    };
    Ok(StatRow {
        n: samples.len(),
        bias: BiasCell::from_errors(&errors).expect("nonempty"),
        winner_bias: BiasCell::from_errors(&pick(&|s| s.winner)),
        loser_bias: BiasCell::from_errors(&pick(&|s| !s.winner)),
        low_bias: BiasCell::from_errors(&pick(&|s| s.low)),
        high_bias: BiasCell::from_errors(&pick(&|s| !s.low)),
        absd: mean(&errors.iter().map(|e| e.abs()).collect::<Vec<_>>()),
        error_variance,
        variance_ratio: (error_variance > 0.0).then(|| reference_variance / error_variance),
    })
}

/// Full-sample correlation with the index and the dispersion of its
/// 90-day rolling counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeQuality {
    pub bias: Option<f64>,
    pub corstd: Option<f64>,
    pub undefined_windows: usize,
}

pub fn strategy_bias_corstd(strategy: &[f64], index: &[f64]) -> Result<HedgeQuality> {
    if strategy.len() != index.len() {
        return Err(invalid(format!(
            "strategy and index lengths differ ({} vs {})",
            strategy.len(),
            index.len()
        )));
    }
    if strategy.len() <= CORSTD_WINDOW {
        return Err(Error::InsufficientData {
            needed: CORSTD_WINDOW + 1,
            got: strategy.len(),
        });
    }
    let rolling = rolling_correlation(strategy, index, CORSTD_WINDOW)?;
    let defined: Vec<f64> = rolling.defined().collect();
    Ok(HedgeQuality {
        bias: pearson(strategy, index),
        corstd: (defined.len() > 1).then(|| sample_variance(&defined).sqrt()),
        undefined_windows: rolling.undefined_count(),
    })
}

/// Cross-sectional inputs of the low-beta selection bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionBiasInputs {
    pub sigma_beta: f64,
    /// Measurement-error std; derived from `vol_ratio` and `lambda_beta`
    /// when absent.
    #[serde(default)]
    pub sigma_eta: Option<f64>,
    pub p: f64,
    pub sigma_index: f64,
    pub vol_ratio: f64,
    pub lambda_beta: f64,
    pub factor_vol: f64,
}

impl Default for SelectionBiasInputs {
    /// US large-cap values: σ_β = 0.43, σ_I = 19.77%, ⟨σ_i⟩/σ_I = 1.53,
    /// λ_β = 1/90, factor vol 3.46%, bottom 30%.
    fn default() -> Self {
        Self {
            sigma_beta: 0.43,
            sigma_eta: None,
            p: 0.3,
            sigma_index: 0.1977,
            vol_ratio: 1.53,
            lambda_beta: 1.0 / 90.0,
            factor_vol: 0.0346,
        }
    }
}

impl SelectionBiasInputs {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_beta", self.sigma_beta),
            ("sigma_index", self.sigma_index),
            ("vol_ratio", self.vol_ratio),
            ("lambda_beta", self.lambda_beta),
            ("factor_vol", self.factor_vol),
            ("sigma_eta", self.sigma_eta.unwrap_or(1.0)),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.p > 0.0 && self.p < 0.5) {
            return Err(Error::Config(format!(
                "quantile p must lie in (0, 0.5), got {}",
                self.p
            )));
        }
        Ok(())
    }

    pub fn sigma_eta(&self) -> f64 {
        self.sigma_eta
            .unwrap_or(self.vol_ratio * self.lambda_beta.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionBias {
    pub sigma_eta: f64,
    pub q: f64,
    /// Quantile threshold of measured beta relative to its mean.
    pub threshold: f64,
    /// Mean underestimation of true beta in the bottom quantile.
    pub b: f64,
    pub beta_low_factor: f64,
    pub rho_low_factor: f64,
}

pub fn selection_bias(inputs: &SelectionBiasInputs) -> Result<SelectionBias> {
    inputs.validate()?;
    let sigma_eta = inputs.sigma_eta();
    let sb = inputs.sigma_beta;
    let q = erf_inv(2.0 * inputs.p - 1.0);
    let b = sigma_eta
        / (inputs.p * (2.0 * std::f64::consts::PI).sqrt())
        / (1.0 + (sb / sigma_eta).powi(2)).sqrt()
        * (-q * q / (1.0 + (sigma_eta / sb).powi(2))).exp();
    let beta_low_factor = -0.5 * b;
    Ok(SelectionBias {
        sigma_eta,
        q,
        threshold: std::f64::consts::SQRT_2 * sb * q,
        b,
        beta_low_factor,
        rho_low_factor: beta_low_factor.abs() * inputs.sigma_index / inputs.factor_vol,
    })
}

/// Slope of daily normalized correlation changes on leverage-factor changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllCalibration {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub tstat: f64,
    pub r2: f64,
    pub n: usize,
}

impl EllCalibration {
    /// The implied `ℓ - ℓ'`, half the slope.
    pub fn ell_diff(&self) -> f64 {
        self.slope / 2.0
    }
}

pub const MIN_CALIBRATION_LEN: usize = 30;

/// `(L_f - I) / L_f` along an index price path, with the fast level seeded
/// at the first price.
pub fn leverage_factor(index: &[f64], lambda_f: f64) -> Result<Vec<f64>> {
    if !(lambda_f > 0.0 && lambda_f <= 1.0) {
        return Err(Error::Domain(format!(
            "lambda_f must lie in (0, 1], got {lambda_f}"
        )));
    }
    let mut fast = match index.first() {
        Some(&p) => p,
        None => return Err(Error::InsufficientData { needed: 1, got: 0 }),
    };
    index
        .iter()
        .map(|&p| {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Domain(format!(
                    "index price must be positive, got {p}"
                )));
            }
            fast += lambda_f * (p - fast);
            Ok((fast - p) / fast)
        })
        .collect()
}

/// Regress day-on-day changes of `correlation / mean(correlation)` on
/// day-on-day changes of `(L_f - I) / L_f`.
pub fn calibrate_ell_diff(correlation: &[f64], leverage_factor: &[f64]) -> Result<EllCalibration> {
    if correlation.len() != leverage_factor.len() {
        return Err(invalid(format!(
            "correlation and leverage series differ in length ({} vs {})",
            correlation.len(),
            leverage_factor.len()
        )));
    }
    if correlation.len() < MIN_CALIBRATION_LEN {
        return Err(Error::InsufficientData {
            needed: MIN_CALIBRATION_LEN,
            got: correlation.len(),
        });
    }
    if correlation
        .iter()
        .chain(leverage_factor)
        .any(|v| !v.is_finite())
    {
        return Err(invalid("non-finite value in calibration input"));
    }
    let rho_mean = mean(correlation);
    if rho_mean == 0.0 {
        return Err(Error::Domain("correlation series has zero mean".into()));
    }
    let dy: Vec<f64> = correlation
        .windows(2)
        .map(|w| (w[1] - w[0]) / rho_mean)
        .collect();
    let dx: Vec<f64> = leverage_factor.windows(2).map(|w| w[1] - w[0]).collect();
    let fit = simple_regression(&dx, &dy)
        .ok_or_else(|| Error::Domain("leverage factor has no variation".into()))?;
    Ok(EllCalibration {
        slope: fit.slope,
        intercept: fit.intercept,
        stderr: fit.stderr,
        tstat: fit.slope / fit.stderr,
        r2: fit.r2,
        n: dx.len(),
    })
}

struct LineFit {
    slope: f64,
    intercept: f64,
    stderr: f64,
    r2: f64,
}

/// Ordinary least squares of `y` on `x` with intercept; `None` when `x` is
/// constant.
fn simple_regression(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    let ssr = (syy - slope * sxy).max(0.0);
    let stderr = if n > 2.0 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    let r2 = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        stderr,
        r2,
    })
}

/// Per-stock time series of measured beta and relative volatility
/// `σ̂_i / σ̂_I`, aligned element by element.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ElasticityPanel {
    pub betas: Vec<Vec<f64>>,
    pub rel_vols: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticityBucket {
    pub mean_beta: f64,
    pub slope: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityDiagnostic {
    pub buckets: Vec<ElasticityBucket>,
    pub skipped: usize,
    /// Slope of demeaned beta on demeaned `ln(σ̂_i/σ̂_I)`; twice the
    /// average elasticity.
    pub global_slope: Option<f64>,
}

/// A single demeaned observation: raw beta, beta deviation and the
/// deviation of the doubled log relative volatility.
struct ElasticityPoint {
    beta: f64,
    dbeta: f64,
    dlog: f64,
}

/// Local elasticity estimates: every observation is demeaned against its
/// own stock's time averages, observations are sorted by beta and split
/// into consecutive buckets, and each bucket's slope of beta deviation on
/// `2 ln(σ̂_i/σ̂_I)` deviation is its elasticity. A trailing partial bucket
/// is merged into the last full one.
pub fn elasticity_diagnostic(
    panel: &ElasticityPanel,
    bucket_size: usize,
) -> Result<ElasticityDiagnostic> {
    if panel.betas.len() != panel.rel_vols.len() {
        return Err(invalid(
            "beta and relative-volatility panels have different stock counts",
        ));
    }
    if bucket_size < 3 {
        return Err(invalid("bucket size must be at least 3"));
    }
    let mut points = Vec::new();
    for (i, (b, v)) in panel.betas.iter().zip(&panel.rel_vols).enumerate() {
        if b.len() != v.len() {
            return Err(invalid(format!(
                "stock {i}: beta and relative-volatility lengths differ"
            )));
        }
        if b.is_empty() {
            continue;
        }
        if b.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(invalid(format!(
                "stock {i}: betas must be finite and volatilities positive"
            )));
        }
        let (mb, lmv) = (mean(b), 2.0 * mean(v).ln());
        points.extend(b.iter().zip(v).map(|(&beta, &rv)| ElasticityPoint {
            beta,
            dbeta: beta - mb,
            dlog: 2.0 * rv.ln() - lmv,
        }));
    }
    if points.len() < bucket_size {
        return Err(Error::InsufficientData {
            needed: bucket_size,
            got: points.len(),
        });
    }
    points.sort_by(|a, b| a.beta.total_cmp(&b.beta));

    let n_buckets = points.len() / bucket_size;
    let mut buckets = Vec::with_capacity(n_buckets);
    let mut skipped = 0;
    for k in 0..n_buckets {
        let end = if k + 1 == n_buckets {
            points.len()
        } else {
            (k + 1) * bucket_size
        };
        let chunk = &points[k * bucket_size..end];
        let x: Vec<f64> = chunk.iter().map(|p| p.dlog).collect();
        let y: Vec<f64> = chunk.iter().map(|p| p.dbeta).collect();
        match simple_regression(&x, &y) {
            Some(fit) => buckets.push(ElasticityBucket {
                mean_beta: mean(&chunk.iter().map(|p| p.beta).collect::<Vec<_>>()),
                slope: fit.slope,
                n: chunk.len(),
            }),
            None => skipped += 1,
        }
    }
    let x: Vec<f64> = points.iter().map(|p| p.dlog / 2.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.dbeta).collect();
    Ok(ElasticityDiagnostic {
        buckets,
        skipped,
        global_slope: simple_regression(&x, &y).map(|f| f.slope),
    })
}

/// Pooled slope of normalized daily stock-volatility changes on normalized
/// daily index-volatility changes.
pub fn vol_response_slope(stock_vols: &[Vec<f64>], index_vol: &[f64]) -> Result<Option<f64>> {
    let rel = |w: &[f64]| (w[1] - w[0]) / w[0];
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, s) in stock_vols.iter().enumerate() {
        if s.len() != index_vol.len() {
            return Err(invalid(format!(
                "stock {i}: volatility length differs from the index"
            )));
        }
        if s.iter()
            .chain(index_vol)
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(invalid("volatilities must be positive and finite"));
        }
        y.extend(s.windows(2).map(rel));
        x.extend(index_vol.windows(2).map(rel));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: x.len(),
        });
    }
    Ok(simple_regression(&x, &y).map(|f| f.slope))
}
