//! Beta-neutral long/short factors for four classic strategies and a daily
//! backtest that hedges them with either OLS or reactive betas.
//!
//! Factors are built per supersector: stocks are ranked on an indicator
//! known the day before, the top and bottom quantiles get inverse-volatility
//! weights, and one leg is scaled down so the supersector's beta exposure
//! is zero. Supersectors are then averaged.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::beta::ReactiveModel;
use crate::error::{invalid, Error, Result};
use crate::evaluation::{strategy_bias_corstd, HedgeQuality};
use crate::timeseries::EmaState;
use crate::volatility::{Coeffs, IndexLevels, ReactiveParams, StockLevels, DEFAULT_BURN_IN};

pub const SUPERSECTORS: usize = 6;
pub const REVERSAL_WINDOW: usize = 21;
pub const MOMENTUM_WINDOW: usize = 504;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stock {
    pub ticker: String,
    pub prices: Vec<Option<f64>>,
    /// Market capitalization; only the size strategy needs it.
    #[serde(default)]
    pub caps: Option<Vec<Option<f64>>>,
    pub supersector: usize,
}

/// Aligned daily panel of stocks and their index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    pub dates: Vec<String>,
    pub index: Vec<f64>,
    pub stocks: Vec<Stock>,
}

impl Universe {
    pub fn new(dates: Vec<String>, index: Vec<f64>, stocks: Vec<Stock>) -> Result<Self> {
        let u = Self {
            dates,
            index,
            stocks,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.index.len();
        if self.dates.len() != n {
            return Err(invalid(format!(
                "{} dates for {n} index prices",
                self.dates.len()
            )));
        }
        if let Some(p) = self.index.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Domain(format!(
                "index price must be positive, got {p}"
            )));
        }
        for s in &self.stocks {
            if s.prices.len() != n {
                return Err(invalid(format!(
                    "{}: {} prices for {n} dates",
                    s.ticker,
                    s.prices.len()
                )));
            }
            if let Some(p) = s
                .prices
                .iter()
                .flatten()
                .find(|p| !(p.is_finite() && **p > 0.0))
            {
                return Err(Error::Domain(format!(
                    "{}: price must be positive, got {p}",
                    s.ticker
                )));
            }
            if s.caps.as_ref().is_some_and(|c| c.len() != n) {
                return Err(invalid(format!(
                    "{}: capitalization length differs from prices",
                    s.ticker
                )));
            }
            if s.supersector >= SUPERSECTORS {
                return Err(invalid(format!(
                    "{}: supersector {} out of range 0..{SUPERSECTORS}",
                    s.ticker, s.supersector
                )));
            }
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.index.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    fn prices_on(&self, day: usize) -> Vec<Option<f64>> {
        self.stocks.iter().map(|s| s.prices[day]).collect()
    }

    /// Reassign supersectors by dealing stocks in order of capitalization on
    /// `day` into six groups, largest first. Groups end up with equal sizes
    /// (within one) and similar capitalization profiles.
    pub fn assign_supersectors_by_cap(&mut self, day: usize) -> Result<()> {
        let mut order: Vec<(usize, f64)> = Vec::with_capacity(self.stocks.len());
        for (i, s) in self.stocks.iter().enumerate() {
            let cap = s
                .caps
                .as_ref()
                .and_then(|c| c.get(day).copied().flatten())
                .ok_or_else(|| {
                    Error::Config(format!("{}: no capitalization on day {day}", s.ticker))
                })?;
            order.push((i, cap));
        }
        order.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.stocks[a.0].ticker.cmp(&self.stocks[b.0].ticker))
        });
        for (rank, (i, _)) in order.into_iter().enumerate() {
            self.stocks[i].supersector = rank % SUPERSECTORS;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    LowVolatility,
    Reversal,
    Momentum,
    Size,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::LowVolatility,
        StrategyKind::Reversal,
        StrategyKind::Momentum,
        StrategyKind::Size,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::LowVolatility => "low-volatility",
            StrategyKind::Reversal => "reversal",
            StrategyKind::Momentum => "momentum",
            StrategyKind::Size => "size",
        }
    }

    /// Fraction of each supersector held in each leg.
    pub fn default_quantile(self) -> f64 {
        match self {
            StrategyKind::Reversal | StrategyKind::Momentum => 0.15,
            StrategyKind::LowVolatility | StrategyKind::Size => 0.3,
        }
    }

    /// Price days needed before the indicator is defined.
    fn history(self) -> usize {
        match self {
            StrategyKind::Reversal => REVERSAL_WINDOW,
            StrategyKind::Momentum => MOMENTUM_WINDOW,
            StrategyKind::LowVolatility | StrategyKind::Size => 0,
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaSource {
    Ols,
    Reactive,
}

impl BetaSource {
    pub const ALL: [BetaSource; 2] = [BetaSource::Ols, BetaSource::Reactive];

    pub fn name(self) -> &'static str {
        match self {
            BetaSource::Ols => "ols",
            BetaSource::Reactive => "reactive",
        }
    }
}

impl std::fmt::Display for BetaSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BetaSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown beta source '{s}'")))
    }
}

/// Ranking value of each stock for `strategy` on `day`, using prices up to
/// `day - 1` only. Higher values go to the long leg. `ols_betas` are the
/// selection betas known at the close of `day - 1`.
pub fn indicator(
    strategy: StrategyKind,
    universe: &Universe,
    day: usize,
    ols_betas: &[Option<f64>],
    long_high_beta: bool,
) -> Vec<Option<f64>> {
    let trailing = |s: &Stock, window: usize| -> Option<f64> {
        if day < window + 1 {
            return None;
        }
        let last = s.prices[day - 1]?;
        let first = s.prices[day - 1 - window]?;
        Some(last / first - 1.0)
    };
    universe
        .stocks
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if day == 0 || s.prices[day - 1].is_none() {
                return None;
            }
            match strategy {
                StrategyKind::LowVolatility => {
                    ols_betas[i].map(|b| if long_high_beta { b } else { -b })
                }
                StrategyKind::Reversal => trailing(s, REVERSAL_WINDOW).map(|r| -r),
                StrategyKind::Momentum => trailing(s, MOMENTUM_WINDOW),
                StrategyKind::Size => s.caps.as_ref().and_then(|c| c[day - 1]),
            }
        })
        .collect()
}

/// One day's cross-section of everything the factor construction needs.
/// Stocks with any field missing are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorInputs<'a> {
    pub tickers: Vec<&'a str>,
    pub supersectors: Vec<usize>,
    pub indicator: Vec<Option<f64>>,
    pub beta: Vec<Option<f64>>,
    pub vol: Vec<Option<f64>>,
}

/// Leg multipliers of one supersector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorLegs {
    pub supersector: usize,
    pub eligible: usize,
    pub leg_size: usize,
    pub mu_plus: f64,
    pub mu_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorWeights {
    /// Day on whose return the weights are held.
    pub day: usize,
    pub p: f64,
    pub weights: Vec<f64>,
    pub legs: Vec<SectorLegs>,
}

impl FactorWeights {
    pub fn gross(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    pub fn beta_exposure(&self, betas: &[Option<f64>]) -> f64 {
        self.weights
            .iter()
            .zip(betas)
            .map(|(w, b)| w * b.unwrap_or(0.0))
            .sum()
    }
}

/// Why a factor could not be built on a given day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    Warmup,
    NoEligibleSector,
    NonPositiveLegBeta,
}

/// Number of stocks per leg: `p·n` rounded, at least one, at most half.
pub fn leg_size(p: f64, n: usize) -> usize {
    ((p * n as f64).round() as usize).max(1).min(n / 2)
}

/// Build the beta-neutral factor for one day. Supersectors with fewer than
/// two eligible stocks are left out; the remaining ones share the gross
/// exposure equally.
pub fn build_factor(
    inputs: &FactorInputs,
    day: usize,
    p: f64,
) -> std::result::Result<FactorWeights, SkipReason> {
    let n = inputs.tickers.len();
    let mut weights = vec![0.0; n];
    let mut legs = Vec::new();
    let mut sector_weights: Vec<Vec<(usize, f64)>> = Vec::new();

    for sector in 0..SUPERSECTORS {
        let mut members: Vec<(usize, f64, f64, f64)> = (0..n)
            .filter(|&i| inputs.supersectors[i] == sector)
            .filter_map(
                |i| match (inputs.indicator[i], inputs.beta[i], inputs.vol[i]) {
                    (Some(x), Some(b), Some(v)) if x.is_finite() && b.is_finite() && v > 0.0 => {
                        Some((i, x, b, v))
                    }
                    _ => None,
                },
            )
            .collect();
        if members.len() < 2 {
            continue;
        }
        members.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| inputs.tickers[a.0].cmp(inputs.tickers[b.0]))
        });
        let k = leg_size(p, members.len());
        let sigma_mean = members.iter().map(|m| m.3).sum::<f64>() / members.len() as f64;
        let scale = |v: f64| (sigma_mean / v).min(1.0);
        let long = &members[..k];
        let short = &members[members.len() - k..];
        let beta_long: f64 = long.iter().map(|m| m.2 * scale(m.3)).sum();
        let beta_short: f64 = short.iter().map(|m| m.2 * scale(m.3)).sum();
        if !(beta_long > 0.0 && beta_short > 0.0) {
            return Err(SkipReason::NonPositiveLegBeta);
        }
        let mu = 1.0 / (2.0 * k as f64);
        let (mu_plus, mu_minus) = if beta_long > beta_short {
            (mu * beta_short / beta_long, mu)
        } else {
            (mu, mu * beta_long / beta_short)
        };
        let mut w: Vec<(usize, f64)> = long.iter().map(|m| (m.0, mu_plus * scale(m.3))).collect();
        w.extend(short.iter().map(|m| (m.0, -mu_minus * scale(m.3))));
        sector_weights.push(w);
        legs.push(SectorLegs {
            supersector: sector,
            eligible: members.len(),
            leg_size: k,
            mu_plus,
            mu_minus,
        });
    }
    if legs.is_empty() {
        return Err(SkipReason::NoEligibleSector);
    }
    let share = 1.0 / legs.len() as f64;
    for (leg, w) in legs.iter_mut().zip(&sector_weights) {
        leg.mu_plus *= share;
        leg.mu_minus *= share;
        for &(i, v) in w {
            weights[i] = v * share;
        }
    }
    Ok(FactorWeights {
        day,
        p,
        weights,
        legs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub reactive: ReactiveParams,
    /// Leg quantile; the strategy's default when absent.
    pub quantile: Option<f64>,
    /// Low-volatility orientation: long the highest betas when true.
    pub low_vol_long_high_beta: bool,
    pub burn_in: usize,
    pub keep_weights: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            reactive: ReactiveParams::default(),
            quantile: None,
            low_vol_long_high_beta: true,
            burn_in: DEFAULT_BURN_IN,
            keep_weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub strategy: StrategyKind,
    pub beta_source: BetaSource,
    /// Days on which the factor was held.
    pub days: Vec<usize>,
    pub returns: Vec<f64>,
    pub index_returns: Vec<f64>,
    pub skipped_warmup: usize,
    pub skipped_other: usize,
    pub quality: Option<HedgeQuality>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub weights: Vec<FactorWeights>,
}

/// Daily return of `p1` over `p0`; missing prices contribute nothing.
fn simple_return(p0: Option<f64>, p1: Option<f64>) -> f64 {
    match (p0, p1) {
        (Some(a), Some(b)) => b / a - 1.0,
        _ => 0.0,
    }
}

/// Run the factor through the universe. Weights held over day `d` are built
/// from prices up to `d - 1`; both beta models are stepped only after the
/// day's return is booked.
pub fn backtest(
    universe: &Universe,
    strategy: StrategyKind,
    source: BetaSource,
    cfg: &BacktestConfig,
) -> Result<BacktestResult> {
    universe.validate()?;
    if universe.n_days() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: universe.n_days(),
        });
    }
    let p = cfg.quantile.unwrap_or(strategy.default_quantile());
    if !(p > 0.0 && p <= 0.5) {
        return Err(Error::Config(format!(
            "quantile must lie in (0, 0.5], got {p}"
        )));
    }
    if strategy == StrategyKind::Size && universe.stocks.iter().any(|s| s.caps.is_none()) {
        return Err(Error::Config(
            "size strategy needs capitalization for every stock".into(),
        ));
    }
    cfg.reactive.validate()?;
    let ols_params = ReactiveParams::degenerate_ols(cfg.reactive.lambda_beta);
    let first = universe.prices_on(0);
    let mut ols = ReactiveModel::<f64>::new(&ols_params, universe.index[0], &first)?;
    let mut reactive = match source {
        BetaSource::Reactive => Some(ReactiveModel::<f64>::new(
            &cfg.reactive,
            universe.index[0],
            &first,
        )?),
        BetaSource::Ols => None,
    };
    let mut ew_var: Vec<EmaState> = (0..universe.n_stocks())
        .map(|_| EmaState::new(cfg.reactive.lambda_sigma))
        .collect::<Result<_>>()?;
    let tickers: Vec<&str> = universe.stocks.iter().map(|s| s.ticker.as_str()).collect();
    let supersectors: Vec<usize> = universe.stocks.iter().map(|s| s.supersector).collect();

    let mut out = BacktestResult {
        strategy,
        beta_source: source,
        days: Vec::new(),
        returns: Vec::new(),
        index_returns: Vec::new(),
        skipped_warmup: 0,
        skipped_other: 0,
        quality: None,
        weights: Vec::new(),
    };
    for day in 1..universe.n_days() {
        let warm = ols.is_warm(cfg.burn_in)
            && reactive.as_ref().is_none_or(|m| m.is_warm(cfg.burn_in))
            && day > strategy.history();
        if warm {
            let ols_betas = ols.betas();
            let (beta, vol): (Vec<Option<f64>>, Vec<Option<f64>>) = match &reactive {
                Some(m) => (
                    m.betas(),
                    (0..universe.n_stocks()).map(|i| m.sigma_stock(i)).collect(),
                ),
                None => (
                    ols_betas.clone(),
                    ew_var.iter().map(|e| e.value().map(f64::sqrt)).collect(),
                ),
            };
            let inputs = FactorInputs {
                tickers: tickers.clone(),
                supersectors: supersectors.clone(),
                indicator: indicator(
                    strategy,
                    universe,
                    day,
                    &ols_betas,
                    cfg.low_vol_long_high_beta,
                ),
                beta,
                vol,
            };
            match build_factor(&inputs, day, p) {
                Ok(w) => {
                    let r: f64 = universe
                        .stocks
                        .iter()
                        .zip(&w.weights)
                        .map(|(s, wi)| wi * simple_return(s.prices[day - 1], s.prices[day]))
                        .sum();
                    out.days.push(day);
                    out.returns.push(r);
                    out.index_returns
                        .push(universe.index[day] / universe.index[day - 1] - 1.0);
                    if cfg.keep_weights {
                        out.weights.push(w);
                    }
                }
                Err(SkipReason::Warmup) => out.skipped_warmup += 1,
                Err(_) => out.skipped_other += 1,
            }
        } else {
            out.skipped_warmup += 1;
        }

        let prices = universe.prices_on(day);
        ols.step(universe.index[day], &prices)?;
        if let Some(m) = reactive.as_mut() {
            m.step(universe.index[day], &prices)?;
        }
        for (i, s) in universe.stocks.iter().enumerate() {
            if let (Some(a), Some(b)) = (s.prices[day - 1], s.prices[day]) {
                let r = b / a - 1.0;
                ew_var[i].update(r * r)?;
            }
        }
    }
    if out.returns.len() > crate::evaluation::CORSTD_WINDOW {
        out.quality = Some(strategy_bias_corstd(&out.returns, &out.index_returns)?);
    }
    Ok(out)
}

/// Parameters of the synthetic backtest universe: one index following the
/// slow-level leverage dynamics and stocks with their own unit-normalized
/// betas and specific leverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticUniverseConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub seed: u64,
    /// Annualized index volatility of normalized returns.
    pub index_vol: f64,
    /// Range of annualized residual volatilities.
    pub residual_vol: (f64, f64),
    /// Range of normalized betas.
    pub beta_range: (f64, f64),
    pub annualization: f64,
    pub reactive: ReactiveParams,
}

impl Default for SyntheticUniverseConfig {
    fn default() -> Self {
        Self {
            n_stocks: 100,
            n_days: 2000,
            seed: 0,
            index_vol: 0.2,
            residual_vol: (0.15, 0.3),
            beta_range: (0.25, 1.75),
            annualization: 255.0,
            reactive: ReactiveParams {
                phi: 0.0,
                ell: 0.0,
                ell_prime: 0.0,
                ..ReactiveParams::default()
            },
        }
    }
}

/// The universe together with each stock's true beta on every day.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUniverse {
    pub universe: Universe,
    pub true_betas: Vec<Vec<f64>>,
}

const MAX_REDRAWS: usize = 1000;

pub fn synthetic_universe(cfg: &SyntheticUniverseConfig) -> Result<SyntheticUniverse> {
    if cfg.n_stocks < 2 * SUPERSECTORS || cfg.n_days < 2 {
        return Err(Error::Config(format!(
            "synthetic universe needs at least {} stocks and 2 days",
            2 * SUPERSECTORS
        )));
    }
    let c = Coeffs::<f64>::new(&cfg.reactive)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let day_vol = |annual: f64| annual / cfg.annualization.sqrt();
    let s_index = day_vol(cfg.index_vol);
    let betas: Vec<f64> = (0..cfg.n_stocks)
        .map(|_| rng.random_range(cfg.beta_range.0..=cfg.beta_range.1))
        .collect();
    let resid: Vec<f64> = (0..cfg.n_stocks)
        .map(|_| day_vol(rng.random_range(cfg.residual_vol.0..=cfg.residual_vol.1)))
        .collect();
    let shares: Vec<f64> = (0..cfg.n_stocks)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (1.0 + z).exp() * 1e6
        })
        .collect();

    let mut index = IndexLevels::new(100.0)?;
    let mut stocks: Vec<StockLevels<f64>> = (0..cfg.n_stocks)
        .map(|_| StockLevels::new(50.0, &index, &c))
        .collect::<Result<_>>()?;
    let mut index_px = vec![index.price];
    let mut stock_px: Vec<Vec<Option<f64>>> = stocks.iter().map(|s| vec![Some(s.price)]).collect();
    let mut true_betas: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n_days); cfg.n_stocks];
    let ratio = |l: f64, p: f64| l / p;

    for _ in 1..cfg.n_days {
        let mut attempts = 0;
        let (next_index, rt_index) = loop {
            let z: f64 = StandardNormal.sample(&mut rng);
            let rt = s_index * z;
            let mut cand = index;
            let price = index.price + rt * index.reactive;
            if price > 0.0 && cand.update(price, &c).is_ok() {
                break (cand, rt);
            }
            attempts += 1;
            if attempts >= MAX_REDRAWS {
                return Err(Error::Numerical("synthetic index: too many redraws".into()));
            }
        };
        for (i, st) in stocks.iter_mut().enumerate() {
            let mut attempts = 0;
            *st = loop {
                let z: f64 = StandardNormal.sample(&mut rng);
                let eps = resid[i] * z;
                let price = st.price + (betas[i] * rt_index + eps) * st.reactive;
                let mut cand = *st;
                if price > 0.0 && cand.update(price, &next_index, &c).is_ok() {
                    break cand;
                }
                attempts += 1;
                if attempts >= MAX_REDRAWS {
                    return Err(Error::Numerical("synthetic stock: too many redraws".into()));
                }
            };
            stock_px[i].push(Some(st.price));
            true_betas[i].push(
                betas[i] * ratio(st.reactive, st.price)
                    / ratio(next_index.reactive, next_index.price),
            );
        }
        index = next_index;
        index_px.push(index.price);
    }

    let stocks: Vec<Stock> = stock_px
        .into_iter()
        .enumerate()
        .map(|(i, prices)| Stock {
            ticker: format!("S{i:03}"),
            caps: Some(prices.iter().map(|p| p.map(|v| v * shares[i])).collect()),
            prices,
            supersector: 0,
        })
        .collect();
    let dates = (0..cfg.n_days).map(|d| format!("d{d:05}")).collect();
    let mut universe = Universe::new(dates, index_px, stocks)?;
    universe.assign_supersectors_by_cap(0)?;
    Ok(SyntheticUniverse {
        universe,
        true_betas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn inputs<'a>(
        tickers: &[&'a str],
        indicator: &[f64],
        beta: &[f64],
        vol: &[f64],
    ) -> FactorInputs<'a> {
        FactorInputs {
            tickers: tickers.to_vec(),
            supersectors: vec![0; tickers.len()],
            indicator: indicator.iter().map(|v| Some(*v)).collect(),
            beta: beta.iter().map(|v| Some(*v)).collect(),
            vol: vol.iter().map(|v| Some(*v)).collect(),
        }
    }

    #[test]
    fn low_volatility_selects_extreme_betas() {
        let b = [0.5, 1.0, 1.5];
        let f = build_factor(&inputs(&["A", "B", "C"], &b, &b, &[0.2; 3]), 1, 0.3).unwrap();
        assert!(f.weights[2] > 0.0);
        assert!(f.weights[0] < 0.0);
        assert_eq!(f.weights[1], 0.0);
        assert_abs_diff_eq!(f.beta_exposure(&b.map(Some)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_betas_give_symmetric_legs() {
        let f = build_factor(
            &inputs(
                &["A", "B", "C", "D"],
                &[4.0, 3.0, 2.0, 1.0],
                &[1.0; 4],
                &[0.2; 4],
            ),
            1,
            0.25,
        )
        .unwrap();
        assert_eq!(f.legs[0].mu_plus, 0.5);
        assert_eq!(f.legs[0].mu_minus, 0.5);
        assert_eq!(f.weights, vec![0.5, 0.0, 0.0, -0.5]);
    }

    #[test]
    fn heavier_long_leg_is_halved() {
        let f = build_factor(
            &inputs(
                &["A", "B", "C", "D"],
                &[4.0, 3.0, 2.0, 1.0],
                &[2.0, 1.0, 1.0, 1.0],
                &[0.2; 4],
            ),
            1,
            0.25,
        )
        .unwrap();
        assert_abs_diff_eq!(f.legs[0].mu_plus, 0.25, epsilon = 1e-15);
        assert_eq!(f.legs[0].mu_minus, 0.5);
    }

    #[test]
    fn low_volatility_weights_are_capped() {
        let f = build_factor(
            &inputs(&["A", "B"], &[2.0, 1.0], &[1.0, 1.0], &[0.1, 0.3]),
            1,
            0.5,
        )
        .unwrap();
        let legs = f.legs[0];
        assert_eq!(f.weights[0], legs.mu_plus);
        assert_abs_diff_eq!(f.weights[1], -legs.mu_minus * 0.2 / 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(f.weights[0] + f.weights[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_beta_leg_skips_the_day() {
        let r = build_factor(
            &inputs(&["A", "B"], &[2.0, 1.0], &[1.0, 0.0], &[0.2; 2]),
            1,
            0.5,
        );
        assert_eq!(r, Err(SkipReason::NonPositiveLegBeta));
        let mut single = inputs(&["A"], &[1.0], &[1.0], &[0.2]);
        single.supersectors = vec![3];
        assert_eq!(
            build_factor(&single, 1, 0.3),
            Err(SkipReason::NoEligibleSector)
        );
    }

    #[test]
    fn ties_break_by_ticker() {
        let f = build_factor(
            &inputs(&["D", "B", "A", "C"], &[1.0; 4], &[1.0; 4], &[0.2; 4]),
            1,
            0.25,
        )
        .unwrap();
        assert_eq!(f.weights, vec![-0.5, 0.0, 0.5, 0.0]);
    }

    fn toy_universe(prices: Vec<Vec<f64>>) -> Universe {
        let n = prices[0].len();
        let stocks = prices
            .into_iter()
            .enumerate()
            .map(|(i, p)| Stock {
                ticker: format!("T{i}"),
                caps: Some(p.iter().map(|v| Some(v * 10.0)).collect()),
                prices: p.into_iter().map(Some).collect(),
                supersector: 0,
            })
            .collect();
        Universe::new(
            (0..n).map(|d| d.to_string()).collect(),
            vec![100.0; n],
            stocks,
        )
        .unwrap()
    }

    #[test]
    fn reversal_buys_last_month_loser() {
        let up: Vec<f64> = (0..30).map(|d| if d < 8 { 100.0 } else { 110.0 }).collect();
        let down: Vec<f64> = (0..30).map(|d| if d < 8 { 100.0 } else { 90.0 }).collect();
        let u = toy_universe(vec![up, down]);
        let ind = indicator(StrategyKind::Reversal, &u, 29, &[None, None], true);
        assert!(ind[1].unwrap() > ind[0].unwrap());
        assert_eq!(
            indicator(StrategyKind::Reversal, &u, 21, &[None, None], true),
            vec![None, None]
        );
        let size = indicator(StrategyKind::Size, &u, 29, &[None, None], true);
        assert!(size[0].unwrap() > size[1].unwrap());
    }

    #[test]
    fn stocks_equal_to_index_give_flat_factor() {
        let cfg = SyntheticUniverseConfig {
            n_days: 400,
            n_stocks: 24,
            seed: 3,
            ..Default::default()
        };
        let mut u = synthetic_universe(&cfg).unwrap().universe;
        for s in &mut u.stocks {
            s.prices = u.index.iter().map(|p| Some(*p)).collect();
            s.caps = Some(u.index.iter().map(|p| Some(*p)).collect());
        }
        for source in BetaSource::ALL {
            let r = backtest(&u, StrategyKind::Size, source, &BacktestConfig::default()).unwrap();
            assert!(!r.returns.is_empty());
            for x in &r.returns {
                assert!(x.abs() < 1e-12, "{x}");
            }
        }
    }

    #[test]
    fn synthetic_universe_shape() {
        let s = synthetic_universe(&SyntheticUniverseConfig {
            n_days: 300,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(s.universe.n_stocks(), 100);
        assert_eq!(s.universe.n_days(), 300);
        let mut counts = [0usize; SUPERSECTORS];
        for st in &s.universe.stocks {
            counts[st.supersector] += 1;
        }
        assert!(counts.iter().all(|&c| c == 16 || c == 17), "{counts:?}");
        assert!(s
            .true_betas
            .iter()
            .all(|b| b.len() == 299 && b.iter().all(|v| v.is_finite() && *v > 0.0)));
    }

    #[test]
    fn backtest_weights_satisfy_invariants_every_day() {
        let s = synthetic_universe(&SyntheticUniverseConfig {
            n_days: 700,
            n_stocks: 36,
            ..Default::default()
        })
        .unwrap();
        let cfg = BacktestConfig {
            keep_weights: true,
            ..Default::default()
        };
        for strategy in [
            StrategyKind::LowVolatility,
            StrategyKind::Reversal,
            StrategyKind::Momentum,
        ] {
            for source in BetaSource::ALL {
                let r = backtest(&s.universe, strategy, source, &cfg).unwrap();
                assert_eq!(r.weights.len(), r.returns.len());
                assert_eq!(r.skipped_warmup + r.skipped_other + r.returns.len(), 699);
                assert!(r.quality.is_some());
            }
        }
    }

    #[test]
    fn weights_never_look_ahead() {
        let s = synthetic_universe(&SyntheticUniverseConfig {
            n_days: 420,
            n_stocks: 24,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let cfg = BacktestConfig {
            keep_weights: true,
            ..Default::default()
        };
        let base = backtest(
            &s.universe,
            StrategyKind::Reversal,
            BetaSource::Reactive,
            &cfg,
        )
        .unwrap();
        let t = 350;
        let mut shocked = s.universe.clone();
        shocked.stocks[5].prices[t] = shocked.stocks[5].prices[t].map(|p| p * 1.3);
        shocked.index[t] *= 0.9;
        let moved = backtest(&shocked, StrategyKind::Reversal, BetaSource::Reactive, &cfg).unwrap();
        for (a, b) in base.weights.iter().zip(&moved.weights) {
            if a.day <= t {
                assert_eq!(a, b);
            }
        }
        assert!(base
            .weights
            .iter()
            .zip(&moved.weights)
            .any(|(a, b)| a.day > t && a != b));
    }

    #[test]
    fn names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        for b in BetaSource::ALL {
            assert_eq!(b.name().parse::<BetaSource>().unwrap(), b);
        }
        assert!("value".parse::<StrategyKind>().is_err());
    }

    fn cross_section() -> impl Strategy<Value = Vec<(usize, f64, f64, f64)>> {
        prop::collection::vec(
            (
                0usize..SUPERSECTORS,
                -1.0f64..1.0,
                0.05f64..2.5,
                0.05f64..0.8,
            ),
            2..60,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn factor_invariants(rows in cross_section(), p in 0.05f64..0.5) {
            let tickers: Vec<String> = (0..rows.len()).map(|i| format!("X{i:02}")).collect();
            let inp = FactorInputs {
                tickers: tickers.iter().map(String::as_str).collect(),
                supersectors: rows.iter().map(|r| r.0).collect(),
                indicator: rows.iter().map(|r| Some(r.1)).collect(),
                beta: rows.iter().map(|r| Some(r.2)).collect(),
                vol: rows.iter().map(|r| Some(r.3)).collect(),
            };
            if let Ok(f) = build_factor(&inp, 1, p) {
                prop_assert!(f.beta_exposure(&inp.beta).abs() <= 1e-10);
                prop_assert!(f.gross() <= 1.0 + 1e-12);
                let share = 1.0 / f.legs.len() as f64;
                for leg in &f.legs {
                    let mu = share / (2.0 * leg.leg_size as f64);
                    let reduced = [leg.mu_plus < mu * (1.0 - 1e-12), leg.mu_minus < mu * (1.0 - 1e-12)];
                    prop_assert!(!(reduced[0] && reduced[1]));
                    prop_assert!((leg.mu_plus.max(leg.mu_minus) - mu).abs() <= 1e-15 * mu);
                }
                for (i, w) in f.weights.iter().enumerate() {
                    let leg = f.legs.iter().find(|l| l.supersector == inp.supersectors[i]);
                    if leg.is_none() {
                        prop_assert_eq!(*w, 0.0);
                    }
                }
                let again = build_factor(&inp, 1, p).unwrap();
                prop_assert_eq!(&again, &f);
            }
        }
    }
}
