//! Estimator comparison on simulated paths: every estimator measures the
//! beta at the end of each path and its error against the true conditional
//! beta is aggregated into one table row per estimator.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta::ReactiveModel;
use crate::error::{Error, Result};
use crate::estimators::{
    dcc_beta, mad_beta, ols_beta, trimean_beta, AsymmetrySide, DccModel, EstimatorKind,
    WeightedRegressionProblem,
};
use crate::evaluation::{
    table2_stats, trailing_outperformance, ErrorSample, StatRow, WINNER_WINDOW,
};
use crate::montecarlo::{generate_path, McConfig, McPath};
use crate::strategies::Universe;
use crate::volatility::{ReactiveParams, DEFAULT_BURN_IN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mc: McConfig,
    pub estimators: Vec<EstimatorKind>,
    /// Parameters of the reactive estimator (not of the generator).
    pub reactive: ReactiveParams,
    pub burn_in: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mc: McConfig::default(),
            estimators: EstimatorKind::ALL.to_vec(),
            reactive: ReactiveParams::default(),
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.mc.validate()?;
        self.reactive.validate()?;
        if self.mc.path_len <= self.burn_in {
            return Err(Error::Config(format!(
                "path length {} must exceed the burn-in of {} days",
                self.mc.path_len, self.burn_in
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimator selected".into()));
        }
        Ok(())
    }

    fn lambda(&self) -> f64 {
        self.reactive.lambda_beta
    }
}

/// Final-date estimates of one path. A failed estimator maps to `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEstimates {
    pub path_id: u64,
    pub true_beta: f64,
    pub winner: bool,
    pub estimates: BTreeMap<EstimatorKind, Option<f64>>,
}

/// Estimate with one of the window-based estimators; `None` for the
/// reactive model, which needs prices rather than a regression problem.
pub fn window_beta(
    kind: EstimatorKind,
    p: &WeightedRegressionProblem,
    asymmetry: AsymmetrySide,
) -> Option<f64> {
    match kind {
        EstimatorKind::Ols => ols_beta(p),
        EstimatorKind::Mad => mad_beta(p).ok(),
        EstimatorKind::Trm => trimean_beta(p).ok(),
        EstimatorKind::Dcc => dcc_beta(p, &DccModel::symmetric()).ok().map(|f| f.beta),
        EstimatorKind::Adcc => dcc_beta(
            p,
            &DccModel {
                asymmetry,
                ..DccModel::asymmetric()
            },
        )
        .ok()
        .map(|f| f.beta),
        EstimatorKind::Reactive => None,
    }
    .filter(|v| v.is_finite())
}

fn estimate(
    kind: EstimatorKind,
    path: &McPath,
    p: &WeightedRegressionProblem,
    cfg: &ExperimentConfig,
) -> Option<f64> {
    if kind != EstimatorKind::Reactive {
        return window_beta(kind, p, cfg.mc.asymmetry);
    }
    let mut m =
        ReactiveModel::<f64>::single(&cfg.reactive, path.index_prices[0], path.stock_prices[0])
            .ok()?;
    for t in 1..path.index_prices.len() {
        m.step_single(path.index_prices[t], path.stock_prices[t])
            .ok()?;
    }
    m.is_warm(cfg.burn_in)
        .then(|| m.beta(0))
        .flatten()
        .filter(|v| v.is_finite())
}

/// Run every configured estimator (plus OLS, the variance reference) on the
/// whole path and compare with the true beta for the day after it ends.
pub fn estimate_path(path: &McPath, cfg: &ExperimentConfig) -> Result<PathEstimates> {
    let p = WeightedRegressionProblem::from_slices(&path.r_index, &path.r_stock, cfg.lambda())?;
    let mut kinds = cfg.estimators.clone();
    if !kinds.contains(&EstimatorKind::Ols) {
        kinds.push(EstimatorKind::Ols);
    }
    let estimates = kinds
        .into_iter()
        .map(|k| (k, estimate(k, path, &p, cfg)))
        .collect();
    let winner = trailing_outperformance(&path.r_stock, &path.r_index, WINNER_WINDOW).ok_or(
        Error::InsufficientData {
            needed: WINNER_WINDOW,
            got: path.len(),
        },
    )? > 0.0;
    Ok(PathEstimates {
        path_id: path.path_id,
        true_beta: path.final_true_beta(),
        winner,
        estimates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub estimator: EstimatorKind,
    pub failures: usize,
    pub stats: Option<StatRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Report {
    pub model: String,
    pub n_paths: usize,
    pub path_len: usize,
    pub seed: u64,
    pub reference_variance: Option<f64>,
    pub true_beta_mean: f64,
    pub rows: Vec<EstimatorRow>,
}

impl Table2Report {
    pub fn row(&self, kind: EstimatorKind) -> Option<&StatRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == kind)
            .and_then(|r| r.stats.as_ref())
    }
}

/// Aggregate per-path estimates into table rows; OLS error variance is the
/// reference of every variance ratio.
pub fn summarize(cfg: &ExperimentConfig, paths: &[PathEstimates]) -> Result<Table2Report> {
    if paths.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let samples = |kind: EstimatorKind| -> Result<(Vec<ErrorSample>, usize)> {
        let mut out = Vec::with_capacity(paths.len());
        let mut failures = 0;
        for p in paths {
            match p.estimates.get(&kind).copied().flatten() {
                Some(b) => out.push(ErrorSample::new(b, p.true_beta, p.winner)?),
                None => failures += 1,
            }
        }
        Ok((out, failures))
    };
    let (ols, _) = samples(EstimatorKind::Ols)?;
    let reference_variance = if ols.len() > 1 {
        Some(table2_stats(&ols, 1.0)?.error_variance)
    } else {
        None
    };
    let rows = cfg
        .estimators
        .iter()
        .map(|&k| {
            let (s, failures) = samples(k)?;
            let stats = if s.is_empty() {
                None
            } else {
                Some(table2_stats(&s, reference_variance.unwrap_or(f64::NAN))?)
            };
            Ok(EstimatorRow {
                estimator: k,
                failures,
                stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table2Report {
        model: cfg.mc.model.to_string(),
        n_paths: paths.len(),
        path_len: cfg.mc.path_len,
        seed: cfg.mc.seed,
        reference_variance,
        true_beta_mean: paths.iter().map(|p| p.true_beta).sum::<f64>() / paths.len() as f64,
        rows,
    })
}

/// Generate and measure every path in parallel. Results are ordered by path
/// id and independent of scheduling.
pub fn run_paths(cfg: &ExperimentConfig) -> Result<Vec<PathEstimates>> {
    cfg.validate()?;
    (0..cfg.mc.n_paths as u64)
        .into_par_iter()
        .map(|id| generate_path(&cfg.mc, id).and_then(|path| estimate_path(&path, cfg)))
        .collect()
}

pub fn run_table2(cfg: &ExperimentConfig) -> Result<Table2Report> {
    summarize(cfg, &run_paths(cfg)?)
}

/// Daily betas of one stock on one date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyBeta {
    pub date: String,
    pub ticker: String,
    pub ols: Option<f64>,
    pub reactive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalEstimate {
    pub ticker: String,
    pub estimator: EstimatorKind,
    /// Returns used by the window estimators.
    pub n_returns: usize,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseEstimates {
    pub daily: Vec<DailyBeta>,
    /// Last-date estimates of the window-based estimators.
    pub last_date: Vec<FinalEstimate>,
}

/// Run the streaming OLS and reactive models through the universe and, for
/// every other requested estimator, estimate the beta on the last date from
/// the trailing `window` returns. Daily rows start once `burn_in` days have
/// been consumed, so each stock gets `n_days - burn_in` rows.
pub fn estimate_universe(
    universe: &Universe,
    estimators: &[EstimatorKind],
    params: &ReactiveParams,
    burn_in: usize,
    window: usize,
    asymmetry: AsymmetrySide,
) -> Result<UniverseEstimates> {
    universe.validate()?;
    if universe.n_days() <= burn_in {
        return Err(Error::InsufficientData {
            needed: burn_in + 1,
            got: universe.n_days(),
        });
    }
    let day_prices =
        |d: usize| -> Vec<Option<f64>> { universe.stocks.iter().map(|s| s.prices[d]).collect() };
    let ols_params = ReactiveParams::degenerate_ols(params.lambda_beta);
    let first = day_prices(0);
    let mut ols = ReactiveModel::<f64>::new(&ols_params, universe.index[0], &first)?;
    let mut reactive = ReactiveModel::<f64>::new(params, universe.index[0], &first)?;
    let want_reactive = estimators.contains(&EstimatorKind::Reactive);
    let mut daily = Vec::with_capacity((universe.n_days() - burn_in) * universe.n_stocks());
    for d in 0..universe.n_days() {
        if d > 0 {
            let prices = day_prices(d);
            ols.step(universe.index[d], &prices)?;
            if want_reactive {
                reactive.step(universe.index[d], &prices)?;
            }
        }
        if d < burn_in {
            continue;
        }
        for (i, s) in universe.stocks.iter().enumerate() {
            daily.push(DailyBeta {
                date: universe.dates[d].clone(),
                ticker: s.ticker.clone(),
                ols: ols.beta(i),
                reactive: if want_reactive {
                    reactive.beta(i)
                } else {
                    None
                },
            });
        }
    }
    let window_kinds: Vec<EstimatorKind> = estimators
        .iter()
        .copied()
        .filter(|k| !matches!(k, EstimatorKind::Ols | EstimatorKind::Reactive))
        .collect();
    let last_date = universe
        .stocks
        .par_iter()
        .flat_map_iter(|s| {
            let (x, y) = trailing_returns(&universe.index, &s.prices, window);
            let problem = WeightedRegressionProblem::new(x, y, params.lambda_beta).ok();
            let n = problem.as_ref().map_or(0, |p| p.len());
            window_kinds
                .iter()
                .map(move |&k| FinalEstimate {
                    ticker: s.ticker.clone(),
                    estimator: k,
                    n_returns: n,
                    beta: problem.as_ref().and_then(|p| window_beta(k, p, asymmetry)),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(UniverseEstimates { daily, last_date })
}

/// Up to `window` most recent index and stock returns over days on which
/// both prices are present, oldest first.
fn trailing_returns(index: &[f64], prices: &[Option<f64>], window: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(window);
    let mut y = Vec::with_capacity(window);
    for t in (1..index.len()).rev() {
        if x.len() == window {
            break;
        }
        if let (Some(p0), Some(p1)) = (prices[t - 1], prices[t]) {
            x.push(index[t] / index[t - 1] - 1.0);
            y.push(p1 / p0 - 1.0);
        }
    }
    x.reverse();
    y.reverse();
    (x, y)
}
