//! Reactive volatility: slow and fast index levels, per-stock levels, the
//! outlier filter, normalized returns and reactive volatilities.
//!
//! Every level is seeded at the first observed price. A stock whose price is
//! missing on a given day is frozen: no level, return or variance update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::EmaState;
use crate::Real;

/// Days excluded from downstream statistics while the level EMAs forget
/// their seed.
pub const DEFAULT_BURN_IN: usize = 250;

/// Fixed constants of the reactive model. Defaults are the published values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactiveParams {
    /// Slow level EMA weight (retarded, specific effect).
    pub lambda_s: f64,
    /// Fast level EMA weight (panic, systematic effect).
    pub lambda_f: f64,
    /// Normalized variance EMA weight.
    pub lambda_sigma: f64,
    /// Regression look-back weight.
    pub lambda_beta: f64,
    /// Systematic leverage of the index.
    pub ell: f64,
    /// Systematic leverage of single stocks.
    pub ell_prime: f64,
    /// Filter strength; zero disables the filter.
    pub phi: f64,
    pub elasticity_lo: f64,
    pub elasticity_hi: f64,
    pub elasticity_slope: f64,
    /// Elasticity above `elasticity_hi`.
    pub elasticity_cap: f64,
    /// Divide normalized returns by the lagged normalized index volatility
    /// before the regression.
    pub renormalize_by_index_vol: bool,
}

impl Default for ReactiveParams {
    fn default() -> Self {
        Self {
            lambda_s: 0.0241,
            lambda_f: 0.1484,
            lambda_sigma: 0.025,
            lambda_beta: 1.0 / 90.0,
            ell: 8.0,
            ell_prime: 8.0 - 0.91,
            phi: 3.3,
            elasticity_lo: 0.5,
            elasticity_hi: 1.6,
            elasticity_slope: 0.6,
            elasticity_cap: 0.6,
            renormalize_by_index_vol: true,
        }
    }
}

impl ReactiveParams {
    /// The setting under which the reactive beta collapses to an
    /// exponentially weighted least-squares slope on raw returns.
    pub fn degenerate_ols(lambda_beta: f64) -> Self {
        Self {
            lambda_s: 1.0,
            lambda_f: 1.0,
            lambda_beta,
            ell: 0.0,
            ell_prime: 0.0,
            elasticity_slope: 0.0,
            elasticity_cap: 0.0,
            renormalize_by_index_vol: false,
            ..Self::default()
        }
    }

    pub fn ell_diff(&self) -> f64 {
        self.ell - self.ell_prime
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_s", self.lambda_s),
            ("lambda_f", self.lambda_f),
            ("lambda_sigma", self.lambda_sigma),
            ("lambda_beta", self.lambda_beta),
        ];
        for (name, v) in weights {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.ell_prime >= 0.0 && self.ell >= self.ell_prime) {
            return Err(Error::Config(format!(
                "leverage must satisfy ell >= ell_prime >= 0, got ell={} ell_prime={}",
                self.ell, self.ell_prime
            )));
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return Err(Error::Config(format!("phi must be >= 0, got {}", self.phi)));
        }
        if !(self.elasticity_lo < self.elasticity_hi) {
            return Err(Error::Config(
                "elasticity_lo must be below elasticity_hi".into(),
            ));
        }
        if !(self.elasticity_slope >= 0.0 && self.elasticity_cap >= 0.0) {
            return Err(Error::Config(
                "elasticity slope and cap must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Outlier filter `F_φ(z) = tanh(φ z) / φ`; the identity when `φ = 0`.
pub fn filter_phi<F: Real>(z: F, phi: F) -> F {
    if phi == F::zero() {
        z
    } else {
        (phi * z).tanh() / phi
    }
}

/// Parameters converted once into the working scalar type.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Coeffs<F> {
    pub lambda_s: F,
    pub lambda_f: F,
    pub lambda_sigma: F,
    pub lambda_beta: F,
    pub ell: F,
    pub ell_prime: F,
    pub phi: F,
    pub elasticity_lo: F,
    pub elasticity_hi: F,
    pub elasticity_slope: F,
    pub elasticity_cap: F,
    pub renormalize: bool,
}

impl<F: Real> Coeffs<F> {
    pub fn new(p: &ReactiveParams) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            lambda_s: F::lit(p.lambda_s),
            lambda_f: F::lit(p.lambda_f),
            lambda_sigma: F::lit(p.lambda_sigma),
            lambda_beta: F::lit(p.lambda_beta),
            ell: F::lit(p.ell),
            ell_prime: F::lit(p.ell_prime),
            phi: F::lit(p.phi),
            elasticity_lo: F::lit(p.elasticity_lo),
            elasticity_hi: F::lit(p.elasticity_hi),
            elasticity_slope: F::lit(p.elasticity_slope),
            elasticity_cap: F::lit(p.elasticity_cap),
            renormalize: p.renormalize_by_index_vol,
        })
    }
}

fn check_level<F: Real>(level: F, what: &str) -> Result<F> {
    if level > F::zero() && level.is_finite() {
        Ok(level)
    } else {
        Err(Error::Numerical(format!(
            "{what} reactive level is not positive ({level:?}); the systematic leverage term has collapsed"
        )))
    }
}

fn ema<F: Real>(prev: F, x: F, lambda: F) -> F {
    (F::one() - lambda) * prev + lambda * x
}

fn check_price<F: Real>(price: F, what: &str) -> Result<()> {
    if price > F::zero() && price.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{what} price must be positive, got {price:?}"
        )))
    }
}

/// Index levels: slow `L_s`, fast `L_f` and reactive `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexLevels<F = f64> {
    pub slow: F,
    pub fast: F,
    pub reactive: F,
    pub price: F,
}

impl<F: Real> IndexLevels<F> {
    pub fn new(price: F) -> Result<Self> {
        check_price(price, "index")?;
        Ok(Self {
            slow: price,
            fast: price,
            reactive: price,
            price,
        })
    }

    /// `(L_f - I) / L_f`, the panic-effect gap.
    pub fn systematic_gap(&self) -> F {
        (self.fast - self.price) / self.fast
    }

    /// `L_s / I - 1`.
    pub fn specific_gap(&self) -> F {
        self.slow / self.price - F::one()
    }

    pub(crate) fn update(&mut self, price: F, c: &Coeffs<F>) -> Result<()> {
        check_price(price, "index")?;
        self.slow = ema(self.slow, price, c.lambda_s);
        self.fast = ema(self.fast, price, c.lambda_f);
        self.price = price;
        let z = (self.slow - price) / price;
        self.reactive = check_level(
            price * (F::one() + filter_phi(z, c.phi)) * (F::one() + c.ell * self.systematic_gap()),
            "index",
        )?;
        Ok(())
    }
}

/// Per-stock slow level `L_is` and reactive level `L_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StockLevels<F = f64> {
    pub slow: F,
    pub reactive: F,
    pub price: F,
}

impl<F: Real> StockLevels<F> {
    pub(crate) fn new(price: F, index: &IndexLevels<F>, c: &Coeffs<F>) -> Result<Self> {
        check_price(price, "stock")?;
        Ok(Self {
            slow: price,
            reactive: check_level(
                price * (F::one() + c.ell_prime * index.systematic_gap()),
                "stock",
            )?,
            price,
        })
    }

    /// `L_is / S_i - 1`.
    pub fn specific_gap(&self) -> F {
        self.slow / self.price - F::one()
    }

    pub(crate) fn update(&mut self, price: F, index: &IndexLevels<F>, c: &Coeffs<F>) -> Result<()> {
        check_price(price, "stock")?;
        self.slow = ema(self.slow, price, c.lambda_s);
        self.price = price;
        let z = (self.slow - price) / price;
        self.reactive = check_level(
            price
                * (F::one() + filter_phi(z, c.phi))
                * (F::one() + c.ell_prime * index.systematic_gap()),
            "stock",
        )?;
        Ok(())
    }
}

/// Index and stock levels for a fixed universe. Stocks not yet observed are
/// `None` until their first price arrives.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelState<F = f64> {
    pub index: IndexLevels<F>,
    pub stocks: Vec<Option<StockLevels<F>>>,
}

impl<F: Real> LevelState<F> {
    pub(crate) fn new(index: F, stocks: &[Option<F>], c: &Coeffs<F>) -> Result<Self> {
        let index = IndexLevels::new(index)?;
        let stocks = stocks
            .iter()
            .map(|p| p.map(|p| StockLevels::new(p, &index, c)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { index, stocks })
    }

    /// `δI / L(t-1)` and `δS_i / L_i(t-1)` for the next day's prices, computed
    /// from the current (not yet advanced) levels.
    pub fn normalized_returns(
        &self,
        index: F,
        stocks: &[Option<F>],
    ) -> Result<(F, Vec<Option<F>>)> {
        if stocks.len() != self.stocks.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} stock prices, got {}",
                self.stocks.len(),
                stocks.len()
            )));
        }
        let r_index = (index - self.index.price) / self.index.reactive;
        let r_stocks = self
            .stocks
            .iter()
            .zip(stocks)
            .map(|(lvl, p)| match (lvl, p) {
                (Some(l), Some(p)) => Some((*p - l.price) / l.reactive),
                _ => None,
            })
            .collect();
        Ok((r_index, r_stocks))
    }

    /// Advance every level; stocks with a missing price keep their state,
    /// stocks seen for the first time are seeded.
    pub(crate) fn update(&mut self, index: F, stocks: &[Option<F>], c: &Coeffs<F>) -> Result<()> {
        self.index.update(index, c)?;
        for (lvl, p) in self.stocks.iter_mut().zip(stocks) {
            match (lvl.as_mut(), p) {
                (Some(l), Some(p)) => l.update(*p, &self.index, c)?,
                (None, Some(p)) => *lvl = Some(StockLevels::new(*p, &self.index, c)?),
                (_, None) => {}
            }
        }
        Ok(())
    }
}

/// Normalized variance EMAs and the reactive volatilities derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct VolState<F = f64> {
    pub tilde_var_index: EmaState<F>,
    pub tilde_var_stocks: Vec<EmaState<F>>,
    pub sigma_index: Option<F>,
    pub sigma_stocks: Vec<Option<F>>,
}

impl<F: Real> VolState<F> {
    pub(crate) fn new(n: usize, lambda_sigma: F) -> Result<Self> {
        Ok(Self {
            tilde_var_index: EmaState::new(lambda_sigma)?,
            tilde_var_stocks: vec![EmaState::new(lambda_sigma)?; n],
            sigma_index: None,
            sigma_stocks: vec![None; n],
        })
    }

    pub fn tilde_sigma_index(&self) -> Option<F> {
        self.tilde_var_index.value().map(|v| v.sqrt())
    }

    pub fn tilde_sigma_stock(&self, i: usize) -> Option<F> {
        self.tilde_var_stocks[i].value().map(|v| v.sqrt())
    }

    /// Advance the normalized variances with the day's normalized returns and
    /// convert them into reactive volatilities with the current levels.
    pub fn update(
        &mut self,
        level: &LevelState<F>,
        r_index: F,
        r_stocks: &[Option<F>],
    ) -> Result<()> {
        self.tilde_var_index.update(r_index * r_index)?;
        self.sigma_index = self
            .tilde_sigma_index()
            .map(|s| s * level.index.reactive / level.index.price);
        for (i, r) in r_stocks.iter().enumerate() {
            if let Some(r) = r {
                self.tilde_var_stocks[i].update(*r * *r)?;
            }
            self.sigma_stocks[i] = match (self.tilde_sigma_stock(i), &level.stocks[i]) {
                (Some(s), Some(l)) => Some(s * l.reactive / l.price),
                _ => None,
            };
        }
        Ok(())
    }
}

/// What the volatility layer observed on one day; the beta layer needs the
/// lagged quantities as well as the fresh ones.
#[derive(Debug, Clone, PartialEq)]
pub struct VolStep<F = f64> {
    pub tilde_r_index: F,
    pub tilde_r_stocks: Vec<Option<F>>,
    /// `σ̃_I(t-1)`, `None` on the first return.
    pub prev_tilde_sigma_index: Option<F>,
    pub prev_tilde_sigma_stocks: Vec<Option<F>>,
    /// `(L_f(t-1) - I(t-1)) / L_f(t-1)`.
    pub prev_systematic_gap: F,
    /// Stocks frozen today because their price was missing.
    pub missing: Vec<usize>,
}

/// The full reactive volatility state machine for an index and a universe
/// of stocks.
#[derive(Debug, Clone)]
pub struct ReactiveVolatility<F = f64> {
    pub(crate) coeffs: Coeffs<F>,
    pub levels: LevelState<F>,
    pub vols: VolState<F>,
}

impl<F: Real> ReactiveVolatility<F> {
    pub fn new(params: &ReactiveParams, index: F, stocks: &[Option<F>]) -> Result<Self> {
        let coeffs = Coeffs::new(params)?;
        Ok(Self {
            levels: LevelState::new(index, stocks, &coeffs)?,
            vols: VolState::new(stocks.len(), coeffs.lambda_sigma)?,
            coeffs,
        })
    }

    pub fn n_stocks(&self) -> usize {
        self.levels.stocks.len()
    }

    pub fn step(&mut self, index: F, stocks: &[Option<F>]) -> Result<VolStep<F>> {
        let (tilde_r_index, mut tilde_r_stocks) = self.levels.normalized_returns(index, stocks)?;
        let prev_tilde_sigma_index = self.vols.tilde_sigma_index();
        let prev_tilde_sigma_stocks = (0..self.n_stocks())
            .map(|i| self.vols.tilde_sigma_stock(i))
            .collect();
        let prev_systematic_gap = self.levels.index.systematic_gap();
        let missing = stocks
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.is_none().then_some(i))
            .collect();

        self.levels.update(index, stocks, &self.coeffs)?;
        // A stock seen for the first time today has no return yet.
        for (r, p) in tilde_r_stocks.iter_mut().zip(stocks) {
            if p.is_none() {
                *r = None;
            }
        }
        self.vols
            .update(&self.levels, tilde_r_index, &tilde_r_stocks)?;
        Ok(VolStep {
            tilde_r_index,
            tilde_r_stocks,
            prev_tilde_sigma_index,
            prev_tilde_sigma_stocks,
            prev_systematic_gap,
            missing,
        })
    }

    /// `L / I`.
    pub fn index_level_ratio(&self) -> F {
        self.levels.index.reactive / self.levels.index.price
    }

    /// `L_i / S_i`, `None` for stocks not yet observed.
    pub fn stock_level_ratio(&self, i: usize) -> Option<F> {
        self.levels.stocks[i].map(|l| l.reactive / l.price)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn coeffs(p: &ReactiveParams) -> Coeffs<f64> {
        Coeffs::new(p).unwrap()
    }

    #[test]
    fn defaults_match_published_constants() {
        let p = ReactiveParams::default();
        assert_eq!(p.lambda_s, 0.0241);
        assert_eq!(p.lambda_f, 0.1484);
        assert_eq!(p.lambda_sigma, 0.025);
        assert_abs_diff_eq!(p.lambda_beta, 1.0 / 90.0);
        assert_eq!(p.ell, 8.0);
        assert_abs_diff_eq!(p.ell_diff(), 0.91, epsilon = 1e-12);
        assert_eq!(p.phi, 3.3);
        p.validate().unwrap();
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            ReactiveParams {
                lambda_s: 0.0,
                ..Default::default()
            },
            ReactiveParams {
                lambda_beta: 1.2,
                ..Default::default()
            },
            ReactiveParams {
                ell_prime: 9.0,
                ..Default::default()
            },
            ReactiveParams {
                phi: -1.0,
                ..Default::default()
            },
            ReactiveParams {
                elasticity_lo: 2.0,
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(matches!(p.validate(), Err(Error::Config(_))), "{p:?}");
        }
    }

    #[test]
    fn filter_examples() {
        assert_eq!(filter_phi(0.0, 3.3), 0.0);
        assert_abs_diff_eq!(filter_phi(10.0, 3.3), 33f64.tanh() / 3.3, epsilon = 1e-15);
        assert_abs_diff_eq!(filter_phi(10.0, 3.3), 0.30303, epsilon = 1e-5);
        assert_abs_diff_eq!(filter_phi(0.05, 3.3), 0.049551, epsilon = 1e-6);
        assert_eq!(filter_phi(0.37, 0.0), 0.37);
        assert_abs_diff_eq!(filter_phi(0.37, 1e-9), 0.37, epsilon = 1e-12);
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let p = ReactiveParams::default();
        let mut rv = ReactiveVolatility::new(&p, 50.0, &[Some(50.0), Some(50.0)]).unwrap();
        for _ in 0..500 {
            rv.step(50.0, &[Some(50.0), Some(50.0)]).unwrap();
        }
        assert_abs_diff_eq!(rv.levels.index.reactive, 50.0, epsilon = 1e-12);
        for s in &rv.levels.stocks {
            assert_abs_diff_eq!(s.unwrap().reactive, 50.0, epsilon = 1e-12);
        }
        assert_eq!(rv.vols.sigma_index, Some(0.0));
        assert_eq!(rv.vols.sigma_stocks, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn index_drop_raises_level_ratio_by_leverage() {
        // Hand-stepped: from steady state c, the index moves to 0.99c.
        let p = ReactiveParams::default();
        let c = coeffs(&p);
        let mut lv = IndexLevels::new(100.0).unwrap();
        lv.update(99.0, &c).unwrap();
        let slow = 100.0 * (1.0 - p.lambda_s) + 99.0 * p.lambda_s;
        let fast = 100.0 * (1.0 - p.lambda_f) + 99.0 * p.lambda_f;
        let gap = (fast - 99.0) / fast;
        let expected = 99.0 * (1.0 + filter_phi((slow - 99.0) / 99.0, 3.3)) * (1.0 + 8.0 * gap);
        assert_abs_diff_eq!(lv.reactive, expected, epsilon = 1e-12);
        // Small-gap limit: the panic factor alone moves L/I by ≈ ℓ·1%·(1-λ_f).
        let panic = 1.0 + 8.0 * gap;
        assert_abs_diff_eq!(panic - 1.0, 8.0 * 0.01 * (1.0 - p.lambda_f), epsilon = 1e-3);
        assert!(lv.reactive / lv.price > 1.07);
    }

    #[test]
    fn stock_underperformance_raises_specific_ratio() {
        let p = ReactiveParams::default();
        let c = coeffs(&p);
        let mut ix = IndexLevels::new(100.0).unwrap();
        let mut st = StockLevels::new(100.0, &ix, &c).unwrap();
        ix.update(100.0, &c).unwrap();
        st.update(99.0, &ix, &c).unwrap();
        // The specific factor 1 + F((L_is - S)/S) rises by ≈ 1% · (1 - λ_s).
        let ratio = st.reactive / st.price;
        let slow = 100.0 * (1.0 - p.lambda_s) + 99.0 * p.lambda_s;
        assert_abs_diff_eq!(
            ratio,
            1.0 + filter_phi((slow - 99.0) / 99.0, 3.3),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(ratio - 1.0, 0.01 * (1.0 - p.lambda_s), epsilon = 2e-4);
    }

    #[test]
    fn normalized_return_examples() {
        let p = ReactiveParams::default();
        let rv = ReactiveVolatility::new(&p, 100.0, &[Some(20.0)]).unwrap();
        let (ri, rs) = rv.levels.normalized_returns(101.0, &[Some(20.2)]).unwrap();
        assert_abs_diff_eq!(ri, 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(rs[0].unwrap(), 0.01, epsilon = 1e-15);

        let mut lv = rv.levels.clone();
        lv.index.reactive = 200.0;
        let (ri, _) = lv.normalized_returns(101.0, &[Some(20.0)]).unwrap();
        assert_abs_diff_eq!(ri, 0.005, epsilon = 1e-15);
    }

    /// Independent scalar re-implementation of the level recursion.
    fn brute_force_normalized_stock_returns(
        index: &[f64],
        stock: &[f64],
        p: &ReactiveParams,
    ) -> Vec<f64> {
        let f = |z: f64| (p.phi * z).tanh() / p.phi;
        let (mut ls, mut lf, mut lis) = (index[0], index[0], stock[0]);
        let mut li = stock[0];
        let mut out = Vec::new();
        for t in 1..index.len() {
            out.push((stock[t] - stock[t - 1]) / li);
            ls = (1.0 - p.lambda_s) * ls + p.lambda_s * index[t];
            lf = (1.0 - p.lambda_f) * lf + p.lambda_f * index[t];
            lis = (1.0 - p.lambda_s) * lis + p.lambda_s * stock[t];
            let g = (lf - index[t]) / lf;
            li = stock[t] * (1.0 + f((lis - stock[t]) / stock[t])) * (1.0 + p.ell_prime * g);
        }
        out
    }

    #[test]
    fn normalized_returns_match_brute_force_over_random_path() {
        let p = ReactiveParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (mut i, mut s) = (vec![100.0], vec![30.0]);
        for _ in 0..100 {
            let zi: f64 = StandardNormal.sample(&mut rng);
            let zs: f64 = StandardNormal.sample(&mut rng);
            i.push(i.last().unwrap() * (1.0 + 0.01 * zi));
            s.push(s.last().unwrap() * (1.0 + 0.01 * zi + 0.02 * zs));
        }
        let oracle = brute_force_normalized_stock_returns(&i, &s, &p);
        let mut rv = ReactiveVolatility::new(&p, i[0], &[Some(s[0])]).unwrap();
        for t in 1..i.len() {
            let step = rv.step(i[t], &[Some(s[t])]).unwrap();
            assert_abs_diff_eq!(
                step.tilde_r_stocks[0].unwrap(),
                oracle[t - 1],
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn vol_examples() {
        let p = ReactiveParams::default();
        let c = coeffs(&p);
        // Constant normalized return magnitude: σ̃ → |c|.
        let mut vs = VolState::<f64>::new(1, c.lambda_sigma).unwrap();
        let lv = LevelState::new(10.0, &[Some(10.0)], &c).unwrap();
        for k in 0..2000 {
            let r = if k % 2 == 0 { 0.013 } else { -0.013 };
            vs.update(&lv, r, &[Some(r)]).unwrap();
        }
        assert_abs_diff_eq!(vs.tilde_sigma_index().unwrap(), 0.013, epsilon = 1e-12);

        // L/I = 1.08 with σ̃_I = 0.01 → σ_I = 0.0108.
        let mut lv = lv;
        lv.index.reactive = 10.8;
        let mut vs = VolState::<f64>::new(1, c.lambda_sigma).unwrap();
        vs.update(&lv, 0.01, &[None]).unwrap();
        assert_abs_diff_eq!(vs.sigma_index.unwrap(), 0.0108, epsilon = 1e-15);
    }

    #[test]
    fn normalized_vol_noise_matches_forty_day_window() {
        let c = coeffs(&ReactiveParams::default());
        let lv = LevelState::new(1.0, &[], &c).unwrap();
        let mut vs = VolState::<f64>::new(0, c.lambda_sigma).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let s = 0.02;
        let mut inside = 0;
        let mut counted = 0;
        for k in 0..5000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            vs.update(&lv, s * z, &[]).unwrap();
            if k >= 200 {
                counted += 1;
                let est = vs.tilde_sigma_index().unwrap();
                if (est / s - 1.0).abs() <= 0.16 {
                    inside += 1;
                }
            }
        }
        let frac = inside as f64 / counted as f64;
        assert!(frac > 0.6, "fraction inside ±16%: {frac}");
    }

    #[test]
    fn missing_price_freezes_stock() {
        let p = ReactiveParams::default();
        let mut rv = ReactiveVolatility::new(&p, 100.0, &[Some(10.0), Some(20.0)]).unwrap();
        rv.step(101.0, &[Some(10.1), Some(20.5)]).unwrap();
        let frozen = rv.levels.stocks[1];
        let var_before = rv.vols.tilde_var_stocks[1];
        let step = rv.step(99.0, &[Some(10.0), None]).unwrap();
        assert_eq!(step.missing, vec![1]);
        assert_eq!(step.tilde_r_stocks[1], None);
        assert_eq!(rv.levels.stocks[1], frozen);
        assert_eq!(rv.vols.tilde_var_stocks[1], var_before);
    }

    #[test]
    fn late_listing_is_seeded_on_first_price() {
        let p = ReactiveParams::default();
        let mut rv = ReactiveVolatility::new(&p, 100.0, &[None]).unwrap();
        let s1 = rv.step(100.5, &[Some(7.0)]).unwrap();
        assert_eq!(s1.tilde_r_stocks[0], None);
        assert!(rv.levels.stocks[0].is_some());
        let s2 = rv.step(100.0, &[Some(7.07)]).unwrap();
        assert!(s2.tilde_r_stocks[0].is_some());
    }

    #[test]
    fn non_positive_price_is_domain_error() {
        let p = ReactiveParams::default();
        assert!(matches!(
            ReactiveVolatility::new(&p, 0.0, &[Some(1.0)]),
            Err(Error::Domain(_))
        ));
        let mut rv = ReactiveVolatility::new(&p, 10.0, &[Some(1.0)]).unwrap();
        assert!(matches!(
            rv.step(10.0, &[Some(-1.0)]),
            Err(Error::Domain(_))
        ));
    }

    fn price_path() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-0.05f64..0.05, -0.08f64..0.08), 2..60)
    }

    fn build(moves: &[(f64, f64)], scale_index: f64, scale_stock: f64) -> (Vec<f64>, Vec<f64>) {
        let (mut i, mut s) = (vec![100.0 * scale_index], vec![40.0 * scale_stock]);
        for (a, b) in moves {
            i.push(i.last().unwrap() * (1.0 + a));
            s.push(s.last().unwrap() * (1.0 + b));
        }
        (i, s)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn filter_is_odd_bounded_monotone(z in -50.0f64..50.0, dz in 1e-6f64..1.0, phi in 0.01f64..10.0) {
            let v = filter_phi(z, phi);
            prop_assert!((v + filter_phi(-z, phi)).abs() < 1e-15);
            prop_assert!(v.abs() <= 1.0 / phi + 1e-15);
            prop_assert!(filter_phi(z + dz, phi) >= v);
            let h = 1e-7;
            let slope = (filter_phi(h, phi) - filter_phi(-h, phi)) / (2.0 * h);
            prop_assert!((slope - 1.0).abs() < 1e-6);
        }

        #[test]
        fn scale_invariance(moves in price_path(), k in 0.01f64..100.0) {
            let p = ReactiveParams::default();
            let (i1, s1) = build(&moves, 1.0, 1.0);
            let (i2, s2) = build(&moves, k, k);
            let mut a = ReactiveVolatility::new(&p, i1[0], &[Some(s1[0])]).unwrap();
            let mut b = ReactiveVolatility::new(&p, i2[0], &[Some(s2[0])]).unwrap();
            for t in 1..i1.len() {
                let (sa, sb) = match (a.step(i1[t], &[Some(s1[t])]), b.step(i2[t], &[Some(s2[t])])) {
                    (Ok(x), Ok(y)) => (x, y),
                    (Err(Error::Numerical(_)), Err(Error::Numerical(_))) => break,
                    (x, y) => { prop_assert!(false, "{:?} / {:?}", x.err(), y.err()); unreachable!() }
                };
                let close = |u: f64, v: f64| (u - v).abs() <= 1e-9 * u.abs().max(1.0);
                prop_assert!(close(sa.tilde_r_index, sb.tilde_r_index));
                prop_assert!(close(sa.tilde_r_stocks[0].unwrap(), sb.tilde_r_stocks[0].unwrap()));
                prop_assert!(close(a.index_level_ratio(), b.index_level_ratio()));
                prop_assert!(close(a.stock_level_ratio(0).unwrap(), b.stock_level_ratio(0).unwrap()));
                prop_assert!(close(a.vols.sigma_index.unwrap(), b.vols.sigma_index.unwrap()));
            }
        }

        #[test]
        fn reactive_normalized_identity(moves in price_path()) {
            let p = ReactiveParams::default();
            let (i, s) = build(&moves, 1.0, 1.0);
            let mut rv = ReactiveVolatility::new(&p, i[0], &[Some(s[0])]).unwrap();
            for t in 1..i.len() {
                if rv.step(i[t], &[Some(s[t])]).is_err() { break; }
                let lhs = rv.vols.sigma_index.unwrap() * i[t];
                let rhs = rv.vols.tilde_sigma_index().unwrap() * rv.levels.index.reactive;
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
                let lhs = rv.vols.sigma_stocks[0].unwrap() * s[t];
                let rhs = rv.vols.tilde_sigma_stock(0).unwrap() * rv.levels.stocks[0].unwrap().reactive;
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
            }
        }
    }
}
