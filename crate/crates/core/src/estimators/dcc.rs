//! Bivariate (A)DCC with (GJR-)GARCH(1,1) marginals. Dynamics coefficients
//! are fixed; only the unconditional volatilities and correlation are
//! calibrated, by maximizing an exponentially weighted Gaussian likelihood.

use serde::{Deserialize, Serialize};

use super::WeightedRegressionProblem;
use crate::error::{Error, Result};

const RHO_CLAMP: f64 = 0.999;
const VAR_FLOOR: f64 = 1e-12;
const DAYS_PER_YEAR: f64 = 255.0;

/// Which shocks feed the asymmetric terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsymmetrySide {
    /// `ξ⁻ = ξ` when `ξ < 0`: the usual leverage story.
    #[default]
    Negative,
    /// `ξ⁻ = ξ` when `ξ > 0`.
    Positive,
}

impl AsymmetrySide {
    fn part(self, xi: f64) -> f64 {
        match self {
            AsymmetrySide::Negative if xi < 0.0 => xi,
            AsymmetrySide::Positive if xi > 0.0 => xi,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    /// Daily unconditional volatility.
    pub unconditional_sigma: f64,
}

impl GarchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::Config(
                "GARCH coefficients must be non-negative".into(),
            ));
        }
        if !(self.a + self.b + self.gamma / 2.0 < 1.0) {
            return Err(Error::Config(
                "GARCH process is not stationary (a + b + γ/2 ≥ 1)".into(),
            ));
        }
        if !(self.unconditional_sigma > 0.0 && self.unconditional_sigma.is_finite()) {
            return Err(Error::Config(
                "unconditional volatility must be positive".into(),
            ));
        }
        Ok(())
    }

    fn intercept(&self) -> f64 {
        (1.0 - self.a - self.b - self.gamma / 2.0) * self.unconditional_sigma.powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DccParams {
    pub a_rho: f64,
    pub b_rho: f64,
    pub gamma_rho: f64,
    pub rho_bar: f64,
}

impl DccParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_rho >= 0.0 && self.b_rho >= 0.0 && self.gamma_rho >= 0.0) {
            return Err(Error::Config(
                "correlation coefficients must be non-negative".into(),
            ));
        }
        // The diagonal intercept subtracts γ_ρ/2, the stricter of the two.
        if !(self.a_rho + self.b_rho + self.gamma_rho / 2.0 < 1.0) {
            return Err(Error::Config(
                "correlation process is not stationary".into(),
            ));
        }
        if !(self.rho_bar.abs() < 1.0) {
            return Err(Error::Config(
                "unconditional correlation must lie in (-1, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Complete specification of the bivariate process: stock marginal, index
/// marginal and correlation dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DccModel {
    pub stock: GarchParams,
    pub index: GarchParams,
    pub corr: DccParams,
    #[serde(default)]
    pub asymmetry: AsymmetrySide,
}

impl DccModel {
    /// Symmetric GARCH-DCC with the published US-market coefficients and
    /// the simulation study's unconditional levels.
    pub fn symmetric() -> Self {
        let g = |s: f64| GarchParams {
            a: 0.099,
            b: 0.89,
            gamma: 0.0,
            unconditional_sigma: s,
        };
        Self {
            stock: g(0.4 / DAYS_PER_YEAR.sqrt()),
            index: g(0.15 / DAYS_PER_YEAR.sqrt()),
            corr: DccParams {
                a_rho: 0.0079,
                b_rho: 0.9261,
                gamma_rho: 0.0,
                rho_bar: 0.15 / 0.4,
            },
            asymmetry: AsymmetrySide::default(),
        }
    }

    /// Asymmetric GJR-GARCH / ADCC counterpart.
    pub fn asymmetric() -> Self {
        let g = |s: f64| GarchParams {
            a: 0.0,
            b: 0.901,
            gamma: 0.171,
            unconditional_sigma: s,
        };
        Self {
            stock: g(0.4 / DAYS_PER_YEAR.sqrt()),
            index: g(0.15 / DAYS_PER_YEAR.sqrt()),
            corr: DccParams {
                a_rho: 0.0020,
                b_rho: 0.9512,
                gamma_rho: 0.0040,
                rho_bar: 0.15 / 0.4,
            },
            asymmetry: AsymmetrySide::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stock.validate()?;
        self.index.validate()?;
        self.corr.validate()
    }

    pub fn with_unconditionals(mut self, sigma_i: f64, sigma_index: f64, rho_bar: f64) -> Self {
        self.stock.unconditional_sigma = sigma_i;
        self.index.unconditional_sigma = sigma_index;
        self.corr.rho_bar = rho_bar;
        self
    }

    /// State at the unconditional values.
    pub fn initial_state(&self) -> DccState {
        let rho = self.corr.rho_bar.clamp(-RHO_CLAMP, RHO_CLAMP);
        DccState {
            sigma_i: self.stock.unconditional_sigma,
            sigma_index: self.index.unconditional_sigma,
            q_ii: 1.0,
            q_index: 1.0,
            q_cross: self.corr.rho_bar,
            rho,
            beta: rho * self.stock.unconditional_sigma / self.index.unconditional_sigma,
            floored: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DccState {
    pub sigma_i: f64,
    pub sigma_index: f64,
    pub q_ii: f64,
    pub q_index: f64,
    pub q_cross: f64,
    pub rho: f64,
    pub beta: f64,
    /// Set once a conditional variance hit its floor.
    pub floored: bool,
}

fn garch_update(g: &GarchParams, prev_var: f64, xi: f64, xi_asym: f64) -> (f64, bool) {
    let v = g.intercept()
        + g.a * prev_var * xi * xi
        + g.b * prev_var
        + g.gamma * prev_var * xi_asym * xi_asym;
    let floor = VAR_FLOOR * g.unconditional_sigma.powi(2);
    if v < floor {
        (floor, true)
    } else {
        (v, false)
    }
}

/// Advance one day with the observed returns. Returns the new state and the
/// standardized shocks `ξ = r / σ(t-1)`.
pub fn dcc_step(state: &DccState, r_i: f64, r_index: f64, m: &DccModel) -> (DccState, f64, f64) {
    let xi_i = r_i / state.sigma_i;
    let xi_x = r_index / state.sigma_index;
    let (ai, ax) = (m.asymmetry.part(xi_i), m.asymmetry.part(xi_x));
    let (var_i, fi) = garch_update(&m.stock, state.sigma_i.powi(2), xi_i, ai);
    let (var_x, fx) = garch_update(&m.index, state.sigma_index.powi(2), xi_x, ax);

    let c = &m.corr;
    let diag = 1.0 - c.a_rho - c.b_rho - c.gamma_rho / 2.0;
    let q_ii = diag + c.a_rho * xi_i * xi_i + c.b_rho * state.q_ii + c.gamma_rho * ai * ai;
    let q_index = diag + c.a_rho * xi_x * xi_x + c.b_rho * state.q_index + c.gamma_rho * ax * ax;
    let q_cross = (1.0 - c.a_rho - c.b_rho - c.gamma_rho / 4.0) * c.rho_bar
        + c.a_rho * xi_i * xi_x
        + c.b_rho * state.q_cross
        + c.gamma_rho * ai * ax;
    let rho = (q_cross / (q_ii * q_index).sqrt()).clamp(-RHO_CLAMP, RHO_CLAMP);
    let (sigma_i, sigma_index) = (var_i.sqrt(), var_x.sqrt());
    (
        DccState {
            sigma_i,
            sigma_index,
            q_ii,
            q_index,
            q_cross,
            rho,
            beta: rho * sigma_i / sigma_index,
            floored: state.floored || fi || fx,
        },
        xi_i,
        xi_x,
    )
}

/// Exponentially weighted bivariate Gaussian log-likelihood of the returns,
/// each observation evaluated with the previous day's volatilities and
/// correlation. Weights are `(1-λ)^(T-t)`.
pub fn dcc_log_likelihood(p: &WeightedRegressionProblem, m: &DccModel) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut s = m.initial_state();
    let mut ll = 0.0;
    for ((w, ri), rx) in p.weights().iter().zip(&p.y).zip(&p.x) {
        let prev = s;
        let (next, xi_i, xi_x) = dcc_step(&prev, *ri, *rx, m);
        let one_m = 1.0 - prev.rho * prev.rho;
        let quad = (xi_i * xi_i - 2.0 * prev.rho * xi_i * xi_x + xi_x * xi_x) / one_m;
        ll += w
            * (-ln2pi - prev.sigma_i.ln() - prev.sigma_index.ln() - 0.5 * one_m.ln() - 0.5 * quad);
        s = next;
    }
    ll
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DccCalibration {
    pub sigma_bar_i: f64,
    pub sigma_bar_index: f64,
    pub rho_bar: f64,
    pub log_likelihood: f64,
    pub evaluations: usize,
    pub converged: bool,
}

const MIN_CALIBRATION_LEN: usize = 100;
const EVAL_BUDGET: usize = 10_000;

fn to_params(v: &[f64; 3]) -> (f64, f64, f64) {
    (v[0].exp(), v[1].exp(), RHO_CLAMP * v[2].tanh())
}

/// Maximize the weighted likelihood over `(σ̄_i, σ̄_I, ρ̄)` with the dynamics
/// of `base` held fixed. Pattern search in `(ln σ̄_i, ln σ̄_I, atanh(ρ̄/0.999))`
/// from weighted data moments.
pub fn dcc_calibrate(p: &WeightedRegressionProblem, base: &DccModel) -> Result<DccCalibration> {
    if p.len() < MIN_CALIBRATION_LEN {
        return Err(Error::InsufficientData {
            needed: MIN_CALIBRATION_LEN,
            got: p.len(),
        });
    }
    base.validate()?;
    let w = p.weights();
    let sw: f64 = w.iter().sum();
    let m2 = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .zip(w)
            .map(|((u, v), w)| w * u * v)
            .sum::<f64>()
            / sw
    };
    let (vi, vx, cx) = (m2(&p.y, &p.y), m2(&p.x, &p.x), m2(&p.y, &p.x));
    if !(vi > 0.0 && vx > 0.0) {
        return Err(Error::Numerical(
            "zero return variance; likelihood is unbounded".into(),
        ));
    }
    let rho0 = (cx / (vi * vx).sqrt()).clamp(-0.99 * RHO_CLAMP, 0.99 * RHO_CLAMP);

    let evals = std::cell::Cell::new(0usize);
    let eval = |v: &[f64; 3]| {
        evals.set(evals.get() + 1);
        let (si, sx, r) = to_params(v);
        let ll = dcc_log_likelihood(p, &base.with_unconditionals(si, sx, r));
        if ll.is_finite() {
            ll
        } else {
            f64::NEG_INFINITY
        }
    };

    let mut x = [0.5 * vi.ln(), 0.5 * vx.ln(), (rho0 / RHO_CLAMP).atanh()];
    let mut best = eval(&x);
    let mut step = [0.2, 0.2, 0.2];
    let tol = 1e-8;
    let mut converged = false;
    'outer: loop {
        let mut moved = false;
        for k in 0..3 {
            for dir in [1.0, -1.0] {
                let mut y = x;
                y[k] += dir * step[k];
                let v = eval(&y);
                if v > best + tol * 1e-3 {
                    // Keep stepping while it pays off.
                    let mut cur = (y, v);
                    loop {
                        let mut z = cur.0;
                        z[k] += dir * step[k];
                        let vz = eval(&z);
                        if vz > cur.1 {
                            cur = (z, vz);
                        } else {
                            break;
                        }
                    }
                    x = cur.0;
                    best = cur.1;
                    moved = true;
                    break;
                }
            }
        }
        if !moved {
            for s in step.iter_mut() {
                *s *= 0.5;
            }
            if step.iter().all(|s| *s < tol) {
                converged = true;
                break 'outer;
            }
        }
        if evals.get() >= EVAL_BUDGET {
            break;
        }
    }
    let (sigma_bar_i, sigma_bar_index, rho_bar) = to_params(&x);
    Ok(DccCalibration {
        sigma_bar_i,
        sigma_bar_index,
        rho_bar,
        log_likelihood: best,
        evaluations: evals.get(),
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DccFit {
    pub calibration: DccCalibration,
    pub state: DccState,
    pub beta: f64,
}

/// Calibrate, run the filter over the full path and return the conditional
/// beta after the last observation.
pub fn dcc_beta(p: &WeightedRegressionProblem, base: &DccModel) -> Result<DccFit> {
    let calibration = dcc_calibrate(p, base)?;
    let m = base.with_unconditionals(
        calibration.sigma_bar_i,
        calibration.sigma_bar_index,
        calibration.rho_bar,
    );
    let mut s = m.initial_state();
    for (ri, rx) in p.y.iter().zip(&p.x) {
        s = dcc_step(&s, *ri, *rx, &m).0;
    }
    if !s.beta.is_finite() {
        return Err(Error::Numerical("non-finite conditional beta".into()));
    }
    Ok(DccFit {
        calibration,
        state: s,
        beta: s.beta,
    })
}
