//! Seven simulated markets with known conditional betas.
//!
//! * MC1/MC2: constant-beta market model, Gaussian or Student-t residuals.
//! * MC3/MC4: reduced reactive model; normalized returns with unit normalized
//!   beta are mapped to prices through the slow levels only.
//! * MC5: full reactive model with stochastic normalized volatilities and a
//!   normalized beta driven by the two correction factors.
//! * MC6/MC7: bivariate DCC and ADCC-GJR processes.
//!
//! Each path draws from its own ChaCha stream keyed by `(seed, path_id)`, so
//! paths are reproducible regardless of how they are scheduled.

use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta::correction_l;
use crate::error::{Error, Result};
use crate::estimators::{dcc_step, AsymmetrySide, DccModel};
use crate::volatility::{Coeffs, IndexLevels, ReactiveParams, StockLevels};

const MAX_REDRAWS: usize = 1000;
const INITIAL_INDEX: f64 = 100.0;
const INITIAL_STOCK: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McModel {
    Mc1,
    Mc2,
    Mc3,
    Mc4,
    Mc5,
    Mc6,
    Mc7,
}

impl McModel {
    pub const ALL: [McModel; 7] = [
        McModel::Mc1,
        McModel::Mc2,
        McModel::Mc3,
        McModel::Mc4,
        McModel::Mc5,
        McModel::Mc6,
        McModel::Mc7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            McModel::Mc1 => "mc1",
            McModel::Mc2 => "mc2",
            McModel::Mc3 => "mc3",
            McModel::Mc4 => "mc4",
            McModel::Mc5 => "mc5",
            McModel::Mc6 => "mc6",
            McModel::Mc7 => "mc7",
        }
    }

    /// Whether the residuals are Student-t.
    pub fn heavy_tailed(self) -> bool {
        matches!(self, McModel::Mc2 | McModel::Mc4 | McModel::Mc5)
    }
}

impl std::fmt::Display for McModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for McModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model '{s}' (expected mc1..mc7)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub model: McModel,
    /// Returns per path.
    pub path_len: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Annualized unconditional stock volatility.
    pub stock_vol: f64,
    /// Annualized unconditional index volatility.
    pub index_vol: f64,
    pub t_dof: f64,
    pub ou_relaxation: f64,
    pub ou_volvol: f64,
    pub annualization: f64,
    /// Level dynamics and correction factors for MC3 to MC5.
    pub reactive: ReactiveParams,
    /// Which shocks feed the ADCC asymmetry in MC7.
    pub asymmetry: AsymmetrySide,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            model: McModel::Mc1,
            path_len: 1000,
            n_paths: 30_000,
            seed: 0,
            stock_vol: 0.4,
            index_vol: 0.15,
            t_dof: 3.0,
            ou_relaxation: 100.0,
            ou_volvol: 0.04,
            annualization: 255.0,
            reactive: ReactiveParams::default(),
            asymmetry: AsymmetrySide::default(),
        }
    }
}

impl McConfig {
    pub fn new(model: McModel, path_len: usize, n_paths: usize, seed: u64) -> Self {
        Self {
            model,
            path_len,
            n_paths,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.path_len < 2 {
            return Err(Error::Config("path length must be at least 2".into()));
        }
        if !(self.stock_vol > self.index_vol && self.index_vol > 0.0) {
            return Err(Error::Config(
                "volatilities must satisfy stock_vol > index_vol > 0 for a unit beta".into(),
            ));
        }
        if !(self.t_dof > 2.0) {
            return Err(Error::Config(format!(
                "t_dof must exceed 2, got {}",
                self.t_dof
            )));
        }
        if !(self.ou_relaxation > 1.0 && self.ou_volvol >= 0.0) {
            return Err(Error::Config(
                "OU relaxation must exceed one day and vol-of-vol be >= 0".into(),
            ));
        }
        if !(self.annualization > 0.0) {
            return Err(Error::Config("annualization must be positive".into()));
        }
        self.reactive.validate()
    }

    /// Daily index volatility.
    pub fn daily_index_vol(&self) -> f64 {
        self.index_vol / self.annualization.sqrt()
    }

    /// Daily residual volatility making the total stock volatility hit its
    /// target with unit beta.
    pub fn daily_residual_vol(&self) -> f64 {
        (self.stock_vol.powi(2) - self.index_vol.powi(2)).sqrt() / self.annualization.sqrt()
    }

    pub fn dcc_model(&self) -> DccModel {
        let base = match self.model {
            McModel::Mc7 => DccModel::asymmetric(),
            _ => DccModel::symmetric(),
        };
        let ann = self.annualization.sqrt();
        DccModel {
            asymmetry: self.asymmetry,
            ..base.with_unconditionals(
                self.stock_vol / ann,
                self.index_vol / ann,
                self.index_vol / self.stock_vol,
            )
        }
    }
}

/// One simulated path. Index `t` of every track refers to the end of day
/// `t + 1`; the true quantities are conditional on information up to then
/// and govern the following return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPath {
    pub path_id: u64,
    pub r_index: Vec<f64>,
    pub r_stock: Vec<f64>,
    /// Prices including the initial one (`len + 1` entries).
    pub index_prices: Vec<f64>,
    pub stock_prices: Vec<f64>,
    pub true_beta: Vec<f64>,
    pub true_rho: Vec<f64>,
    pub true_sigma_index: Vec<f64>,
    pub true_sigma_stock: Vec<f64>,
    /// Number of steps redrawn because they produced an invalid price or level.
    pub redraws: usize,
}

impl McPath {
    fn with_capacity(path_id: u64, n: usize) -> Self {
        Self {
            path_id,
            r_index: Vec::with_capacity(n),
            r_stock: Vec::with_capacity(n),
            index_prices: vec![INITIAL_INDEX],
            stock_prices: vec![INITIAL_STOCK],
            true_beta: Vec::with_capacity(n),
            true_rho: Vec::with_capacity(n),
            true_sigma_index: Vec::with_capacity(n),
            true_sigma_stock: Vec::with_capacity(n),
            redraws: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.r_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_index.is_empty()
    }

    /// Conditional beta after the last observation.
    pub fn final_true_beta(&self) -> f64 {
        *self.true_beta.last().expect("non-empty path")
    }

    fn push(
        &mut self,
        r_index: f64,
        r_stock: f64,
        beta: f64,
        rho: f64,
        sig_index: f64,
        sig_stock: f64,
    ) {
        let (i, s) = (
            *self.index_prices.last().unwrap(),
            *self.stock_prices.last().unwrap(),
        );
        self.index_prices.push(i * (1.0 + r_index));
        self.stock_prices.push(s * (1.0 + r_stock));
        self.r_index.push(r_index);
        self.r_stock.push(r_stock);
        self.true_beta.push(beta);
        self.true_rho.push(rho);
        self.true_sigma_index.push(sig_index);
        self.true_sigma_stock.push(sig_stock);
    }
}

/// Student-t draw rescaled to standard deviation `target_std`.
pub fn student_t_scaled<R: Rng + ?Sized>(dof: f64, target_std: f64, rng: &mut R) -> Result<f64> {
    if !(dof > 2.0) {
        return Err(Error::Config(format!(
            "Student-t needs dof > 2 for a finite variance, got {dof}"
        )));
    }
    let t = StudentT::new(dof).map_err(|e| Error::Config(e.to_string()))?;
    Ok(t.sample(rng) * ((dof - 2.0) / dof).sqrt() * target_std)
}

/// Daily Euler step of a zero-mean Ornstein-Uhlenbeck process.
pub fn ou_step<R: Rng + ?Sized>(x: f64, relaxation_days: f64, volvol: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    x * (1.0 - 1.0 / relaxation_days) + volvol * z
}

/// Stationary standard deviation of the discrete process in [`ou_step`].
pub fn ou_stationary_std(relaxation_days: f64, volvol: f64) -> f64 {
    let a = 1.0 - 1.0 / relaxation_days;
    volvol / (1.0 - a * a).sqrt()
}

/// Random source for one path.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

struct Draws<'a> {
    cfg: &'a McConfig,
    rng: ChaCha8Rng,
}

impl Draws<'_> {
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn residual(&mut self, std: f64) -> Result<f64> {
        if self.cfg.model.heavy_tailed() {
            student_t_scaled(self.cfg.t_dof, std, &mut self.rng)
        } else {
            Ok(std * self.normal())
        }
    }
}

fn too_many_redraws(model: McModel) -> Error {
    Error::Numerical(format!(
        "{model}: could not draw a valid step after {MAX_REDRAWS} attempts"
    ))
}

fn generate_market(cfg: &McConfig, d: &mut Draws, path: &mut McPath) -> Result<()> {
    let (s_i, s_e) = (cfg.daily_index_vol(), cfg.daily_residual_vol());
    let sig_stock = (s_i * s_i + s_e * s_e).sqrt();
    for _ in 0..cfg.path_len {
        let mut attempts = 0;
        let (ri, rs) = loop {
            let ri = s_i * d.normal();
            let rs = ri + d.residual(s_e)?;
            if ri > -1.0 && rs > -1.0 {
                break (ri, rs);
            }
            attempts += 1;
            path.redraws += 1;
            if attempts >= MAX_REDRAWS {
                return Err(too_many_redraws(cfg.model));
            }
        };
        path.push(ri, rs, 1.0, s_i / sig_stock, s_i, sig_stock);
    }
    Ok(())
}

/// Levels plus the generator's own state for the reactive models.
#[derive(Clone)]
struct ReactiveGen {
    index: IndexLevels<f64>,
    stock: StockLevels<f64>,
    x_index: f64,
    x_rel: f64,
    kappa: Option<f64>,
    tilde_beta: f64,
}

fn generate_reactive(cfg: &McConfig, d: &mut Draws, path: &mut McPath) -> Result<()> {
    let full = cfg.model == McModel::Mc5;
    let params = if full {
        cfg.reactive
    } else {
        // Reduced model: slow levels only, no filter and no panic term.
        ReactiveParams {
            phi: 0.0,
            ell: 0.0,
            ell_prime: 0.0,
            ..cfg.reactive
        }
    };
    let c = Coeffs::<f64>::new(&params)?;
    let (sbar_i, sbar_e) = (cfg.daily_index_vol(), cfg.daily_residual_vol());
    let ou_std = ou_stationary_std(cfg.ou_relaxation, cfg.ou_volvol);
    let index = IndexLevels::new(INITIAL_INDEX)?;
    let mut st = ReactiveGen {
        stock: StockLevels::new(INITIAL_STOCK, &index, &c)?,
        index,
        x_index: if full { ou_std * d.normal() } else { 0.0 },
        x_rel: if full { ou_std * d.normal() } else { 0.0 },
        kappa: None,
        tilde_beta: 1.0,
    };
    let vols = |st: &ReactiveGen| {
        (
            sbar_i * st.x_index.exp(),
            sbar_e * (st.x_index + st.x_rel).exp(),
        )
    };
    let lam_beta = params.lambda_beta;
    let ell_diff = params.ell_diff();
    let elasticity_gain = 2.0 * crate::beta::elasticity_f(1.0, &params);

    for _ in 0..cfg.path_len {
        let (s_i, s_e) = vols(&st);
        let mut attempts = 0;
        let next = loop {
            let rt_i = s_i * d.normal();
            let rt_s = st.tilde_beta * rt_i + d.residual(s_e)?;
            let di = rt_i * st.index.reactive;
            let ds = rt_s * st.stock.reactive;
            let (ni, ns) = (st.index.price + di, st.stock.price + ds);
            let mut cand = st.clone();
            if ni > 0.0
                && ns > 0.0
                && cand.index.update(ni, &c).is_ok()
                && cand.stock.update(ns, &cand.index, &c).is_ok()
            {
                break (cand, di / st.index.price, ds / st.stock.price);
            }
            attempts += 1;
            path.redraws += 1;
            if attempts >= MAX_REDRAWS {
                return Err(too_many_redraws(cfg.model));
            }
        };
        let (mut cand, ri, rs) = next;
        if full {
            cand.x_index = ou_step(cand.x_index, cfg.ou_relaxation, cfg.ou_volvol, &mut d.rng);
            cand.x_rel = ou_step(cand.x_rel, cfg.ou_relaxation, cfg.ou_volvol, &mut d.rng);
            let (s_i, s_e) = vols(&cand);
            let rel = (1.0 + (s_e / s_i).powi(2)).sqrt();
            let f_corr = match cand.kappa {
                Some(k) => {
                    let sk = k.sqrt();
                    1.0 + elasticity_gain * (rel - sk) / sk
                }
                None => 1.0,
            };
            cand.kappa = Some(match cand.kappa {
                Some(k) => (1.0 - lam_beta) * k + lam_beta * rel * rel,
                None => rel * rel,
            });
            let l_corr = correction_l(cand.index.systematic_gap(), ell_diff);
            cand.tilde_beta = f_corr * l_corr;
        }
        st = cand;
        let (s_i, s_e) = vols(&st);
        let idx_ratio = st.index.reactive / st.index.price;
        let stock_ratio = st.stock.reactive / st.stock.price;
        let tilde_total = (st.tilde_beta.powi(2) * s_i * s_i + s_e * s_e).sqrt();
        path.push(
            ri,
            rs,
            st.tilde_beta * stock_ratio / idx_ratio,
            st.tilde_beta * s_i / tilde_total,
            s_i * idx_ratio,
            tilde_total * stock_ratio,
        );
    }
    Ok(())
}

fn generate_dcc(cfg: &McConfig, d: &mut Draws, path: &mut McPath) -> Result<()> {
    let m = cfg.dcc_model();
    m.validate()?;
    let mut s = m.initial_state();
    for _ in 0..cfg.path_len {
        let mut attempts = 0;
        let (ri, rs) = loop {
            let zx = d.normal();
            let z = d.normal();
            let zi = s.rho * zx + (1.0 - s.rho * s.rho).sqrt() * z;
            let (ri, rs) = (s.sigma_index * zx, s.sigma_i * zi);
            if ri > -1.0 && rs > -1.0 {
                break (ri, rs);
            }
            attempts += 1;
            path.redraws += 1;
            if attempts >= MAX_REDRAWS {
                return Err(too_many_redraws(cfg.model));
            }
        };
        s = dcc_step(&s, rs, ri, &m).0;
        path.push(ri, rs, s.beta, s.rho, s.sigma_index, s.sigma_i);
    }
    Ok(())
}

/// Generate one path.
pub fn generate_path(cfg: &McConfig, path_id: u64) -> Result<McPath> {
    cfg.validate()?;
    let mut d = Draws {
        cfg,
        rng: path_rng(cfg.seed, path_id),
    };
    let mut path = McPath::with_capacity(path_id, cfg.path_len);
    match cfg.model {
        McModel::Mc1 | McModel::Mc2 => generate_market(cfg, &mut d, &mut path)?,
        McModel::Mc3 | McModel::Mc4 | McModel::Mc5 => generate_reactive(cfg, &mut d, &mut path)?,
        McModel::Mc6 | McModel::Mc7 => generate_dcc(cfg, &mut d, &mut path)?,
    }
    Ok(path)
}

/// Generate every path of the configuration in parallel.
pub fn generate(cfg: &McConfig) -> Result<Vec<McPath>> {
    cfg.validate()?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|id| generate_path(cfg, id))
        .collect()
}

/// Header of the path dump format.
pub const PATH_DUMP_HEADER: [&str; 8] = [
    "path_id",
    "t",
    "r_I",
    "r_i",
    "true_beta",
    "true_rho",
    "true_sigma_I",
    "true_sigma_i",
];

/// Write paths as one CSV record per day with [`PATH_DUMP_HEADER`]; `t`
/// starts at 1 for the first return.
pub fn write_path_dump<W: Write>(out: W, paths: &[McPath]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PATH_DUMP_HEADER)?;
    for p in paths {
        for t in 0..p.len() {
            w.write_record(&[
                p.path_id.to_string(),
                (t + 1).to_string(),
                p.r_index[t].to_string(),
                p.r_stock[t].to_string(),
                p.true_beta[t].to_string(),
                p.true_rho[t].to_string(),
                p.true_sigma_index[t].to_string(),
                p.true_sigma_stock[t].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
