//! Configuration, CSV ingestion and report output for the command-line tool.
//!
//! Price panels are CSV files with a `date` column followed by one column
//! per ticker. Empty cells, `NA` and `NaN` are missing observations. Dates
//! are ISO `YYYY-MM-DD` and must be strictly increasing.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::estimators::EstimatorKind;
use crate::evaluation::SelectionBiasInputs;
use crate::experiment::{ExperimentConfig, Table2Report};
use crate::montecarlo::McConfig;
use crate::strategies::{
    BetaSource, Stock, StrategyKind, SyntheticUniverseConfig, Universe, SUPERSECTORS,
};
use crate::volatility::{ReactiveParams, DEFAULT_BURN_IN};

/// Everything a run needs. Every section has defaults, so an empty file is
/// a valid configuration that runs the default model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub burn_in: usize,
    /// Parameters of the reactive estimator.
    pub reactive: ReactiveParams,
    pub estimate: EstimateSection,
    pub simulate: SimulateSection,
    pub backtest: BacktestSection,
    pub selection_bias: SelectionBiasInputs,
    pub calibrate_ell: CalibrateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            burn_in: DEFAULT_BURN_IN,
            reactive: ReactiveParams::default(),
            estimate: EstimateSection::default(),
            simulate: SimulateSection::default(),
            backtest: BacktestSection::default(),
            selection_bias: SelectionBiasInputs::default(),
            calibrate_ell: CalibrateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub prices: Option<PathBuf>,
    pub index_column: String,
    pub estimators: Vec<EstimatorKind>,
    /// Trailing observations fed to the window-based estimators.
    pub window: usize,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            prices: None,
            index_column: "index".into(),
            estimators: vec![EstimatorKind::Ols, EstimatorKind::Reactive],
            window: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Generator settings; the run seed replaces `mc.seed`.
    pub mc: McConfig,
    pub estimators: Vec<EstimatorKind>,
    pub dump_paths: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            mc: McConfig {
                n_paths: 2000,
                ..McConfig::default()
            },
            estimators: EstimatorKind::ALL.to_vec(),
            dump_paths: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSection {
    /// Price panel; a synthetic universe is generated when absent.
    pub prices: Option<PathBuf>,
    /// Capitalization panel with the same layout as the prices.
    pub caps: Option<PathBuf>,
    /// Two-column `ticker,supersector` file.
    pub sectors: Option<PathBuf>,
    pub index_column: String,
    pub strategies: Vec<StrategyKind>,
    pub beta_sources: Vec<BetaSource>,
    pub quantile: Option<f64>,
    pub low_vol_long_high_beta: bool,
    /// Also run the low-volatility factor with the opposite orientation.
    pub both_orientations: bool,
    pub write_weights: bool,
    pub synthetic: SyntheticUniverseConfig,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            prices: None,
            caps: None,
            sectors: None,
            index_column: "index".into(),
            strategies: StrategyKind::ALL.to_vec(),
            beta_sources: BetaSource::ALL.to_vec(),
            quantile: None,
            low_vol_long_high_beta: true,
            both_orientations: true,
            write_weights: false,
            synthetic: SyntheticUniverseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    /// CSV with a date column, a correlation column and either a leverage
    /// factor column or an index price column.
    pub input: Option<PathBuf>,
    pub correlation_column: String,
    pub leverage_column: String,
    pub index_column: String,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            input: None,
            correlation_column: "correlation".into(),
            leverage_column: "leverage".into(),
            index_column: "index".into(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks shared by every command. Command-specific inputs are checked
    /// when the command runs.
    pub fn validate(&self) -> Result<()> {
        self.reactive.validate()?;
        self.simulate.mc.reactive.validate()?;
        self.backtest.synthetic.reactive.validate()?;
        if self.estimate.window < 2 {
            return Err(Error::Config("estimate.window must be at least 2".into()));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            mc: McConfig {
                seed: self.seed,
                ..self.simulate.mc.clone()
            },
            estimators: self.simulate.estimators.clone(),
            reactive: self.reactive,
            burn_in: self.burn_in,
        }
    }
}

/// Dated columns read from a CSV panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl Panel {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    fn required(&self, name: &str) -> Result<&[Option<f64>]> {
        self.column(name)
            .map(|i| self.values[i].as_slice())
            .ok_or_else(|| invalid(format!("missing column '{name}'")))
    }

    /// A column that must be complete.
    pub fn dense(&self, name: &str) -> Result<Vec<f64>> {
        self.required(name)?
            .iter()
            .enumerate()
            .map(|(row, v)| {
                v.ok_or_else(|| Error::Parse {
                    line: row + 2,
                    message: format!("missing value in '{name}'"),
                })
            })
            .collect()
    }
}

fn parse_cell(cell: &str) -> std::result::Result<Option<f64>, String> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map_err(|_| format!("'{cell}' is not a number"))
        .and_then(|v| {
            if v.is_finite() {
                Ok(Some(v))
            } else {
                Err(format!("'{cell}' is not finite"))
            }
        })
}

pub fn read_panel<R: Read>(reader: R) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(invalid("empty file"));
    }
    if !headers[0].eq_ignore_ascii_case("date") {
        return Err(Error::Parse {
            line: 1,
            message: format!("first column must be 'date', found '{}'", &headers[0]),
        });
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    if columns.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data columns".into(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for c in &columns {
        if !seen.insert(c.to_ascii_lowercase()) {
            return Err(Error::Parse {
                line: 1,
                message: format!("duplicate column '{c}'"),
            });
        }
    }
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut values = vec![Vec::new(); columns.len()];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse { line, message };
        if record.len() != columns.len() + 1 {
            return Err(err(format!(
                "expected {} fields, found {}",
                columns.len() + 1,
                record.len()
            )));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|_| err(format!("unparseable date '{}'", &record[0])))?;
        if let Some(prev) = dates.last() {
            if date == *prev {
                return Err(err(format!("duplicate date {date}")));
            }
            if date < *prev {
                return Err(err(format!(
                    "date {date} is earlier than the previous row ({prev})"
                )));
            }
        }
        dates.push(date);
        for (j, cell) in record.iter().skip(1).enumerate() {
            values[j]
                .push(parse_cell(cell).map_err(|m| err(format!("column '{}': {m}", columns[j])))?);
        }
    }
    if dates.is_empty() {
        return Err(invalid("no data rows"));
    }
    Ok(Panel {
        dates,
        columns,
        values,
    })
}

pub fn read_panel_file(path: &Path) -> Result<Panel> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_panel(file).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Read a `ticker,supersector` file; supersectors are integers `0..6`.
pub fn read_sectors<R: Read>(reader: R) -> Result<HashMap<String, usize>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: "expected ticker,supersector".into(),
            });
        }
        let sector: usize = record[1]
            .parse()
            .ok()
            .filter(|s| *s < SUPERSECTORS)
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("supersector must be an integer in 0..{SUPERSECTORS}"),
            })?;
        if out.insert(record[0].to_owned(), sector).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate ticker '{}'", &record[0]),
            });
        }
    }
    Ok(out)
}

/// Assemble a universe from a price panel. Supersectors come from `sectors`
/// when given, otherwise from capitalization rank on the first day, and
/// otherwise by dealing tickers in column order.
pub fn build_universe(
    prices: &Panel,
    index_column: &str,
    caps: Option<&Panel>,
    sectors: Option<&HashMap<String, usize>>,
) -> Result<Universe> {
    let index = prices.dense(index_column)?;
    if let Some(c) = caps {
        if c.dates != prices.dates {
            return Err(invalid("capitalization dates do not match the price dates"));
        }
    }
    let mut stocks = Vec::new();
    for (j, ticker) in prices.columns.iter().enumerate() {
        if ticker.eq_ignore_ascii_case(index_column) {
            continue;
        }
        let supersector = match sectors {
            Some(map) => *map
                .get(ticker)
                .ok_or_else(|| invalid(format!("no supersector for '{ticker}'")))?,
            None => stocks.len() % SUPERSECTORS,
        };
        let caps = match caps {
            Some(c) => Some(c.required(ticker)?.to_vec()),
            None => None,
        };
        stocks.push(Stock {
            ticker: ticker.clone(),
            prices: prices.values[j].clone(),
            caps,
            supersector,
        });
    }
    if stocks.is_empty() {
        return Err(invalid("price file has no stock columns"));
    }
    let dates = prices.dates.iter().map(|d| d.to_string()).collect();
    let mut universe = Universe::new(dates, index, stocks)?;
    if sectors.is_none() && caps.is_some() {
        let first = (0..universe.n_days())
            .find(|&d| {
                universe
                    .stocks
                    .iter()
                    .all(|s| s.caps.as_ref().is_some_and(|c| c[d].is_some()))
            })
            .ok_or_else(|| invalid("no day with capitalization for every stock"))?;
        universe.assign_supersectors_by_cap(first)?;
    }
    Ok(universe)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One CSV row per estimator with the table's columns; undefined cells are
/// left empty and significant biases carry a trailing `*`.
pub fn write_table2_csv<W: Write>(out: W, report: &Table2Report) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model",
        "estimator",
        "n",
        "failures",
        "bias",
        "winner_bias",
        "loser_bias",
        "low_bias",
        "high_bias",
        "absd",
        "variance_ratio",
    ])?;
    let cell = |c: Option<&crate::evaluation::BiasCell>| {
        c.map_or(String::new(), |c| {
            format!("{:.4}{}", c.value, if c.significant { "*" } else { "" })
        })
    };
    for row in &report.rows {
        let mut rec = vec![report.model.clone(), row.estimator.to_string()];
        match &row.stats {
            Some(s) => rec.extend([
                s.n.to_string(),
                row.failures.to_string(),
                cell(Some(&s.bias)),
                cell(s.winner_bias.as_ref()),
                cell(s.loser_bias.as_ref()),
                cell(s.low_bias.as_ref()),
                cell(s.high_bias.as_ref()),
                format!("{:.4}", s.absd),
                s.variance_ratio
                    .map_or(String::new(), |v| format!("{v:.4}")),
            ]),
            None => {
                rec.extend(["0".to_owned(), row.failures.to_string()]);
                rec.extend(std::iter::repeat_n(String::new(), 7));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Scatter data with an optional fitted line, written as `<stem>.csv`
/// (columns `x,y`) and `<stem>.fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub x_label: String,
    pub y_label: String,
    #[serde(skip)]
    pub points: Vec<(f64, f64)>,
    pub fit: Option<LineParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub slope: f64,
    pub intercept: f64,
}

impl PlotData {
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_writer(create(&csv_path)?);
        w.write_record(["x", "y"])?;
        for (x, y) in &self.points {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        let fit_path = dir.join(format!("{stem}.fit.json"));
        write_json(&fit_path, self)?;
        Ok(vec![csv_path, fit_path])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// Enough to rerun a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: config.seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    pub fn add_outputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            self.outputs.push(digest(p)?);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}
