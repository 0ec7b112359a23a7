use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use reactive_beta::estimators::EstimatorKind;
use reactive_beta::evaluation::{
    calibrate_ell_diff, leverage_factor, selection_bias, EllCalibration,
};
use reactive_beta::experiment::{estimate_universe, run_paths, summarize, Table2Report};
use reactive_beta::io::{
    build_universe, read_panel_file, read_sectors, write_json, write_table2_csv, LineParams,
    Manifest, PlotData, RunConfig,
};
use reactive_beta::montecarlo::{generate, write_path_dump, McModel};
use reactive_beta::strategies::{
    backtest, synthetic_universe, BacktestConfig, BacktestResult, BetaSource, StrategyKind,
};

#[derive(Parser)]
#[command(
    name = "reactive-beta",
    version,
    about = "Reactive beta estimation, simulation and factor backtests"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Daily OLS and reactive betas for a price panel.
    Estimate(EstimateArgs),
    /// Compare estimators on simulated paths.
    Simulate(SimulateArgs),
    /// Beta-neutral factor backtests with OLS and reactive hedges.
    Backtest(BacktestArgs),
    /// Closed-form selection bias of the low-beta leg.
    SelectionBias,
    /// Fit the leverage difference from correlation and index data.
    CalibrateEll(CalibrateArgs),
}

fn parse_with<T: FromStr<Err = reactive_beta::Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: reactive_beta::Error| e.to_string())
}

#[derive(Args)]
struct EstimateArgs {
    /// Price CSV with a date column, an index column and one column per stock.
    #[arg(long)]
    prices: Option<PathBuf>,

    #[arg(long, value_parser = parse_with::<EstimatorKind>)]
    estimator: Vec<EstimatorKind>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_with::<McModel>)]
    model: Option<McModel>,

    #[arg(long)]
    paths: Option<usize>,

    #[arg(long)]
    path_len: Option<usize>,

    #[arg(long, value_parser = parse_with::<EstimatorKind>)]
    estimator: Vec<EstimatorKind>,

    /// Also write every simulated path.
    #[arg(long)]
    dump_paths: bool,
}

#[derive(Args)]
struct BacktestArgs {
    /// Price CSV; a synthetic universe is generated when absent.
    #[arg(long)]
    prices: Option<PathBuf>,

    #[arg(long)]
    caps: Option<PathBuf>,

    #[arg(long)]
    sectors: Option<PathBuf>,

    #[arg(long, value_parser = parse_with::<StrategyKind>)]
    strategy: Vec<StrategyKind>,

    #[arg(long, value_parser = parse_with::<BetaSource>)]
    beta_source: Vec<BetaSource>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// CSV with date, correlation and either leverage or index columns.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

struct Run {
    out: PathBuf,
    manifest: Manifest,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &str, cfg: &RunConfig, out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            out: out.to_owned(),
            manifest: Manifest::new(command, cfg),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .add_input(path)
            .with_context(|| format!("hashing {}", path.display()))?;
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, value)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.add_outputs(&self.outputs)?;
        let path = self.manifest.write(&self.out)?;
        println!("wrote {} files and {}", self.outputs.len(), path.display());
        Ok(())
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn run_estimate(cfg: &mut RunConfig, args: EstimateArgs, out: &Path) -> Result<()> {
    if let Some(p) = args.prices {
        cfg.estimate.prices = Some(p);
    }
    if !args.estimator.is_empty() {
        cfg.estimate.estimators = args.estimator;
    }
    let Some(prices_path) = cfg.estimate.prices.clone() else {
        bail!("estimate needs a price file (--prices or estimate.prices)");
    };
    let mut run = Run::new("estimate", cfg, out)?;
    run.input(&prices_path)?;
    let panel = read_panel_file(&prices_path)?;
    let universe = build_universe(&panel, &cfg.estimate.index_column, None, None)?;
    let est = estimate_universe(
        &universe,
        &cfg.estimate.estimators,
        &cfg.reactive,
        cfg.burn_in,
        cfg.estimate.window,
        cfg.simulate.mc.asymmetry,
    )?;
    let reactive = cfg.estimate.estimators.contains(&EstimatorKind::Reactive);
    let path = run.path("betas.csv");
    let mut w = csv_writer(&path)?;
    if reactive {
        w.write_record(["date", "ticker", "ols", "reactive"])?;
    } else {
        w.write_record(["date", "ticker", "ols"])?;
    }
    for r in &est.daily {
        let mut rec = vec![r.date.clone(), r.ticker.clone(), opt(r.ols)];
        if reactive {
            rec.push(opt(r.reactive));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    if !est.last_date.is_empty() {
        run.json("last_date.json", &est.last_date)?;
    }
    println!(
        "{} stocks, {} dated rows from {} to {}",
        universe.n_stocks(),
        est.daily.len(),
        universe.dates[cfg.burn_in.min(universe.n_days() - 1)],
        universe.dates[universe.n_days() - 1]
    );
    run.finish()
}

fn print_table(report: &Table2Report) {
    println!(
        "{} paths={} T={} seed={}",
        report.model, report.n_paths, report.path_len, report.seed
    );
    println!(
        "{:<9}{:>10}{:>10}{:>10}{:>10}{:>10}{:>9}{:>8}{:>6}",
        "", "bias", "winner", "loser", "low", "high", "ABSD", "VR", "fail"
    );
    let cell = |c: Option<&reactive_beta::evaluation::BiasCell>| {
        c.map_or("-".to_owned(), |c| {
            format!("{:.3}{}", c.value, if c.significant { "*" } else { " " })
        })
    };
    for row in &report.rows {
        match &row.stats {
            Some(s) => println!(
                "{:<9}{:>10}{:>10}{:>10}{:>10}{:>10}{:>9.3}{:>8}{:>6}",
                row.estimator.to_string(),
                cell(Some(&s.bias)),
                cell(s.winner_bias.as_ref()),
                cell(s.loser_bias.as_ref()),
                cell(s.low_bias.as_ref()),
                cell(s.high_bias.as_ref()),
                s.absd,
                s.variance_ratio
                    .map_or("-".to_owned(), |v| format!("{v:.2}")),
                row.failures
            ),
            None => println!(
                "{:<9}{:>10}{:>60}",
                row.estimator.to_string(),
                "-",
                row.failures
            ),
        }
    }
}

fn run_simulate(cfg: &mut RunConfig, args: SimulateArgs, out: &Path) -> Result<()> {
    if let Some(m) = args.model {
        cfg.simulate.mc.model = m;
    }
    if let Some(n) = args.paths {
        cfg.simulate.mc.n_paths = n;
    }
    if let Some(n) = args.path_len {
        cfg.simulate.mc.path_len = n;
    }
    if !args.estimator.is_empty() {
        cfg.simulate.estimators = args.estimator;
    }
    cfg.simulate.dump_paths |= args.dump_paths;
    let exp = cfg.experiment();
    exp.validate()?;
    let mut run = Run::new("simulate", cfg, out)?;
    let paths = run_paths(&exp)?;
    let report = summarize(&exp, &paths)?;
    print_table(&report);
    run.json("table2.json", &report)?;
    let csv_path = run.path("table2.csv");
    write_table2_csv(File::create(&csv_path)?, &report)?;
    run.json("path_estimates.json", &paths)?;
    if cfg.simulate.dump_paths {
        let dump = run.path("paths.csv");
        write_path_dump(BufWriter::new(File::create(&dump)?), &generate(&exp.mc)?)?;
    }
    run.finish()
}

#[derive(Serialize)]
struct BacktestEntry {
    label: String,
    long_high_beta: Option<bool>,
    #[serde(flatten)]
    result: BacktestResult,
}

fn run_backtest(cfg: &mut RunConfig, args: BacktestArgs, out: &Path) -> Result<()> {
    let b = &mut cfg.backtest;
    if args.prices.is_some() {
        b.prices = args.prices;
    }
    if args.caps.is_some() {
        b.caps = args.caps;
    }
    if args.sectors.is_some() {
        b.sectors = args.sectors;
    }
    if !args.strategy.is_empty() {
        b.strategies = args.strategy;
    }
    if !args.beta_source.is_empty() {
        b.beta_sources = args.beta_source;
    }
    b.synthetic.seed = cfg.seed;
    let mut run = Run::new("backtest", cfg, out)?;
    let b = &cfg.backtest;
    let universe = match &b.prices {
        Some(prices) => {
            run.input(prices)?;
            let panel = read_panel_file(prices)?;
            let caps = match &b.caps {
                Some(p) => {
                    run.input(p)?;
                    Some(read_panel_file(p)?)
                }
                None => None,
            };
            let sectors = match &b.sectors {
                Some(p) => {
                    run.input(p)?;
                    Some(read_sectors(
                        File::open(p).with_context(|| format!("opening {}", p.display()))?,
                    )?)
                }
                None => None,
            };
            build_universe(&panel, &b.index_column, caps.as_ref(), sectors.as_ref())?
        }
        None => synthetic_universe(&b.synthetic)?.universe,
    };
    let base = BacktestConfig {
        reactive: cfg.reactive,
        quantile: b.quantile,
        low_vol_long_high_beta: b.low_vol_long_high_beta,
        burn_in: cfg.burn_in,
        keep_weights: b.write_weights,
    };
    let mut entries = Vec::new();
    for &strategy in &b.strategies {
        let orientations: Vec<Option<bool>> = if strategy == StrategyKind::LowVolatility {
            let mut o = vec![Some(b.low_vol_long_high_beta)];
            if b.both_orientations {
                o.push(Some(!b.low_vol_long_high_beta));
            }
            o
        } else {
            vec![None]
        };
        for orientation in orientations {
            for &source in &b.beta_sources {
                let cfg = BacktestConfig {
                    low_vol_long_high_beta: orientation.unwrap_or(true),
                    ..base.clone()
                };
                let result = backtest(&universe, strategy, source, &cfg)?;
                let label = match orientation {
                    Some(true) => format!("{strategy}-long-high-beta"),
                    Some(false) => format!("{strategy}-long-low-beta"),
                    None => strategy.to_string(),
                };
                entries.push(BacktestEntry {
                    label,
                    long_high_beta: orientation,
                    result,
                });
            }
        }
    }
    let summary = run.path("backtest_summary.csv");
    let mut w = csv_writer(&summary)?;
    w.write_record([
        "label",
        "beta_source",
        "days",
        "skipped_warmup",
        "skipped_other",
        "bias",
        "corstd",
    ])?;
    println!(
        "{:<32}{:<10}{:>7}{:>10}{:>10}",
        "factor", "hedge", "days", "bias", "corstd"
    );
    for e in &entries {
        let q = e.result.quality.as_ref();
        let bias = q.and_then(|q| q.bias);
        let corstd = q.and_then(|q| q.corstd);
        w.write_record([
            e.label.clone(),
            e.result.beta_source.to_string(),
            e.result.days.len().to_string(),
            e.result.skipped_warmup.to_string(),
            e.result.skipped_other.to_string(),
            opt(bias),
            opt(corstd),
        ])?;
        let fmt = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.4}"));
        println!(
            "{:<32}{:<10}{:>7}{:>10}{:>10}",
            e.label,
            e.result.beta_source.to_string(),
            e.result.days.len(),
            fmt(bias),
            fmt(corstd)
        );
    }
    w.flush()?;
    run.json("backtest.json", &entries)?;
    run.finish()
}

fn run_selection_bias(cfg: &RunConfig, out: &Path) -> Result<()> {
    let inputs = &cfg.selection_bias;
    let sb = selection_bias(inputs)?;
    let mut run = Run::new("selection-bias", cfg, out)?;
    #[derive(Serialize)]
    struct Report<'a> {
        inputs: &'a reactive_beta::evaluation::SelectionBiasInputs,
        result: reactive_beta::evaluation::SelectionBias,
    }
    run.json("selection_bias.json", &Report { inputs, result: sb })?;
    println!("sigma_eta      {:.4}", sb.sigma_eta);
    println!("B              {:.4}", sb.b);
    println!("beta_low       {:+.4}", sb.beta_low_factor);
    println!("rho_low        {:.1}%", 100.0 * sb.rho_low_factor);
    run.finish()
}

fn run_calibrate(cfg: &mut RunConfig, args: CalibrateArgs, out: &Path) -> Result<()> {
    if args.input.is_some() {
        cfg.calibrate_ell.input = args.input;
    }
    let c = &cfg.calibrate_ell;
    let Some(input) = c.input.clone() else {
        bail!("calibrate-ell needs an input file (--input or calibrate_ell.input)");
    };
    let mut run = Run::new("calibrate-ell", cfg, out)?;
    run.input(&input)?;
    let panel = read_panel_file(&input)?;
    let correlation = panel.dense(&c.correlation_column)?;
    let leverage = if panel.column(&c.leverage_column).is_some() {
        panel.dense(&c.leverage_column)?
    } else if panel.column(&c.index_column).is_some() {
        leverage_factor(&panel.dense(&c.index_column)?, cfg.reactive.lambda_f)?
    } else {
        bail!(
            "{} has neither a '{}' nor an '{}' column",
            input.display(),
            c.leverage_column,
            c.index_column
        );
    };
    let fit: EllCalibration = calibrate_ell_diff(&correlation, &leverage)?;
    let mean_rho = correlation.iter().sum::<f64>() / correlation.len() as f64;
    let plot = PlotData {
        x_label: "change in leverage factor".into(),
        y_label: "change in normalized correlation".into(),
        points: leverage
            .windows(2)
            .zip(correlation.windows(2))
            .map(|(g, r)| (g[1] - g[0], (r[1] - r[0]) / mean_rho))
            .collect(),
        fit: Some(LineParams {
            slope: fit.slope,
            intercept: fit.intercept,
        }),
    };
    run.outputs
        .extend(plot.write(&run.out, "calibration_scatter")?);
    run.json("calibration.json", &fit)?;
    println!(
        "slope {:.3} (t = {:.2}, R2 = {:.3}, n = {}), ell - ell' = {:.3}",
        fit.slope,
        fit.tstat,
        fit.r2,
        fit.n,
        fit.ell_diff()
    );
    run.finish()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Estimate(a) => run_estimate(&mut cfg, a, &cli.out),
        Command::Simulate(a) => run_simulate(&mut cfg, a, &cli.out),
        Command::Backtest(a) => run_backtest(&mut cfg, a, &cli.out),
        Command::SelectionBias => run_selection_bias(&cfg, &cli.out),
        Command::CalibrateEll(a) => run_calibrate(&mut cfg, a, &cli.out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<reactive_beta::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
