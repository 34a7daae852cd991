//! Command-line interface. Settings resolve as flag, then config file, then
//! built-in default.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{confidence_intervals, fit, select_order, FitResult, OptimConfig, MAX_ORDER};
use crate::evaluate::{evaluate, split_by_cycles, DEFAULT_TRAIN_CYCLES};
use crate::forecast::forecast_onset;
use crate::gridfilter::{run_filter, smooth, FilterState, Retention};
use crate::io::{self, Config, FitReport, ForecastSummary, VERSION};
use crate::model::{CycleDataset, ModelParams, PhaseGrid, TransitionTable};
use crate::simulate::simulate;

pub const DEFAULT_GRID_SIZE: usize = 512;
pub const DEFAULT_START_DATE: &str = "2000-01-01";

#[derive(Debug, Parser)]
#[command(name = "phasecycle", version, about = "Fit, forecast and evaluate the phase model of the menstrual cycle")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Maximum likelihood fit of one subject.
    Fit(FitArgs),
    /// Day-of-onset forecast as of a date.
    Forecast(ForecastArgs),
    /// Train/test evaluation against the calendar method.
    Evaluate(EvaluateArgs),
    /// Simulate a synthetic subject.
    Simulate(SimulateArgs),
    /// Smoothed (or filtered) phase marginals for every day.
    Smooth(SmoothArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of phase grid points.
    #[arg(long)]
    grid_size: Option<usize>,
}

#[derive(Debug, Args)]
struct OptimArgs {
    /// Harmonic order M.
    #[arg(long, conflicts_with = "select_order")]
    harmonics: Option<usize>,
    /// Choose M in 1..=max-order by AIC.
    #[arg(long)]
    select_order: bool,
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    ftol: Option<f64>,
    #[arg(long)]
    xtol: Option<f64>,
    /// Skip the Hessian-based confidence intervals.
    #[arg(long)]
    no_ci: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    optim: OptimArgs,
    /// Subject CSV (date,bbt,menses).
    #[arg(long)]
    input: PathBuf,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    /// Fit report (or bare parameter JSON).
    #[arg(long)]
    model: PathBuf,
    /// Forecast using data up to and including this date (default: last record).
    #[arg(long)]
    as_of: Option<String>,
    /// Forecast CSV (k, calendar_date, probability).
    #[arg(long)]
    out: PathBuf,
    /// JSON summary path (default: the CSV path with a .json extension).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    input: PathBuf,
    /// Cycles used for fitting; the rest are test cycles.
    #[arg(long)]
    train_cycles: Option<usize>,
    /// Use this fitted model instead of fitting the training cycles.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter JSON or fit report.
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    missing_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Date of the first simulated day.
    #[arg(long)]
    start_date: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the latent phase path here.
    #[arg(long)]
    latent: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SmoothArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Long-form CSV (t, omega, density).
    #[arg(long)]
    out: PathBuf,
    /// Write filtering rather than smoothed marginals.
    #[arg(long)]
    filtered: bool,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Failures are reported as JSON on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            return report_error("usage", e.to_string().trim().to_string(), 2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => report_error(e.kind(), e.to_string(), e.exit_code()),
    }
}

fn report_error(kind: &str, message: String, exit_code: i32) -> i32 {
    let rep = ErrorReport { error: kind, message, exit_code };
    eprintln!("{}", serde_json::to_string(&rep).expect("plain struct serializes"));
    exit_code
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Smooth(a) => cmd_smooth(a),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    path.as_deref().map(Config::load).transpose().map(Option::unwrap_or_default)
}

fn pick<T: FromStr>(flag: Option<T>, cfg: &Config, key: &str, default: T) -> Result<T> {
    Ok(match flag {
        Some(v) => v,
        None => cfg.get(key)?.unwrap_or(default),
    })
}

fn grid_from(flag: Option<usize>, cfg: &Config, default: usize) -> Result<PhaseGrid> {
    let n = pick(flag, cfg, "grid_size", default)?;
    if n < 2 {
        return Err(Error::InvalidInput(format!("--grid-size must be at least 2, got {n}")));
    }
    PhaseGrid::new(n)
}

/// How the harmonic order is chosen.
enum OrderChoice {
    Fixed(usize),
    Select(usize),
}

struct FitSettings {
    order: OrderChoice,
    optim: OptimConfig,
    ci: bool,
}

fn fit_settings(a: &OptimArgs, cfg: &Config) -> Result<FitSettings> {
    let d = OptimConfig::default();
    let optim = OptimConfig {
        max_evals: pick(a.max_evals, cfg, "max_evals", d.max_evals)?,
        ftol: pick(a.ftol, cfg, "ftol", d.ftol)?,
        xtol: pick(a.xtol, cfg, "xtol", d.xtol)?,
        restarts: pick(a.restarts, cfg, "restarts", d.restarts)?,
        restart_tol: cfg.get("restart_tol")?.unwrap_or(d.restart_tol),
        seed: pick(a.seed, cfg, "seed", d.seed)?,
    };
    let max_order = pick(a.max_order, cfg, "max_order", MAX_ORDER)?;
    if !(1..=MAX_ORDER).contains(&max_order) {
        return Err(Error::InvalidInput(format!("--max-order must be in 1..={MAX_ORDER}, got {max_order}")));
    }
    let order = if a.select_order {
        OrderChoice::Select(max_order)
    } else if let Some(m) = a.harmonics {
        OrderChoice::Fixed(m)
    } else if cfg.get::<bool>("select_order")?.unwrap_or(false) {
        OrderChoice::Select(max_order)
    } else if let Some(m) = cfg.get::<usize>("harmonics")? {
        OrderChoice::Fixed(m)
    } else {
        return Err(Error::InvalidInput("give --harmonics M or --select-order".into()));
    };
    if let OrderChoice::Fixed(m) = order {
        if !(1..=MAX_ORDER).contains(&m) {
            return Err(Error::InvalidInput(format!("--harmonics must be in 1..={MAX_ORDER}, got {m}")));
        }
    }
    let ci = !(a.no_ci || cfg.get::<bool>("no_ci")?.unwrap_or(false));
    Ok(FitSettings { order, optim, ci })
}

fn run_fit(data: &CycleDataset, grid: &PhaseGrid, s: &FitSettings) -> Result<FitReport> {
    let (mut result, table): (FitResult, _) = match s.order {
        OrderChoice::Fixed(m) => (fit(data, m, grid, &s.optim)?, None),
        OrderChoice::Select(max) => {
            let sel = select_order(data, 1..=max, grid, &s.optim)?;
            (sel.best, Some(sel.table))
        }
    };
    if s.ci {
        result.ci = Some(confidence_intervals(&result, data, grid)?);
    }
    Ok(FitReport::new(data, result, &s.optim, table))
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let cfg = load_config(&a.common.config)?;
    let grid = grid_from(a.common.grid_size, &cfg, DEFAULT_GRID_SIZE)?;
    let settings = fit_settings(&a.optim, &cfg)?;
    let data = io::load_subject(&a.input)?;
    let report = run_fit(&data, &grid, &settings)?;
    match a.out {
        Some(path) => io::write_json(&report, &path),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

/// Parameters and the grid size they were fitted on.
fn load_model(path: &Path) -> Result<(ModelParams, Option<usize>)> {
    let params = io::load_params(path)?;
    let grid_size = io::read_json::<FitReport>(path).ok().map(|r| r.run.grid_size);
    Ok((params, grid_size))
}

fn parse_date(s: &str, flag: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::InvalidInput(format!("{flag}: bad date {s:?}: {e}")))
}

fn cmd_forecast(a: ForecastArgs) -> Result<()> {
    let cfg = load_config(&a.common.config)?;
    let (params, fitted_n) = load_model(&a.model)?;
    let grid = grid_from(a.common.grid_size, &cfg, fitted_n.unwrap_or(DEFAULT_GRID_SIZE))?;
    let data = io::load_subject(&a.input)?;
    let start = data.start_date.expect("subject files carry dates");
    let last = data.len() - 1;
    let day = match &a.as_of {
        None => last,
        Some(s) => {
            let date = parse_date(s, "--as-of")?;
            let offset = (date - start).num_days();
            if offset < 0 || offset as usize > last {
                return Err(Error::InvalidInput(format!(
                    "--as-of {date} is outside the records ({start} to {})",
                    data.date_of(last).expect("dated")
                )));
            }
            offset as usize
        }
    };
    let trans = TransitionTable::build(&params, &grid)?;
    let mut state = FilterState::new(&params, &grid, &trans)?;
    for rec in &data.records()[..=day] {
        state.step(rec)?;
    }
    let fc = forecast_onset(state.marginal(), &grid, &params)?;
    let as_of = data.date_of(day);
    io::save_forecast(&fc, as_of, &a.out)?;
    let summary = ForecastSummary {
        version: VERSION.into(),
        subject_id: data.subject_id.clone(),
        as_of,
        grid_size: grid.n(),
        order: params.order(),
        k_star: fc.k_star,
        date_star: as_of.map(|d| d + chrono::Days::new(fc.k_star as u64)),
        mass_captured: fc.mass_captured,
        horizon: fc.horizon(),
    };
    let summary_path = a.summary.unwrap_or_else(|| a.out.with_extension("json"));
    io::write_json(&summary, &summary_path)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = load_config(&a.common.config)?;
    let data = io::load_subject(&a.input)?;
    let train_cycles = pick(a.train_cycles, &cfg, "train_cycles", DEFAULT_TRAIN_CYCLES)?;
    let split = split_by_cycles(&data, train_cycles)?;
    let (params, grid) = match &a.model {
        Some(path) => {
            let (params, fitted_n) = load_model(path)?;
            (params, grid_from(a.common.grid_size, &cfg, fitted_n.unwrap_or(DEFAULT_GRID_SIZE))?)
        }
        None => {
            let grid = grid_from(a.common.grid_size, &cfg, DEFAULT_GRID_SIZE)?;
            let settings = fit_settings(&a.optim, &cfg)?;
            let report = run_fit(&split.train, &grid, &settings)?;
            io::write_json(&report, &a.out_dir.join("fit_report.json"))?;
            (report.fit.params, grid)
        }
    };
    let rep = evaluate(&params, &data, &split.test_cycles, &grid)?;
    io::save_eval(&rep, &a.out_dir)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let params = io::load_params(&a.params)?;
    let days = match a.days.map(Ok).or_else(|| cfg.get("days").transpose()) {
        Some(d) => d?,
        None => return Err(Error::InvalidInput("--days is required".into())),
    };
    let missing = pick(a.missing_rate, &cfg, "missing_rate", 0.0)?;
    let seed = pick(a.seed, &cfg, "seed", OptimConfig::default().seed)?;
    let start = match a.start_date.or_else(|| cfg.get_str("start_date").map(String::from)) {
        Some(s) => parse_date(&s, "--start-date")?,
        None => parse_date(DEFAULT_START_DATE, "--start-date")?,
    };
    let mut sim = simulate(&params, days, missing, seed)?;
    sim.dataset.start_date = Some(start);
    io::save_subject(&sim.dataset, &a.out)?;
    if let Some(path) = &a.latent {
        let file = std::fs::File::create(path)?;
        io::write_latent(&sim, std::io::BufWriter::new(file))?;
    }
    Ok(())
}

fn cmd_smooth(a: SmoothArgs) -> Result<()> {
    let cfg = load_config(&a.common.config)?;
    let (params, fitted_n) = load_model(&a.model)?;
    let grid = grid_from(a.common.grid_size, &cfg, fitted_n.unwrap_or(DEFAULT_GRID_SIZE))?;
    let data = io::load_subject(&a.input)?;
    let trans = TransitionTable::build(&params, &grid)?;
    let fr = run_filter(&params, &data, &grid, &trans, Retention::Retained)?;
    if a.filtered {
        io::save_marginals(&fr.filter_marginals, &grid, &a.out)
    } else {
        let sm = smooth(&fr, &trans)?;
        io::save_marginals(&sm.marginals, &grid, &a.out)
    }
}
