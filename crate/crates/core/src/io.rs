//! File formats: subject CSVs, JSON reports, evaluation tables and the flat
//! key=value configuration file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{AicRow, FitResult, OptimConfig};
use crate::evaluate::EvalReport;
use crate::forecast::OnsetForecast;
use crate::model::{CycleDataset, DayRecord, ModelParams, PhaseGrid};
use crate::simulate::SimOutput;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const DATE_FORMAT: &str = "%Y-%m-%d";
const SUBJECT_HEADER: [&str; 3] = ["date", "bbt", "menses"];

fn parse_date(s: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT)
        .map_err(|e| Error::Parse { line, message: format!("bad date {s:?}: {e}") })
}

/// Reads a subject CSV (`date,bbt,menses`, header required). Line numbers in
/// errors count the header as line 1.
pub fn read_subject<R: Read>(reader: R, subject_id: &str) -> Result<CycleDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != SUBJECT_HEADER {
        return Err(Error::Parse { line: 1, message: format!("expected header date,bbt,menses, got {}", names.join(",")) });
    }
    let mut records = Vec::new();
    let mut start = None;
    let mut prev: Option<NaiveDate> = None;
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 3 {
            return Err(Error::Parse { line, message: format!("expected 3 fields, got {}", row.len()) });
        }
        let date = parse_date(&row[0], line)?;
        if let Some(p) = prev {
            if p.succ_opt() != Some(date) {
                return Err(Error::NonConsecutiveDates { line, date: date.to_string() });
            }
        } else {
            start = Some(date);
        }
        prev = Some(date);
        let bbt = match &row[1] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("bad bbt value {s:?}") })?),
        };
        let menses = match &row[2] {
            "0" => false,
            "1" => true,
            other => return Err(Error::BadMensesFlag { line, value: other.to_string() }),
        };
        records.push(DayRecord { bbt, menses });
    }
    if records.is_empty() {
        return Err(Error::InvalidInput("subject file has no data rows".into()));
    }
    CycleDataset::new(subject_id, start, records)
}

/// Loads a subject CSV; the subject id is the file stem.
pub fn load_subject(path: &Path) -> Result<CycleDataset> {
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("subject").to_string();
    let file = File::open(path).map_err(|e| with_path(e, path))?;
    read_subject(BufReader::new(file), &id)
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| with_path(e, path))?))
}

fn need_dates(data: &CycleDataset) -> Result<NaiveDate> {
    data.start_date
        .ok_or_else(|| Error::InvalidInput(format!("dataset {} has no calendar dates", data.subject_id)))
}

fn date_at(start: NaiveDate, day: usize) -> NaiveDate {
    start + chrono::Days::new(day as u64)
}

/// Writes the subject CSV schema read by [`read_subject`]. BBT values are
/// printed in shortest round-trip form.
pub fn write_subject<W: Write>(data: &CycleDataset, writer: W) -> Result<()> {
    let start = need_dates(data)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUBJECT_HEADER)?;
    for (t, r) in data.records().iter().enumerate() {
        let bbt = r.bbt.map(|y| y.to_string()).unwrap_or_default();
        w.write_record([date_at(start, t).to_string(), bbt, (r.menses as u8).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_subject(data: &CycleDataset, path: &Path) -> Result<()> {
    write_subject(data, create(path)?)
}

/// Latent path of a simulation: `day,date,omega,advance`.
pub fn write_latent<W: Write>(sim: &SimOutput, writer: W) -> Result<()> {
    let start = sim.dataset.start_date;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["day", "date", "omega", "advance"])?;
    for (t, (om, adv)) in sim.latent_phases.iter().zip(&sim.latent_advances).enumerate() {
        let date = start.map(|s| date_at(s, t).to_string()).unwrap_or_default();
        w.write_record([(t + 1).to_string(), date, om.to_string(), adv.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Settings that produced a fit, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub version: String,
    pub grid_size: usize,
    pub order: usize,
    pub optimizer: OptimConfig,
}

/// JSON fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub subject_id: String,
    pub n_days: usize,
    pub first_date: Option<NaiveDate>,
    pub run: RunInfo,
    pub fit: FitResult,
    /// Per-order AIC table when the order was selected.
    pub aic_table: Option<Vec<AicRow>>,
}

impl FitReport {
    pub fn new(data: &CycleDataset, fit: FitResult, cfg: &OptimConfig, aic_table: Option<Vec<AicRow>>) -> Self {
        Self {
            subject_id: data.subject_id.clone(),
            n_days: data.len(),
            first_date: data.start_date,
            run: RunInfo { version: VERSION.into(), grid_size: fit.grid_size, order: fit.params.order(), optimizer: *cfg },
            fit,
            aic_table,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.fit.params
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| with_path(e, path))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Reads model parameters from either a fit report or a bare parameter object.
pub fn load_params(path: &Path) -> Result<ModelParams> {
    let v: serde_json::Value = read_json(path)?;
    let obj = v.get("fit").and_then(|f| f.get("params")).cloned().unwrap_or(v);
    let p: ModelParams = serde_json::from_value(obj)?;
    p.validate()?;
    Ok(p)
}

/// Summary written next to a forecast CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub version: String,
    pub subject_id: String,
    pub as_of: Option<NaiveDate>,
    pub grid_size: usize,
    pub order: usize,
    pub k_star: usize,
    pub date_star: Option<NaiveDate>,
    pub mass_captured: f64,
    pub horizon: usize,
}

/// Forecast CSV: `k,calendar_date,probability`.
pub fn write_forecast<W: Write>(fc: &OnsetForecast, as_of: Option<NaiveDate>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "calendar_date", "probability"])?;
    for (idx, p) in fc.probs.iter().enumerate() {
        let k = idx + 1;
        let date = as_of.map(|d| date_at(d, k).to_string()).unwrap_or_default();
        w.write_record([k.to_string(), date, p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_forecast(fc: &OnsetForecast, as_of: Option<NaiveDate>, path: &Path) -> Result<()> {
    write_forecast(fc, as_of, create(path)?)
}

/// Per-day marginals in long form: `t,omega,density` with `t` one-based.
pub fn write_marginals<W: Write>(marginals: &[Vec<f64>], grid: &PhaseGrid, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "omega", "density"])?;
    for (t, m) in marginals.iter().enumerate() {
        for (i, v) in m.iter().enumerate() {
            w.write_record([(t + 1).to_string(), grid.point(i).to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_marginals(marginals: &[Vec<f64>], grid: &PhaseGrid, path: &Path) -> Result<()> {
    write_marginals(marginals, grid, create(path)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the evaluation tables into `dir`: `sequential_rmse.csv`,
/// `sequential_mae.csv`, `calendar_rmse.csv`, `calendar_mae.csv`,
/// `lead_rmse.csv` (plot data), `predictions.csv` and `eval_report.json`.
pub fn save_eval(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
    let mut rmse = csv::Writer::from_writer(create(&dir.join("sequential_rmse.csv"))?);
    let mut mae = csv::Writer::from_writer(create(&dir.join("sequential_mae.csv"))?);
    let mut plot = csv::Writer::from_writer(create(&dir.join("lead_rmse.csv"))?);
    rmse.write_record(["lead", "rmse", "n_cycles"])?;
    mae.write_record(["lead", "mae", "n_cycles"])?;
    plot.write_record(["position", "lead", "rmse"])?;
    for (pos, row) in report.sequential.iter().enumerate() {
        let label = row.lead.label();
        rmse.write_record([label.clone(), opt(row.rmse), row.n_cycles.to_string()])?;
        mae.write_record([label.clone(), opt(row.mae), row.n_cycles.to_string()])?;
        plot.write_record([pos.to_string(), label, opt(row.rmse)])?;
    }
    rmse.flush()?;
    mae.flush()?;
    plot.flush()?;

    let mut crmse = csv::Writer::from_writer(create(&dir.join("calendar_rmse.csv"))?);
    let mut cmae = csv::Writer::from_writer(create(&dir.join("calendar_mae.csv"))?);
    crmse.write_record(["length", "rmse"])?;
    cmae.write_record(["length", "mae"])?;
    for row in &report.calendar {
        crmse.write_record([row.length.to_string(), row.rmse.to_string()])?;
        cmae.write_record([row.length.to_string(), row.mae.to_string()])?;
    }
    crmse.flush()?;
    cmae.flush()?;

    let mut preds = csv::Writer::from_writer(create(&dir.join("predictions.csv"))?);
    preds.write_record(["cycle", "lead", "as_of_day", "predicted_onset_day", "actual_onset_day", "error"])?;
    for p in &report.predictions {
        preds.write_record([
            p.cycle.to_string(),
            p.lead.label(),
            (p.as_of + 1).to_string(),
            (p.predicted_onset + 1).to_string(),
            (p.actual_onset + 1).to_string(),
            p.error.to_string(),
        ])?;
    }
    preds.flush()?;
    write_json(report, &dir.join("eval_report.json"))
}

/// Flat `key = value` configuration. Blank lines and lines starting with
/// `#` are ignored; keys may use `-` or `_`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let (k, v) = text
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: idx + 1, message: format!("expected key = value, got {text:?}") })?;
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(Error::Parse { line: idx + 1, message: "empty key".into() });
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(File::open(path).map_err(|e| with_path(e, path))?)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Typed lookup; a present but unparsable value is an error.
    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidInput(format!("config key {key}: cannot parse {v:?}"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}
