//! Train/test evaluation: sequential onset predictions at fixed lead times
//! against the fixed-length calendar rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::forecast_onset;
use crate::gridfilter::FilterState;
use crate::model::{CycleDataset, ModelParams, PhaseGrid, TransitionTable};

/// Days-before-onset leads evaluated after the "Menstrual day" row.
pub const LEADS: [usize; 9] = [21, 14, 7, 6, 5, 4, 3, 2, 1];
/// Calendar cycle lengths tried by the baseline.
pub const CALENDAR_LENGTHS: std::ops::RangeInclusive<usize> = 27..=37;
/// Training cycles used when none are given.
pub const DEFAULT_TRAIN_CYCLES: usize = 29;

/// When a prediction is issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lead {
    /// On the onset day that opens the cycle.
    MenstrualDay,
    DaysBefore(usize),
}

impl Lead {
    pub fn label(&self) -> String {
        match self {
            Lead::MenstrualDay => "menstrual_day".into(),
            Lead::DaysBefore(d) => format!("{d}"),
        }
    }

    /// All leads in table order.
    pub fn all() -> Vec<Lead> {
        std::iter::once(Lead::MenstrualDay).chain(LEADS.iter().map(|&d| Lead::DaysBefore(d))).collect()
    }
}

/// A cycle of the test period, as day indices into the full record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCycle {
    pub start: usize,
    pub next_onset: usize,
}

impl TestCycle {
    pub fn length(&self) -> usize {
        self.next_onset - self.start
    }
}

/// Training and test parts of a record.
#[derive(Debug, Clone)]
pub struct Split {
    /// First onset through the onset closing the last training cycle.
    pub train: CycleDataset,
    /// From that closing onset to the end of the record.
    pub test: CycleDataset,
    /// Index in the full record of the onset shared by both parts.
    pub boundary: usize,
    /// Complete cycles of the test part.
    pub test_cycles: Vec<TestCycle>,
}

/// Splits after `n_train_cycles` complete cycles. The closing onset is the
/// last day of `train` and the first day of `test`.
pub fn split_by_cycles(data: &CycleDataset, n_train_cycles: usize) -> Result<Split> {
    if n_train_cycles == 0 {
        return Err(Error::InvalidInput("at least one training cycle is needed".into()));
    }
    let onsets = data.onset_days();
    let complete = onsets.len().saturating_sub(1);
    if complete <= n_train_cycles {
        return Err(Error::InsufficientCycles { needed: n_train_cycles + 1, found: complete });
    }
    let first = onsets[0];
    let boundary = onsets[n_train_cycles];
    let train = data.slice(first, boundary + 1)?;
    let test = data.slice(boundary, data.len())?;
    let test_cycles = onsets[n_train_cycles..]
        .windows(2)
        .map(|w| TestCycle { start: w[0], next_onset: w[1] })
        .collect();
    Ok(Split { train, test, boundary, test_cycles })
}

pub fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub fn mae(errors: &[f64]) -> f64 {
    errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64
}

/// One sequential prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cycle: usize,
    pub lead: Lead,
    /// Last day assimilated before predicting.
    pub as_of: usize,
    pub predicted_onset: usize,
    pub actual_onset: usize,
    /// Predicted minus actual, in days.
    pub error: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadRow {
    pub lead: Lead,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub n_cycles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalendarRow {
    pub length: usize,
    pub rmse: f64,
    pub mae: f64,
}

/// Day the filter must have assimilated to predict `cycle` at `lead`, or
/// `None` when the cycle is shorter than the lead.
fn as_of_day(cycle: &TestCycle, lead: Lead) -> Option<usize> {
    match lead {
        Lead::MenstrualDay => Some(cycle.start),
        Lead::DaysBefore(d) if d <= cycle.length() => Some(cycle.next_onset - d),
        Lead::DaysBefore(_) => None,
    }
}

/// Sequential predictions for every test cycle and lead. A single filter
/// pass runs over the full record from day 0; each prediction uses the
/// filtering marginal of its `as_of` day only.
pub fn sequential_predictions(
    params: &ModelParams,
    data: &CycleDataset,
    cycles: &[TestCycle],
    grid: &PhaseGrid,
) -> Result<Vec<Prediction>> {
    let mut wanted: Vec<(usize, usize, Lead)> = Vec::new();
    for (c, cycle) in cycles.iter().enumerate() {
        if cycle.next_onset >= data.len() || cycle.start >= cycle.next_onset {
            return Err(Error::InvalidInput(format!("test cycle {c} lies outside the record")));
        }
        for lead in Lead::all() {
            if let Some(day) = as_of_day(cycle, lead) {
                wanted.push((day, c, lead));
            }
        }
    }
    wanted.sort_by_key(|&(day, c, _)| (day, c));
    let trans = TransitionTable::build(params, grid)?;
    let mut state = FilterState::new(params, grid, &trans)?;
    let mut out = Vec::with_capacity(wanted.len());
    let mut next = 0;
    let last = wanted.last().map_or(0, |w| w.0);
    for (t, rec) in data.records().iter().enumerate().take(last + 1) {
        state.step(rec).map_err(|e| match e {
            Error::DegenerateLikelihood { .. } => Error::DegenerateLikelihood { day: t + 1 },
            other => other,
        })?;
        let mut forecast = None;
        while next < wanted.len() && wanted[next].0 == t {
            let (day, c, lead) = wanted[next];
            if forecast.is_none() {
                forecast = Some(forecast_onset(state.marginal(), grid, params)?);
            }
            let k_star = forecast.as_ref().expect("set above").k_star;
            let predicted = day + k_star;
            let actual = cycles[c].next_onset;
            out.push(Prediction {
                cycle: c,
                lead,
                as_of: day,
                predicted_onset: predicted,
                actual_onset: actual,
                error: predicted as i64 - actual as i64,
            });
            next += 1;
        }
    }
    out.sort_by_key(|p| (p.cycle, Lead::all().iter().position(|l| *l == p.lead)));
    Ok(out)
}

/// RMSE and MAE per lead, in [`Lead::all`] order.
pub fn sequential_table(predictions: &[Prediction]) -> Vec<LeadRow> {
    Lead::all()
        .into_iter()
        .map(|lead| {
            let errs: Vec<f64> = predictions.iter().filter(|p| p.lead == lead).map(|p| p.error as f64).collect();
            if errs.is_empty() {
                LeadRow { lead, rmse: None, mae: None, n_cycles: 0 }
            } else {
                LeadRow { lead, rmse: Some(rmse(&errs)), mae: Some(mae(&errs)), n_cycles: errs.len() }
            }
        })
        .collect()
}

/// Calendar baseline: predict each onset `L` days after the previous one.
pub fn calendar_eval(cycle_lengths: &[usize], lengths: std::ops::RangeInclusive<usize>) -> Result<Vec<CalendarRow>> {
    if cycle_lengths.is_empty() {
        return Err(Error::InvalidInput("calendar evaluation needs at least one test cycle".into()));
    }
    Ok(lengths
        .map(|l| {
            let errs: Vec<f64> = cycle_lengths.iter().map(|&c| l as f64 - c as f64).collect();
            CalendarRow { length: l, rmse: rmse(&errs), mae: mae(&errs) }
        })
        .collect())
}

/// First row with the smallest RMSE.
pub fn best_calendar(rows: &[CalendarRow]) -> Option<&CalendarRow> {
    rows.iter().fold(None, |best: Option<&CalendarRow>, r| match best {
        Some(b) if b.rmse <= r.rmse => Some(b),
        _ => Some(r),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequential: Vec<LeadRow>,
    pub calendar: Vec<CalendarRow>,
    pub best_calendar: CalendarRow,
    /// (best calendar RMSE − smallest sequential RMSE) / best calendar RMSE.
    pub reduction_rate: f64,
    pub test_cycles: Vec<TestCycle>,
    pub predictions: Vec<Prediction>,
}

/// Sequential and calendar evaluation over `cycles` with a fitted model.
pub fn evaluate(params: &ModelParams, data: &CycleDataset, cycles: &[TestCycle], grid: &PhaseGrid) -> Result<EvalReport> {
    let lengths: Vec<usize> = cycles.iter().map(TestCycle::length).collect();
    let calendar = calendar_eval(&lengths, CALENDAR_LENGTHS)?;
    let best = best_calendar(&calendar).expect("non-empty").clone();
    let predictions = sequential_predictions(params, data, cycles, grid)?;
    let sequential = sequential_table(&predictions);
    let min_seq = sequential.iter().filter_map(|r| r.rmse).fold(f64::INFINITY, f64::min);
    let reduction_rate = (best.rmse - min_seq) / best.rmse;
    Ok(EvalReport { sequential, calendar, best_calendar: best, reduction_rate, test_cycles: cycles.to_vec(), predictions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DayRecord;
    use crate::simulate::simulate;

    fn with_onsets(len: usize, onsets: &[usize]) -> CycleDataset {
        let recs = (0..len).map(|t| DayRecord { bbt: Some(36.4), menses: onsets.contains(&t) }).collect();
        CycleDataset::new("s", None, recs).unwrap()
    }

    #[test]
    fn split_boundary_bookkeeping() {
        let d = with_onsets(80, &[0, 30, 60]);
        let s = split_by_cycles(&d, 1).unwrap();
        assert_eq!(s.train.len(), 31);
        assert_eq!(s.test.len(), 50);
        assert_eq!(s.boundary, 30);
        assert!(s.train.records()[30].menses && s.test.records()[0].menses);
        assert_eq!(s.test_cycles, vec![TestCycle { start: 30, next_onset: 60 }]);
        let mut joined = s.train.records().to_vec();
        joined.extend_from_slice(&s.test.records()[1..]);
        assert_eq!(joined, d.records());
    }

    #[test]
    fn split_drops_days_before_first_onset() {
        let d = with_onsets(90, &[5, 35, 64, 88]);
        let s = split_by_cycles(&d, 2).unwrap();
        assert_eq!(s.train.records(), &d.records()[5..65]);
        assert_eq!(s.test_cycles.len(), 1);
    }

    #[test]
    fn split_needs_a_test_cycle() {
        let d = with_onsets(80, &[0, 30, 60]);
        assert!(matches!(split_by_cycles(&d, 2), Err(Error::InsufficientCycles { needed: 3, found: 2 })));
        assert!(split_by_cycles(&d, 0).is_err());
    }

    #[test]
    fn error_summaries() {
        assert_eq!(rmse(&[1.0, -1.0]), 1.0);
        assert_eq!(mae(&[1.0, -1.0]), 1.0);
        assert_eq!(rmse(&[2.0, 0.0]), 2f64.sqrt());
        assert_eq!(mae(&[2.0, 0.0]), 1.0);
    }

    #[test]
    fn calendar_rows() {
        let rows = calendar_eval(&[30, 32], 27..=37).unwrap();
        let l31 = rows.iter().find(|r| r.length == 31).unwrap();
        assert_eq!((l31.rmse, l31.mae), (1.0, 1.0));
        for r in &rows {
            let direct = ([30.0, 32.0].iter().map(|c: &f64| (r.length as f64 - c).powi(2)).sum::<f64>() / 2.0).sqrt();
            assert_eq!(r.rmse, direct);
            assert!(r.rmse >= r.mae);
        }
        let exact = calendar_eval(&[29, 29, 29], 27..=37).unwrap();
        assert_eq!(best_calendar(&exact).unwrap().length, 29);
        assert_eq!(best_calendar(&exact).unwrap().rmse, 0.0);
        assert!(calendar_eval(&[], 27..=37).is_err());
    }

    #[test]
    fn calendar_minimum_near_mean() {
        let lens = [28, 31, 33, 35, 30, 32, 34, 29];
        let rows = calendar_eval(&lens, 27..=37).unwrap();
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        assert!((best_calendar(&rows).unwrap().length as f64 - mean).abs() <= 0.5);
    }

    #[test]
    fn leads_longer_than_cycle_are_skipped() {
        let c = TestCycle { start: 10, next_onset: 28 };
        assert_eq!(as_of_day(&c, Lead::DaysBefore(21)), None);
        assert_eq!(as_of_day(&c, Lead::DaysBefore(14)), Some(14));
        assert_eq!(as_of_day(&c, Lead::MenstrualDay), Some(10));
    }

    fn short_cycles() -> ModelParams {
        ModelParams::new(2.0, 24.0, 0.15, 36.3, vec![0.2], vec![-0.1]).unwrap()
    }

    #[test]
    fn no_look_ahead() {
        let p = short_cycles();
        let grid = PhaseGrid::new(64).unwrap();
        let sim = simulate(&p, 200, 0.0, 4).unwrap();
        let split = split_by_cycles(&sim.dataset, 8).unwrap();
        let full = sequential_predictions(&p, &sim.dataset, &split.test_cycles, &grid).unwrap();
        for pred in full.iter().filter(|p| p.cycle == 2) {
            let cut = sim.dataset.slice(0, pred.as_of + 1).unwrap();
            let trans = TransitionTable::build(&p, &grid).unwrap();
            let mut st = FilterState::new(&p, &grid, &trans).unwrap();
            for r in cut.records() {
                st.step(r).unwrap();
            }
            let k = forecast_onset(st.marginal(), &grid, &p).unwrap().k_star;
            assert_eq!(pred.predicted_onset, pred.as_of + k);
        }
    }

    #[test]
    fn near_deterministic_advance_is_predicted_exactly() {
        // α/β fixed at 1/20 with tiny spread and precise BBT
        let p = ModelParams::new(4000.0, 80_000.0, 0.02, 36.3, vec![0.25], vec![0.1]).unwrap();
        let grid = PhaseGrid::new(400).unwrap();
        let sim = simulate(&p, 320, 0.0, 6).unwrap();
        let split = split_by_cycles(&sim.dataset, 6).unwrap();
        let preds = sequential_predictions(&p, &sim.dataset, &split.test_cycles, &grid).unwrap();
        for pred in preds.iter().filter(|p| matches!(p.lead, Lead::DaysBefore(d) if d <= 3)) {
            assert_eq!(pred.error, 0, "{pred:?}");
        }
    }

    #[test]
    fn report_rows_are_consistent() {
        let p = short_cycles();
        let grid = PhaseGrid::new(64).unwrap();
        let sim = simulate(&p, 300, 0.05, 9).unwrap();
        let split = split_by_cycles(&sim.dataset, 10).unwrap();
        let rep = evaluate(&p, &sim.dataset, &split.test_cycles, &grid).unwrap();
        assert_eq!(rep.sequential.len(), 10);
        assert_eq!(rep.calendar.len(), 11);
        for row in &rep.sequential {
            if let (Some(r), Some(m)) = (row.rmse, row.mae) {
                assert!(r >= m && m >= 0.0);
            }
            let eligible = split.test_cycles.iter().filter(|c| as_of_day(c, row.lead).is_some()).count();
            assert_eq!(row.n_cycles, eligible);
        }
        let md = &rep.sequential[0];
        assert_eq!(md.n_cycles, split.test_cycles.len());
    }
}
