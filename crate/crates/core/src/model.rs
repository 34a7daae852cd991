//! Model parameters, the phase grid, the discretised system density and the
//! daily record container.

use std::f64::consts::PI;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::densities::wrapped_gamma_pdf;
use crate::error::{domain, Error, Result};

/// Plausible basal body temperature range (°C); readings outside it are
/// treated as missing.
pub const BBT_WINDOW: (f64, f64) = (34.0, 42.0);

/// Parameter vector of the periodic-phase model.
///
/// `alpha`/`beta` are the shape/rate of the daily phase advance, `sigma` the
/// BBT noise SD, and `a`, `b`, `c` the coefficients of the harmonic mean
/// temperature curve of order `b.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ModelParams {
    pub fn new(alpha: f64, beta: f64, sigma: f64, a: f64, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let p = Self { alpha, beta, sigma, a, b, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("sigma", self.sigma)] {
            if !(v.is_finite() && v > 0.0) {
                return domain(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.b.len() != self.c.len() {
            return domain(format!(
                "cosine and sine coefficient counts differ ({} vs {})",
                self.b.len(),
                self.c.len()
            ));
        }
        if self.b.is_empty() {
            return domain("harmonic order must be at least 1");
        }
        if !self.a.is_finite() || self.b.iter().chain(&self.c).any(|v| !v.is_finite()) {
            return domain("temperature curve coefficients must be finite");
        }
        Ok(())
    }

    /// Harmonic order M.
    pub fn order(&self) -> usize {
        self.b.len()
    }

    /// Number of free parameters, 2M + 4.
    pub fn n_params(&self) -> usize {
        2 * self.order() + 4
    }

    /// Mean temperature at phase `omega` (any real; reduced mod 1).
    pub fn mean_bbt(&self, omega: f64) -> f64 {
        let w = omega.rem_euclid(1.0);
        let mut mu = self.a;
        for (m, (bm, cm)) in self.b.iter().zip(&self.c).enumerate() {
            let arg = 2.0 * PI * (m + 1) as f64 * w;
            mu += bm * arg.cos() + cm * arg.sin();
        }
        mu
    }

    /// Mean daily phase advance is alpha/beta, so one revolution takes
    /// beta/alpha days on average.
    pub fn expected_cycle_length(&self) -> f64 {
        self.beta / self.alpha
    }

    /// Unconstrained coordinates: (ln α, ln β, ln σ, a, b.., c..).
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend([self.alpha.ln(), self.beta.ln(), self.sigma.ln(), self.a]);
        v.extend(&self.b);
        v.extend(&self.c);
        v
    }

    pub fn from_unconstrained(theta: &[f64]) -> Result<Self> {
        if theta.len() < 6 || !theta.len().is_multiple_of(2) {
            return domain(format!("parameter vector of length {} is not 2M + 4", theta.len()));
        }
        let m = (theta.len() - 4) / 2;
        Self::new(
            theta[0].exp(),
            theta[1].exp(),
            theta[2].exp(),
            theta[3],
            theta[4..4 + m].to_vec(),
            theta[4 + m..].to_vec(),
        )
    }

    /// Names of the parameters in `to_unconstrained` order (natural scale).
    pub fn names(order: usize) -> Vec<String> {
        let mut names: Vec<String> = ["alpha", "beta", "sigma", "a"].iter().map(|s| s.to_string()).collect();
        names.extend((1..=order).map(|m| format!("b{m}")));
        names.extend((1..=order).map(|m| format!("c{m}")));
        names
    }
}

/// `n` equally spaced phases `(i - 1) / n` on the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    n: usize,
}

impl PhaseGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("grid size must be at least 2, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Circular advance from grid point `j` to grid point `i`, in (0, 1].
    /// Equal points correspond to one full revolution.
    pub fn advance(&self, i: usize, j: usize) -> f64 {
        if i > j {
            (i - j) as f64 / self.n as f64
        } else {
            1.0 - (j - i) as f64 / self.n as f64
        }
    }

    /// Mean temperature evaluated at each grid point.
    pub fn mean_curve(&self, params: &ModelParams) -> Vec<f64> {
        (0..self.n).map(|i| params.mean_bbt(self.point(i))).collect()
    }
}

/// Discretised system density `dens[i][j] = p(ω(i) | ω(j))`, stored row-major.
///
/// Each column is rescaled so that `(1/N) Σ_i dens[i][j] = 1`.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    n: usize,
    dens: Vec<f64>,
}

impl TransitionTable {
    pub fn build(params: &ModelParams, grid: &PhaseGrid) -> Result<Self> {
        params.validate()?;
        let n = grid.n();
        // The density depends only on (i - j) mod n, so evaluate n values once.
        let mut by_offset = Vec::with_capacity(n);
        for k in 0..n {
            let delta = if k == 0 { 1.0 } else { k as f64 / n as f64 };
            by_offset.push(wrapped_gamma_pdf(delta, params.alpha, params.beta)?);
        }
        // every column holds the same n values, so one rescaling fits all
        let col_mass = by_offset.iter().sum::<f64>() / n as f64;
        if !(col_mass > 0.0 && col_mass.is_finite()) {
            return domain(format!(
                "transition columns have mass {col_mass} (alpha={}, beta={})",
                params.alpha, params.beta
            ));
        }
        by_offset.iter_mut().for_each(|v| *v /= col_mass);
        let mut dens = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dens[i * n + j] = by_offset[(i + n - j) % n];
            }
        }
        Ok(Self { n, dens })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dens[i * self.n + j]
    }

    /// Row `i` of the table (all previous phases `j`).
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.dens[i * self.n..(i + 1) * self.n]
    }

    /// True when moving from grid point `j` to `i` steps over phase 1,
    /// i.e. `ω(i) <= ω(j)`.
    #[inline]
    pub fn wraps(i: usize, j: usize) -> bool {
        i <= j
    }
}

/// One day of observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayRecord {
    pub bbt: Option<f64>,
    pub menses: bool,
}

/// Daily BBT / menstruation-onset series for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleDataset {
    pub subject_id: String,
    /// Calendar date of the first record, when known.
    pub start_date: Option<NaiveDate>,
    records: Vec<DayRecord>,
}

impl CycleDataset {
    /// Validates the records; BBT readings outside [`BBT_WINDOW`] (or non-finite)
    /// become missing with a logged warning.
    pub fn new(subject_id: impl Into<String>, start_date: Option<NaiveDate>, mut records: Vec<DayRecord>) -> Result<Self> {
        let subject_id = subject_id.into();
        if records.is_empty() {
            return Err(Error::InvalidInput("dataset must contain at least one day".into()));
        }
        for (t, r) in records.iter_mut().enumerate() {
            if let Some(y) = r.bbt {
                if !(y.is_finite() && y >= BBT_WINDOW.0 && y <= BBT_WINDOW.1) {
                    log::warn!("{subject_id}: day {} BBT {y} outside plausible range, treated as missing", t + 1);
                    r.bbt = None;
                }
            }
        }
        Ok(Self { subject_id, start_date, records })
    }

    pub fn records(&self) -> &[DayRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Zero-based indices of the days flagged as menstruation onset.
    pub fn onset_days(&self) -> Vec<usize> {
        self.records.iter().enumerate().filter(|(_, r)| r.menses).map(|(t, _)| t).collect()
    }

    pub fn n_missing(&self) -> usize {
        self.records.iter().filter(|r| r.bbt.is_none()).count()
    }

    /// Sub-series `[start, end)`; the start date moves with it.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidInput(format!("invalid day range {start}..{end} for {} days", self.len())));
        }
        Ok(Self {
            subject_id: self.subject_id.clone(),
            start_date: self.start_date.map(|d| d + chrono::Days::new(start as u64)),
            records: self.records[start..end].to_vec(),
        })
    }

    pub fn date_of(&self, day: usize) -> Option<NaiveDate> {
        self.start_date.map(|d| d + chrono::Days::new(day as u64))
    }

    /// Lengths (days) of the complete onset-to-onset cycles.
    pub fn cycle_lengths(&self) -> Vec<usize> {
        self.onset_days().windows(2).map(|w| w[1] - w[0]).collect()
    }
}
