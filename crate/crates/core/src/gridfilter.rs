//! Fixed-grid non-Gaussian filter over the pair (ω_t, ω_{t-1}).
//!
//! Densities live on the N×N grid with the convention that a density `p`
//! integrates as `(1/N²) Σ_i Σ_j p(i, j)`; marginals integrate as
//! `(1/N) Σ_i p(i)`.
//!
//! [`predict_step`] and [`filter_step`] operate on materialised joints and
//! mirror the recursions one-to-one. [`run_filter`] uses the equivalent
//! marginal form: the filtering joint of day t is
//! `L_y(i) L_z(i,j) dens(i,j) m_{t-1}(j) / c_t`, so keeping the day's
//! likelihood factors and the previous marginal is enough to rebuild it on
//! demand. This keeps memory at O(T·N) even in retained mode.

use crate::densities::normal_log_kernel;
use crate::error::{Error, Result};
use crate::model::{CycleDataset, DayRecord, ModelParams, PhaseGrid, TransitionTable};

/// Normaliser below which an observation is declared impossible.
pub const MIN_NORMALISER: f64 = 1e-300;

/// Joint density over (current phase i, previous phase j), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDensity {
    n: usize,
    /// Zero-based day index.
    pub t: usize,
    vals: Vec<f64>,
}

impl JointDensity {
    pub fn from_vals(n: usize, t: usize, vals: Vec<f64>) -> Result<Self> {
        if vals.len() != n * n {
            return Err(Error::InvalidInput(format!("expected {} values, got {}", n * n, vals.len())));
        }
        Ok(Self { n, t, vals })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.vals[i * self.n + j]
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    /// `(1/N²) Σ_i Σ_j vals`.
    pub fn total_mass(&self) -> f64 {
        self.vals.iter().sum::<f64>() / (self.n * self.n) as f64
    }

    /// Marginal density of the current phase, `(1/N) Σ_j vals[i][j]`.
    pub fn current_marginal(&self) -> Vec<f64> {
        self.vals.chunks(self.n).map(|row| row.iter().sum::<f64>() / self.n as f64).collect()
    }

    /// Marginal density of the previous phase, `(1/N) Σ_i vals[i][j]`.
    pub fn previous_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for row in self.vals.chunks(self.n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.n as f64);
        out
    }
}

/// `vals[i][j] = dens[i][j] · prev_marginal[j]`.
pub fn predict_step(prev_marginal: &[f64], trans: &TransitionTable) -> JointDensity {
    let n = trans.n();
    assert_eq!(prev_marginal.len(), n, "marginal length must match the grid");
    let mut vals = Vec::with_capacity(n * n);
    for i in 0..n {
        vals.extend(trans.row(i).iter().zip(prev_marginal).map(|(d, m)| d * m));
    }
    JointDensity { n, t: 0, vals }
}

/// Bayes update of a predictive joint with the day's BBT reading and onset
/// flag. Returns the filtering joint and `log c`, the log of the one-step
/// predictive likelihood of the observation.
pub fn filter_step(
    pred: &JointDensity,
    y: Option<f64>,
    z: bool,
    params: &ModelParams,
    grid: &PhaseGrid,
    trans: &TransitionTable,
) -> Result<(JointDensity, f64)> {
    let n = grid.n();
    if pred.n != n || trans.n() != n {
        return Err(Error::InvalidInput("grid sizes of inputs disagree".into()));
    }
    let ly: Vec<f64> = match y {
        Some(y) => (0..n)
            .map(|i| crate::densities::normal_pdf(y, params.mean_bbt(grid.point(i)), params.sigma))
            .collect::<Result<_>>()?,
        None => vec![1.0; n],
    };
    let mut vals = pred.vals.clone();
    for i in 0..n {
        for j in 0..n {
            let lz = if TransitionTable::wraps(i, j) == z { 1.0 } else { 0.0 };
            vals[i * n + j] *= ly[i] * lz;
        }
    }
    let c = vals.iter().sum::<f64>() / (n * n) as f64;
    if !(c >= MIN_NORMALISER && c.is_finite()) {
        return Err(Error::DegenerateLikelihood { day: pred.t + 1 });
    }
    vals.iter_mut().for_each(|v| *v /= c);
    Ok((JointDensity { n, t: pred.t, vals }, c.ln()))
}

/// BBT likelihood on the grid, scaled by its maximum for numerical range.
struct BbtLikelihood {
    mean_curve: Vec<f64>,
    sigma: f64,
    log_norm: f64,
}

impl BbtLikelihood {
    fn new(params: &ModelParams, grid: &PhaseGrid) -> Self {
        Self {
            mean_curve: grid.mean_curve(params),
            sigma: params.sigma,
            log_norm: -0.5 * (2.0 * std::f64::consts::PI).ln() - params.sigma.ln(),
        }
    }

    /// Fills `out` with `L_y(i) / exp(shift)` and returns `shift`.
    fn fill(&self, y: Option<f64>, out: &mut [f64]) -> f64 {
        match y {
            None => {
                out.iter_mut().for_each(|v| *v = 1.0);
                0.0
            }
            Some(y) => {
                let mut min_k = f64::INFINITY;
                for (o, mu) in out.iter_mut().zip(&self.mean_curve) {
                    *o = normal_log_kernel(y, *mu, self.sigma);
                    min_k = min_k.min(*o);
                }
                out.iter_mut().for_each(|v| *v = (min_k - *v).exp());
                self.log_norm - min_k
            }
        }
    }
}

/// Per-day quantities that determine the filtering joint.
#[derive(Debug, Clone)]
struct DayFactors {
    ly: Vec<f64>,
    z: bool,
    /// Normaliser of the scaled weights (`c_t / exp(shift)`).
    scaled_c: f64,
}

/// Whether per-day joints can be reconstructed after the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    /// Keep only the latest marginal (likelihood evaluation).
    Streaming,
    /// Keep every day's marginal and likelihood factors.
    Retained,
}

/// Output of [`run_filter`].
#[derive(Debug, Clone)]
pub struct FilterResult {
    n: usize,
    /// Filtering marginals of ω_t. One per day when retained, otherwise only the last day.
    pub filter_marginals: Vec<Vec<f64>>,
    /// `log c_t` per day.
    pub step_loglik: Vec<f64>,
    pub total_loglik: f64,
    days: Option<Vec<DayFactors>>,
}

impl FilterResult {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_days(&self) -> usize {
        self.step_loglik.len()
    }

    pub fn is_retained(&self) -> bool {
        self.days.is_some()
    }

    /// Filtering marginal after assimilating the last day.
    pub fn last_marginal(&self) -> &[f64] {
        self.filter_marginals.last().expect("filter ran on at least one day")
    }

    fn prev_marginal(&self, t: usize) -> Vec<f64> {
        if t == 0 {
            vec![1.0; self.n]
        } else {
            self.filter_marginals[t - 1].clone()
        }
    }

    /// Predictive joint of day `t` (zero-based).
    pub fn predictive_joint(&self, t: usize, trans: &TransitionTable) -> Result<JointDensity> {
        self.check_day(t)?;
        let mut jd = predict_step(&self.prev_marginal(t), trans);
        jd.t = t;
        Ok(jd)
    }

    /// Filtering joint of day `t` (zero-based).
    pub fn filtering_joint(&self, t: usize, trans: &TransitionTable) -> Result<JointDensity> {
        self.check_day(t)?;
        let day = &self.days.as_ref().expect("checked")[t];
        let prev = self.prev_marginal(t);
        let n = self.n;
        let mut vals = vec![0.0; n * n];
        for i in 0..n {
            let row = trans.row(i);
            for j in 0..n {
                if TransitionTable::wraps(i, j) == day.z {
                    vals[i * n + j] = day.ly[i] * row[j] * prev[j] / day.scaled_c;
                }
            }
        }
        Ok(JointDensity { n, t, vals })
    }

    fn check_day(&self, t: usize) -> Result<()> {
        if self.days.is_none() {
            return Err(Error::NotRetained);
        }
        if t >= self.n_days() {
            return Err(Error::InvalidInput(format!("day {t} beyond the {} filtered days", self.n_days())));
        }
        Ok(())
    }
}

/// Reusable state for the day-by-day marginal recursion.
pub struct FilterState<'a> {
    trans: &'a TransitionTable,
    bbt: BbtLikelihood,
    marginal: Vec<f64>,
    ly: Vec<f64>,
    day: usize,
}

impl<'a> FilterState<'a> {
    /// Starts from a uniform distribution for the phase before day 1.
    pub fn new(params: &ModelParams, grid: &PhaseGrid, trans: &'a TransitionTable) -> Result<Self> {
        params.validate()?;
        if trans.n() != grid.n() {
            return Err(Error::InvalidInput("transition table and grid sizes disagree".into()));
        }
        Ok(Self {
            trans,
            bbt: BbtLikelihood::new(params, grid),
            marginal: vec![1.0; grid.n()],
            ly: vec![1.0; grid.n()],
            day: 0,
        })
    }

    /// Current filtering marginal (uniform before any day is assimilated).
    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    /// Assimilates one day and returns `log c_t`.
    pub fn step(&mut self, rec: &DayRecord) -> Result<f64> {
        let (log_c, _) = self.step_inner(rec)?;
        Ok(log_c)
    }

    fn step_inner(&mut self, rec: &DayRecord) -> Result<(f64, f64)> {
        let n = self.marginal.len();
        let shift = self.bbt.fill(rec.bbt, &mut self.ly);
        let mut total = 0.0;
        let mut next = vec![0.0; n];
        for (i, out) in next.iter_mut().enumerate() {
            let row = self.trans.row(i);
            // z = 0 keeps j < i (strict advance), z = 1 keeps j >= i (wrap)
            let (r, m) = if rec.menses { (&row[i..], &self.marginal[i..]) } else { (&row[..i], &self.marginal[..i]) };
            let s = dot(r, m);
            *out = self.ly[i] * s;
            total += *out;
        }
        let scaled_c = total / (n * n) as f64;
        self.day += 1;
        if !(scaled_c >= MIN_NORMALISER && scaled_c.is_finite()) {
            return Err(Error::DegenerateLikelihood { day: self.day });
        }
        let norm = n as f64 * scaled_c;
        next.iter_mut().for_each(|v| *v /= norm);
        self.marginal = next;
        Ok((scaled_c.ln() + shift, scaled_c))
    }
}

/// Dot product with independent partial sums so the adds can pipeline.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0; LANES];
    let (ca, ra) = a.split_at(a.len() - a.len() % LANES);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(LANES).zip(cb.chunks_exact(LANES)) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

/// Runs the filter over every day of `data`, starting from a uniform phase.
pub fn run_filter(
    params: &ModelParams,
    data: &CycleDataset,
    grid: &PhaseGrid,
    trans: &TransitionTable,
    retention: Retention,
) -> Result<FilterResult> {
    let mut state = FilterState::new(params, grid, trans)?;
    let t_len = data.len();
    let mut step_loglik = Vec::with_capacity(t_len);
    let mut marginals = Vec::new();
    let mut days = match retention {
        Retention::Retained => Some(Vec::with_capacity(t_len)),
        Retention::Streaming => None,
    };
    for rec in data.records() {
        let (log_c, scaled_c) = state.step_inner(rec)?;
        step_loglik.push(log_c);
        if let Some(days) = days.as_mut() {
            days.push(DayFactors { ly: state.ly.clone(), z: rec.menses, scaled_c });
            marginals.push(state.marginal.clone());
        }
    }
    if days.is_none() {
        marginals.push(state.marginal.clone());
    }
    let total_loglik = step_loglik.iter().sum();
    Ok(FilterResult { n: grid.n(), filter_marginals: marginals, step_loglik, total_loglik, days })
}

/// Builds the grid and transition table and returns only the log-likelihood.
pub fn log_likelihood(params: &ModelParams, data: &CycleDataset, grid: &PhaseGrid) -> Result<f64> {
    let trans = TransitionTable::build(params, grid)?;
    let mut state = FilterState::new(params, grid, &trans)?;
    let mut total = 0.0;
    for rec in data.records() {
        total += state.step(rec)?;
    }
    Ok(total)
}

/// Fixed-interval smoothing output.
#[derive(Debug, Clone)]
pub struct Smoothed {
    /// Smoothed marginal density of ω_t for every day.
    pub marginals: Vec<Vec<f64>>,
    /// `p_s'(i, t+1) / p_f'(i, t)` divided by the day's renormaliser; all ones on the last day.
    ratios: Vec<Vec<f64>>,
}

impl Smoothed {
    pub fn n_days(&self) -> usize {
        self.marginals.len()
    }

    /// Smoothed joint of day `t`: the filtering joint reweighted row-wise.
    pub fn joint(&self, t: usize, fr: &FilterResult, trans: &TransitionTable) -> Result<JointDensity> {
        let mut jd = fr.filtering_joint(t, trans)?;
        let n = jd.n;
        for (row, r) in jd.vals.chunks_mut(n).zip(&self.ratios[t]) {
            row.iter_mut().for_each(|v| *v *= r);
        }
        Ok(jd)
    }

    /// Every smoothed joint, in day order.
    pub fn joints<'a>(
        &'a self,
        fr: &'a FilterResult,
        trans: &'a TransitionTable,
    ) -> impl Iterator<Item = Result<JointDensity>> + 'a {
        (0..self.n_days()).map(move |t| self.joint(t, fr, trans))
    }
}

/// Backward smoothing pass. Requires a retained filter run.
pub fn smooth(fr: &FilterResult, trans: &TransitionTable) -> Result<Smoothed> {
    let days = fr.days.as_ref().ok_or(Error::NotRetained)?;
    let n = fr.n;
    let t_len = fr.n_days();
    if t_len == 0 {
        return Ok(Smoothed { marginals: vec![], ratios: vec![] });
    }
    let mut marginals = vec![Vec::new(); t_len];
    let mut ratios = vec![Vec::new(); t_len];

    let last = t_len - 1;
    marginals[last] = fr.filter_marginals[last].clone();
    ratios[last] = vec![1.0; n];
    // q(j) = (1/N) Σ_i p_s(i, j, t): smoothed density of the previous phase
    let mut q = previous_phase_mass(fr, trans, days, last, &ratios[last]);

    for t in (0..last).rev() {
        let f = &fr.filter_marginals[t];
        let mut r: Vec<f64> = f.iter().zip(&q).map(|(&fi, &qi)| if fi > 0.0 { qi / fi } else { 0.0 }).collect();
        let kappa: f64 = f.iter().zip(&r).map(|(fi, ri)| fi * ri).sum::<f64>() / n as f64;
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::DegenerateLikelihood { day: t + 1 });
        }
        r.iter_mut().for_each(|v| *v /= kappa);
        marginals[t] = f.iter().zip(&r).map(|(fi, ri)| fi * ri).collect();
        q = previous_phase_mass(fr, trans, days, t, &r);
        ratios[t] = r;
    }
    Ok(Smoothed { marginals, ratios })
}

/// `(1/N) Σ_i r(i) p_f(i, j, t)` for every j.
fn previous_phase_mass(fr: &FilterResult, trans: &TransitionTable, days: &[DayFactors], t: usize, r: &[f64]) -> Vec<f64> {
    let n = fr.n;
    let day = &days[t];
    let prev = fr.prev_marginal(t);
    let mut acc = vec![0.0; n];
    for i in 0..n {
        let w = day.ly[i] * r[i];
        if w == 0.0 {
            continue;
        }
        let row = trans.row(i);
        let range = if day.z { i..n } else { 0..i };
        for j in range {
            acc[j] += w * row[j];
        }
    }
    acc.iter_mut()
        .zip(&prev)
        .for_each(|(a, m)| *a *= m / (n as f64 * day.scaled_c));
    acc
}
