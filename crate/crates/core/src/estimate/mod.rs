//! Maximum likelihood fitting, harmonic-order selection by AIC, and Wald
//! intervals.
//!
//! The search runs in unconstrained coordinates (ln α, ln β, ln σ, a, b, c)
//! using the grid filter's log-likelihood as the objective.

pub mod nelder_mead;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridfilter::log_likelihood;
use crate::model::{CycleDataset, ModelParams, PhaseGrid};
use crate::simulate::VariateSource;
use nelder_mead::{minimize, SimplexOptions};

/// Largest supported harmonic order.
pub const MAX_ORDER: usize = 12;
/// Expected cycle lengths (days) outside this window mark a fit as degenerate.
pub const PLAUSIBLE_CYCLE_DAYS: (f64, f64) = (10.0, 120.0);
const Z_95: f64 = 1.959963984540054;

/// Optimiser settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    /// Evaluation budget for each simplex run.
    pub max_evals: usize,
    /// Convergence threshold on the spread of −loglik across the simplex.
    pub ftol: f64,
    /// Convergence threshold on the simplex size (transformed coordinates).
    pub xtol: f64,
    /// Restarts after the first run, each from the incumbent jittered.
    pub restarts: usize,
    /// A restart improving −loglik by less than this ends the search early.
    pub restart_tol: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { max_evals: 20_000, ftol: 1e-6, xtol: 1e-4, restarts: 3, restart_tol: 1e-3, seed: 20_190_101 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub evaluations: usize,
    pub iterations: usize,
    pub runs: usize,
    pub converged: bool,
    pub final_f_spread: f64,
    pub final_x_spread: f64,
}

/// Wald intervals on the natural scale, in [`ModelParams::names`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceIntervals {
    pub names: Vec<String>,
    /// `None` where the Hessian gave no usable variance.
    pub intervals: Vec<Option<(f64, f64)>>,
    /// Inverse Hessian in unconstrained coordinates, when invertible.
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl ConfidenceIntervals {
    /// Interval for ln(β/α) = θ_β − θ_α, the log mean cycle length.
    pub fn log_cycle_length(&self, fit: &FitResult) -> Option<(f64, f64)> {
        let cov = self.covariance.as_ref()?;
        let var = cov[0][0] + cov[1][1] - 2.0 * cov[0][1];
        if !(var > 0.0 && var.is_finite()) {
            return None;
        }
        let centre = fit.params.expected_cycle_length().ln();
        let half = Z_95 * var.sqrt();
        Some((centre - half, centre + half))
    }
}

/// Result of a maximum likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub grid_size: usize,
    pub trace: OptimizerTrace,
    pub ci: Option<ConfidenceIntervals>,
}

pub fn aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

/// Starting point: α = 1 and β = observed mean cycle length, and a, b, c, σ
/// from least squares of BBT on harmonics of the empirical phase
/// (days since onset over cycle length) within complete cycles.
pub fn initial_params(data: &CycleDataset, order: usize) -> Result<ModelParams> {
    let onsets = data.onset_days();
    if onsets.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "fitting needs at least two menstruation onsets, found {}",
            onsets.len()
        )));
    }
    let lengths = data.cycle_lengths();
    let mean_len = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;

    let mut phases = Vec::new();
    let mut temps = Vec::new();
    for w in onsets.windows(2) {
        let len = (w[1] - w[0]) as f64;
        for t in w[0]..w[1] {
            if let Some(y) = data.records()[t].bbt {
                phases.push((t - w[0]) as f64 / len);
                temps.push(y);
            }
        }
    }
    let cols = 2 * order + 1;
    let (a, b, c, sigma) = if temps.len() > cols + 1 {
        let design = DMatrix::from_fn(temps.len(), cols, |r, k| harmonic_column(phases[r], k));
        let y = DVector::from_vec(temps.clone());
        let coef = design
            .clone()
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::InvalidInput(format!("initial regression failed: {e}")))?;
        let resid = &y - &design * &coef;
        let sd = (resid.norm_squared() / (temps.len() - cols) as f64).sqrt();
        let b = (0..order).map(|m| coef[1 + 2 * m]).collect();
        let c = (0..order).map(|m| coef[2 + 2 * m]).collect();
        (coef[0], b, c, sd)
    } else {
        let all: Vec<f64> = data.records().iter().filter_map(|r| r.bbt).collect();
        let mean = if all.is_empty() { 36.5 } else { all.iter().sum::<f64>() / all.len() as f64 };
        let sd = if all.len() > 1 {
            (all.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (all.len() - 1) as f64).sqrt()
        } else {
            0.2
        };
        (mean, vec![0.0; order], vec![0.0; order], sd)
    };
    ModelParams::new(1.0, mean_len, sigma.max(0.01), a, b, c)
}

fn harmonic_column(omega: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let m = ((k - 1) / 2 + 1) as f64;
    let arg = 2.0 * std::f64::consts::PI * m * omega;
    if k % 2 == 1 {
        arg.cos()
    } else {
        arg.sin()
    }
}

fn initial_steps(order: usize) -> Vec<f64> {
    let mut s = vec![0.2, 0.2, 0.1, 0.02];
    s.extend(std::iter::repeat_n(0.03, 2 * order));
    s
}

fn objective<'a>(data: &'a CycleDataset, grid: &'a PhaseGrid) -> impl Fn(&[f64]) -> f64 + 'a {
    move |theta: &[f64]| match ModelParams::from_unconstrained(theta) {
        // exp(ln β − ln α) ≥ 1 would be more than one cycle per day
        Ok(p) if p.alpha < p.beta => log_likelihood(&p, data, grid).map(|ll| -ll).unwrap_or(f64::INFINITY),
        _ => f64::INFINITY,
    }
}

fn check_fit_inputs(data: &CycleDataset, order: usize) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::InvalidInput(format!("harmonic order must be in 1..={MAX_ORDER}, got {order}")));
    }
    if data.onset_days().len() < 2 {
        return Err(Error::InvalidInput("fitting needs at least two menstruation onsets".into()));
    }
    Ok(())
}

/// Maximum likelihood fit of order `order` from the moment-based start.
pub fn fit(data: &CycleDataset, order: usize, grid: &PhaseGrid, cfg: &OptimConfig) -> Result<FitResult> {
    check_fit_inputs(data, order)?;
    let start = initial_params(data, order)?;
    fit_from(data, &start, grid, cfg)
}

/// Maximum likelihood fit starting from `start` (its order fixes M).
pub fn fit_from(data: &CycleDataset, start: &ModelParams, grid: &PhaseGrid, cfg: &OptimConfig) -> Result<FitResult> {
    check_fit_inputs(data, start.order())?;
    let order = start.order();
    let f = objective(data, grid);
    let steps = initial_steps(order);
    let opts = SimplexOptions { max_evals: cfg.max_evals, ftol: cfg.ftol, xtol: cfg.xtol };
    let mut jitter = VariateSource::new(cfg.seed);

    let mut best = minimize(&f, &start.to_unconstrained(), &steps, &opts);
    let mut trace = OptimizerTrace {
        evaluations: best.evals,
        iterations: best.iterations,
        runs: 1,
        converged: best.converged,
        final_f_spread: best.f_spread,
        final_x_spread: best.x_spread,
    };
    for _ in 0..cfg.restarts {
        let x0: Vec<f64> = best.x.iter().zip(&steps).map(|(x, s)| x + 0.5 * s * jitter.standard_normal()).collect();
        let run = minimize(&f, &x0, &steps, &opts);
        trace.evaluations += run.evals;
        trace.iterations += run.iterations;
        trace.runs += 1;
        let gain = best.fx - run.fx;
        let stop = run.converged && gain < cfg.restart_tol;
        if run.fx < best.fx {
            best = run;
        }
        trace.converged = best.converged;
        trace.final_f_spread = best.f_spread;
        trace.final_x_spread = best.x_spread;
        if stop {
            break;
        }
    }
    if !best.fx.is_finite() || !trace.converged {
        return Err(Error::NonConvergence { restarts: trace.runs - 1, evaluations: trace.evaluations });
    }
    let params = ModelParams::from_unconstrained(&best.x)?;
    let loglik = log_likelihood(&params, data, grid)?;
    let cycle = params.expected_cycle_length();
    if !(PLAUSIBLE_CYCLE_DAYS.0..=PLAUSIBLE_CYCLE_DAYS.1).contains(&cycle) {
        return Err(Error::DegenerateFit { cycle_length: cycle });
    }
    let n_params = params.n_params();
    Ok(FitResult { params, loglik, aic: aic(loglik, n_params), n_params, grid_size: grid.n(), trace, ci: None })
}

/// One row of the order-selection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicRow {
    pub order: usize,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub n_params: usize,
    /// Why the fit for this order failed, if it did.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSelection {
    pub best: FitResult,
    pub table: Vec<AicRow>,
}

/// Fits every order in `orders` independently and keeps the minimum-AIC fit.
pub fn select_order(
    data: &CycleDataset,
    orders: std::ops::RangeInclusive<usize>,
    grid: &PhaseGrid,
    cfg: &OptimConfig,
) -> Result<OrderSelection> {
    let mut best: Option<FitResult> = None;
    let mut table = Vec::new();
    let mut last_err = None;
    for m in orders {
        match fit(data, m, grid, cfg) {
            Ok(fr) => {
                table.push(AicRow { order: m, loglik: Some(fr.loglik), aic: Some(fr.aic), n_params: fr.n_params, error: None });
                if best.as_ref().is_none_or(|b| fr.aic < b.aic) {
                    best = Some(fr);
                }
            }
            Err(e) => {
                log::warn!("order {m} fit failed: {e}");
                table.push(AicRow { order: m, loglik: None, aic: None, n_params: 2 * m + 4, error: Some(e.to_string()) });
                last_err = Some(e);
            }
        }
    }
    match best {
        Some(best) => Ok(OrderSelection { best, table }),
        None => Err(last_err.unwrap_or_else(|| Error::InvalidInput("empty order range".into()))),
    }
}

/// Central-difference Hessian of `f` at `x` with per-coordinate steps `h`.
pub fn numerical_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let at = |moves: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(k, d) in moves {
            y[k] += d;
        }
        f(&y)
    };
    let mut hess = DMatrix::zeros(n, n);
    for k in 0..n {
        hess[(k, k)] = (at(&[(k, h[k])]) - 2.0 * f0 + at(&[(k, -h[k])])) / (h[k] * h[k]);
        for l in 0..k {
            let v = (at(&[(k, h[k]), (l, h[l])]) - at(&[(k, h[k]), (l, -h[l])]) - at(&[(k, -h[k]), (l, h[l])])
                + at(&[(k, -h[k]), (l, -h[l])]))
                / (4.0 * h[k] * h[l]);
            hess[(k, l)] = v;
            hess[(l, k)] = v;
        }
    }
    hess
}

/// 95% Wald intervals from the observed information in unconstrained
/// coordinates; α, β and σ are mapped back through `exp`.
pub fn confidence_intervals(fit: &FitResult, data: &CycleDataset, grid: &PhaseGrid) -> Result<ConfidenceIntervals> {
    if !fit.trace.converged {
        return Err(Error::InvalidInput("confidence intervals need a converged fit".into()));
    }
    let theta = fit.params.to_unconstrained();
    let f = objective(data, grid);
    let steps = vec![1e-3; theta.len()];
    let hess = numerical_hessian(&f, &theta, &steps);
    let names = ModelParams::names(fit.params.order());
    if hess.iter().any(|v| !v.is_finite()) {
        log::warn!("Hessian has non-finite entries; intervals unavailable");
        return Ok(ConfidenceIntervals { intervals: vec![None; names.len()], names, covariance: None });
    }
    let cov = match hess.clone().try_inverse() {
        Some(c) => c,
        None => {
            log::warn!("{}", Error::SingularHessian);
            return Ok(ConfidenceIntervals { intervals: vec![None; names.len()], names, covariance: None });
        }
    };
    let intervals = (0..theta.len())
        .map(|k| {
            let var = cov[(k, k)];
            if !(var > 0.0 && var.is_finite()) {
                return None;
            }
            let half = Z_95 * var.sqrt();
            let (lo, hi) = (theta[k] - half, theta[k] + half);
            Some(if k < 3 { (lo.exp(), hi.exp()) } else { (lo, hi) })
        })
        .collect();
    let covariance = Some((0..theta.len()).map(|r| (0..theta.len()).map(|c| cov[(r, c)]).collect()).collect());
    Ok(ConfidenceIntervals { names, intervals, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DayRecord;
    use crate::simulate::simulate;

    fn subject_two() -> ModelParams {
        ModelParams::new(0.953, 32.131, 0.161, 36.203, vec![0.197], vec![-0.108]).unwrap()
    }

    // twelve-day cycles stay well inside the coarse test grids, which cannot
    // represent cycles longer than N days
    fn short_cycles() -> ModelParams {
        ModelParams::new(2.0, 24.0, 0.15, 36.3, vec![0.2], vec![-0.1]).unwrap()
    }

    fn quick() -> OptimConfig {
        OptimConfig { restarts: 1, ..OptimConfig::default() }
    }

    #[test]
    fn aic_identity() {
        assert_eq!(aic(-100.0, 6), 212.0);
        let (ll1, ll2) = (-512.25, -509.0);
        assert_eq!(aic(ll1, 6) - aic(ll2, 10), -2.0 * (ll1 - ll2) + 4.0 * (1.0 - 3.0));
    }

    #[test]
    fn initial_point_tracks_moments() {
        let sim = simulate(&subject_two(), 1200, 0.05, 3).unwrap();
        let p = initial_params(&sim.dataset, 1).unwrap();
        let lens = sim.dataset.cycle_lengths();
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        assert_eq!(p.alpha, 1.0);
        assert_eq!(p.beta, mean);
        assert!((p.a - 36.203).abs() < 0.05);
        assert!(p.sigma > 0.1 && p.sigma < 0.3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = PhaseGrid::new(16).unwrap();
        let one_onset = CycleDataset::new("x", None, vec![DayRecord { bbt: Some(36.3), menses: true }; 1]).unwrap();
        assert!(matches!(fit(&one_onset, 1, &grid, &quick()), Err(Error::InvalidInput(_))));
        let sim = simulate(&short_cycles(), 200, 0.0, 3).unwrap();
        assert!(fit(&sim.dataset, 0, &grid, &quick()).is_err());
        assert!(fit(&sim.dataset, 13, &grid, &quick()).is_err());
    }

    #[test]
    fn fit_reports_exact_loglik_and_is_deterministic() {
        let grid = PhaseGrid::new(32).unwrap();
        let sim = simulate(&short_cycles(), 400, 0.0, 17).unwrap();
        let a = fit(&sim.dataset, 1, &grid, &quick()).unwrap();
        let b = fit(&sim.dataset, 1, &grid, &quick()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loglik, log_likelihood(&a.params, &sim.dataset, &grid).unwrap());
        assert_eq!(a.aic, -2.0 * a.loglik + 2.0 * 6.0);
        assert!(a.trace.converged);
    }

    #[test]
    fn refit_from_truth_does_not_lose_likelihood() {
        let grid = PhaseGrid::new(32).unwrap();
        let truth = short_cycles();
        let sim = simulate(&truth, 400, 0.0, 5).unwrap();
        let at_truth = log_likelihood(&truth, &sim.dataset, &grid).unwrap();
        let fr = fit_from(&sim.dataset, &truth, &grid, &quick()).unwrap();
        assert!(fr.loglik >= at_truth);
    }

    #[test]
    fn rotated_starts_reach_same_optimum() {
        let grid = PhaseGrid::new(32).unwrap();
        let sim = simulate(&short_cycles(), 400, 0.0, 8).unwrap();
        let base = initial_params(&sim.dataset, 1).unwrap();
        // rotate (b1, c1) as a shift of the phase origin would
        let rot = |p: &ModelParams, phi: f64| {
            let mut q = p.clone();
            q.b[0] = p.b[0] * phi.cos() - p.c[0] * phi.sin();
            q.c[0] = p.b[0] * phi.sin() + p.c[0] * phi.cos();
            q
        };
        let a = fit_from(&sim.dataset, &rot(&base, 0.4), &grid, &quick()).unwrap();
        let b = fit_from(&sim.dataset, &rot(&base, -0.4), &grid, &quick()).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-3, "{} vs {}", a.loglik, b.loglik);
    }

    #[test]
    fn selection_table_is_consistent() {
        let grid = PhaseGrid::new(32).unwrap();
        let sim = simulate(&short_cycles(), 300, 0.0, 2).unwrap();
        let sel = select_order(&sim.dataset, 1..=3, &grid, &quick()).unwrap();
        assert_eq!(sel.table.len(), 3);
        let best_aic = sel.table.iter().filter_map(|r| r.aic).fold(f64::INFINITY, f64::min);
        assert_eq!(sel.best.aic, best_aic);
        for r in &sel.table {
            assert_eq!(r.n_params, 2 * r.order + 4);
            if let (Some(ll), Some(a)) = (r.loglik, r.aic) {
                assert_eq!(a, -2.0 * ll + 2.0 * r.n_params as f64);
            }
        }
    }

    #[test]
    fn hessian_of_quadratic() {
        let f = |x: &[f64]| 2.0 * x[0] * x[0] + 3.0 * x[0] * x[1] + 5.0 * x[1] * x[1];
        let h = numerical_hessian(f, &[0.3, -0.7], &[1e-3, 1e-3]);
        assert!((h[(0, 0)] - 4.0).abs() < 1e-6);
        assert!((h[(0, 1)] - 3.0).abs() < 1e-6);
        assert!((h[(1, 1)] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn sigma_interval_is_positive_and_brackets() {
        let grid = PhaseGrid::new(32).unwrap();
        let sim = simulate(&short_cycles(), 500, 0.0, 12).unwrap();
        let fr = fit(&sim.dataset, 1, &grid, &quick()).unwrap();
        let ci = confidence_intervals(&fr, &sim.dataset, &grid).unwrap();
        let (lo, hi) = ci.intervals[2].unwrap();
        assert!(lo > 0.0 && lo < fr.params.sigma && fr.params.sigma < hi);
        let (alo, ahi) = ci.intervals[0].unwrap();
        // exponentiated bounds sit asymmetrically about the estimate
        assert!(ahi - fr.params.alpha > fr.params.alpha - alo);
    }
}
