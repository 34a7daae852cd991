//! Day-of-onset forecasts.
//!
//! Given the phase ω today, the accumulated advance over the next k days is
//! Gamma(kα, β); the next onset has happened by day k once it exceeds 1 − ω.

use crate::densities::regularized_gamma;
use crate::error::{domain, Error, Result};
use crate::model::{ModelParams, PhaseGrid};

/// Probability mass that a forecast horizon must capture.
pub const MASS_TOLERANCE: f64 = 1e-6;
/// Largest horizon the automatic search will try.
pub const MAX_HORIZON: usize = 365 * 16;

fn check_phase(omega: f64) -> Result<()> {
    if !(0.0..1.0).contains(&omega) {
        return domain(format!("phase must lie in [0, 1), got {omega}"));
    }
    Ok(())
}

/// (P, Q) of the advance over `k` days evaluated at the distance to the wrap.
fn advance_tail(k: usize, omega: f64, params: &ModelParams) -> Result<(f64, f64)> {
    if k == 0 {
        return Ok((1.0, 0.0));
    }
    let g = regularized_gamma(k as f64 * params.alpha, params.beta * (1.0 - omega))?;
    Ok((g.lower, g.upper))
}

/// Probability that the next onset occurs within `k` days, `F(k | ω)`.
/// `F(0 | ω) = 0`.
pub fn onset_cdf(k: usize, omega: f64, params: &ModelParams) -> Result<f64> {
    check_phase(omega)?;
    params.validate()?;
    Ok(advance_tail(k, omega, params)?.1)
}

/// Probability that the next onset occurs exactly `k >= 1` days ahead.
pub fn onset_pmf(k: usize, omega: f64, params: &ModelParams) -> Result<f64> {
    if k == 0 {
        return domain("onset_pmf is defined for k >= 1");
    }
    check_phase(omega)?;
    params.validate()?;
    let before = advance_tail(k - 1, omega, params)?;
    let at = advance_tail(k, omega, params)?;
    Ok(pmf_from_tails(before, at))
}

/// Difference of distribution functions, taken on whichever side avoids
/// cancellation.
#[inline]
fn pmf_from_tails((p_prev, q_prev): (f64, f64), (p_k, q_k): (f64, f64)) -> f64 {
    let v = if q_k <= 0.5 { q_k - q_prev } else { p_prev - p_k };
    v.max(0.0)
}

/// Forecast of the day of the next onset.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetForecast {
    /// `probs[k - 1]` is the probability the onset is `k` days ahead.
    pub probs: Vec<f64>,
    /// Most probable number of days ahead (smallest on ties).
    pub k_star: usize,
    pub mass_captured: f64,
}

impl OnsetForecast {
    pub fn horizon(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, k: usize) -> f64 {
        if k == 0 || k > self.probs.len() {
            0.0
        } else {
            self.probs[k - 1]
        }
    }
}

/// One-based position of the first maximum.
pub fn first_argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = idx;
        }
    }
    best + 1
}

/// Grid average of `f(k | ω(i))` weighted by the filtering marginal, for
/// `k = 1..=k_max`.
pub fn onset_marginal(marginal: &[f64], grid: &PhaseGrid, params: &ModelParams, k_max: usize) -> Result<OnsetForecast> {
    let n = grid.n();
    if marginal.len() != n {
        return Err(Error::InvalidInput(format!("marginal has {} entries for a grid of {n}", marginal.len())));
    }
    if k_max == 0 {
        return Err(Error::InvalidInput("forecast horizon must be at least one day".into()));
    }
    params.validate()?;
    let mut probs = vec![0.0; k_max];
    for (i, &w) in marginal.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let omega = grid.point(i);
        let mut prev = (1.0, 0.0);
        for (k, slot) in probs.iter_mut().enumerate() {
            let at = advance_tail(k + 1, omega, params)?;
            *slot += w * pmf_from_tails(prev, at) / n as f64;
            if at.0 == 0.0 {
                break;
            }
            prev = at;
        }
    }
    let mass_captured: f64 = probs.iter().sum();
    if mass_captured < 1.0 - MASS_TOLERANCE {
        return Err(Error::HorizonTooShort { k_max, mass: mass_captured });
    }
    let k_star = first_argmax(&probs);
    Ok(OnsetForecast { probs, k_star, mass_captured })
}

/// Starting horizon: three mean cycle lengths, clamped to [60, 365] days.
pub fn default_horizon(params: &ModelParams) -> usize {
    let three_cycles = (3.0 * params.expected_cycle_length()).ceil();
    three_cycles.clamp(60.0, 365.0) as usize
}

/// [`onset_marginal`] with the default horizon, doubled until the captured
/// mass reaches `1 - MASS_TOLERANCE` or [`MAX_HORIZON`] is exceeded.
pub fn forecast_onset(marginal: &[f64], grid: &PhaseGrid, params: &ModelParams) -> Result<OnsetForecast> {
    let mut k_max = default_horizon(params);
    loop {
        match onset_marginal(marginal, grid, params, k_max) {
            Err(Error::HorizonTooShort { .. }) if k_max * 2 <= MAX_HORIZON => k_max *= 2,
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn subject_two() -> ModelParams {
        ModelParams::new(0.953, 32.131, 0.161, 36.203, vec![0.197], vec![-0.108]).unwrap()
    }

    fn with_advance(alpha: f64, beta: f64) -> ModelParams {
        ModelParams::new(alpha, beta, 0.2, 36.3, vec![0.2], vec![0.0]).unwrap()
    }

    #[test]
    fn cdf_erlang_case() {
        let p = with_advance(1.0, 3.0);
        assert_relative_eq!(onset_cdf(1, 0.0, &p).unwrap(), (-3.0f64).exp(), max_relative = 1e-13);
        // F(k|ω) = P(Poisson(β(1-ω)) <= k - 1) for α = 1
        let x: f64 = 3.0 * 0.6;
        let poisson_cdf_2 = (-x).exp() * (1.0 + x + x * x / 2.0);
        assert_relative_eq!(onset_cdf(3, 0.4, &p).unwrap(), poisson_cdf_2, max_relative = 1e-13);
        assert_eq!(onset_cdf(0, 0.3, &p).unwrap(), 0.0);
    }

    #[test]
    fn cdf_near_wrap_tends_to_one() {
        let p = subject_two();
        let vals: Vec<f64> = [0.9, 0.99, 0.999, 0.999999].iter().map(|&w| onset_cdf(1, w, &p).unwrap()).collect();
        assert!(vals.windows(2).all(|v| v[1] > v[0]));
        assert!(vals[3] > 0.99);
    }

    #[test]
    fn cdf_domain() {
        let p = subject_two();
        assert!(onset_cdf(1, 1.0, &p).is_err());
        assert!(onset_cdf(1, -0.1, &p).is_err());
        assert!(onset_pmf(0, 0.1, &p).is_err());
    }

    #[test]
    fn first_day_pmf_is_cdf() {
        let p = subject_two();
        for &w in &[0.0, 0.5, 0.97] {
            assert_eq!(onset_pmf(1, w, &p).unwrap(), onset_cdf(1, w, &p).unwrap());
        }
    }

    #[test]
    fn pmf_sums_to_one() {
        let p = subject_two();
        for &w in &[0.0, 0.13, 0.5, 0.9, 0.999] {
            let total: f64 = (1..=200).map(|k| onset_pmf(k, w, &p).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-8, "omega={w} total={total}");
        }
    }

    #[test]
    fn pmf_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let p = with_advance(rng.gen_range(0.1..3.0), rng.gen_range(3.0..70.0));
            let w = rng.gen_range(0.0..1.0);
            for k in 1..=200 {
                assert!(onset_pmf(k, w, &p).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn point_mass_gives_conditional_pmf() {
        let n = 64;
        let grid = PhaseGrid::new(n).unwrap();
        let p = subject_two();
        let mut m = vec![0.0; n];
        m[20] = n as f64;
        let fc = onset_marginal(&m, &grid, &p, 120).unwrap();
        for k in 1..=120 {
            assert_eq!(fc.prob(k), onset_pmf(k, grid.point(20), &p).unwrap());
        }
    }

    #[test]
    fn two_point_mixture_averages() {
        let n = 64;
        let grid = PhaseGrid::new(n).unwrap();
        let p = subject_two();
        let mut m = vec![0.0; n];
        m[3] = n as f64 / 2.0;
        m[40] = n as f64 / 2.0;
        let fc = onset_marginal(&m, &grid, &p, 120).unwrap();
        for k in 1..=120 {
            let expect = 0.5 * (onset_pmf(k, grid.point(3), &p).unwrap() + onset_pmf(k, grid.point(40), &p).unwrap());
            assert!((fc.prob(k) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn horizon_too_short_is_reported() {
        let grid = PhaseGrid::new(32).unwrap();
        let m = vec![1.0; 32];
        let err = onset_marginal(&m, &grid, &subject_two(), 10).unwrap_err();
        assert!(matches!(err, Error::HorizonTooShort { k_max: 10, .. }));
    }

    #[test]
    fn automatic_horizon_captures_mass() {
        let grid = PhaseGrid::new(64).unwrap();
        let m = vec![1.0; 64];
        // long, diffuse cycles need the horizon doubled past 3 mean lengths
        for p in [subject_two(), with_advance(0.21, 8.915), with_advance(0.05, 3.0)] {
            let fc = forecast_onset(&m, &grid, &p).unwrap();
            assert!(fc.mass_captured >= 1.0 - 1e-6 && fc.mass_captured <= 1.0 + 1e-12);
            assert!(fc.probs.iter().all(|&v| v >= 0.0));
        }
        assert_eq!(default_horizon(&subject_two()), 102);
        assert_eq!(default_horizon(&with_advance(1.0, 10.0)), 60);
        assert_eq!(default_horizon(&with_advance(0.05, 30.0)), 365);
    }

    #[test]
    fn later_phase_brings_onset_forward() {
        let n = 128;
        let grid = PhaseGrid::new(n).unwrap();
        let p = subject_two();
        let f1: Vec<f64> = (0..n).map(|i| onset_cdf(1, grid.point(i), &p).unwrap()).collect();
        // a bump centred at phase c, shifted forward short of the wrap
        let bump = |c: usize| -> Vec<f64> {
            let mut m: Vec<f64> = (0..n).map(|i| (-(i as f64 - c as f64).powi(2) / 18.0).exp()).collect();
            let s: f64 = m.iter().sum::<f64>() / n as f64;
            m.iter_mut().for_each(|v| *v /= s);
            m
        };
        let mut last = 0.0;
        for c in (10..110).step_by(5) {
            let mass: f64 = bump(c).iter().zip(&f1).map(|(m, f)| m * f).sum::<f64>() / n as f64;
            assert!(mass >= last);
            last = mass;
        }
    }

    proptest! {
        #[test]
        fn argmax_ignores_scale(probs in prop::collection::vec(0.0f64..1.0, 1..50), scale in 1e-6f64..1e6) {
            let scaled: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            prop_assert_eq!(first_argmax(&probs), first_argmax(&scaled));
        }
    }

    #[test]
    fn argmax_prefers_earliest() {
        assert_eq!(first_argmax(&[0.1, 0.4, 0.4, 0.1]), 2);
        assert_eq!(first_argmax(&[0.5]), 1);
    }
}
