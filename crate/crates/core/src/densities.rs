//! Scalar probability primitives used by the phase model.
//!
//! Everything here is a pure function. The wrapped gamma density is the
//! system (phase-advance) density on the unit circle; it is evaluated through
//! Lerch's transcendent so that the infinite wrap sum collapses to a rapidly
//! convergent series whenever `exp(-rate)` is small.

use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};

/// Relative tolerance at which the Lerch series is truncated.
pub const LERCH_REL_TOL: f64 = 1e-14;
/// Hard cap on the number of Lerch terms.
pub const LERCH_MAX_TERMS: usize = 1_000_000;

const INCGAMMA_EPS: f64 = 1e-16;
const INCGAMMA_MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

/// Shape/rate parametrisation of the gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    shape: f64,
    rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0) {
            return domain(format!("gamma shape must be positive and finite, got {shape}"));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return domain(format!("gamma rate must be positive and finite, got {rate}"));
        }
        Ok(Self { shape, rate })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Gamma density `r^s / Γ(s) x^(s-1) e^(-r x)`.
///
/// At `x = 0` with `shape < 1` the density has an integrable singularity and
/// `+inf` is returned.
pub fn gamma_pdf(x: f64, p: GammaParams) -> Result<f64> {
    if !(x >= 0.0) {
        return domain(format!("gamma_pdf requires x >= 0, got {x}"));
    }
    let (s, r) = (p.shape, p.rate);
    if x == 0.0 {
        return Ok(if s > 1.0 {
            0.0
        } else if s == 1.0 {
            r
        } else {
            f64::INFINITY
        });
    }
    let ln = s * r.ln() - ln_gamma(s) + (s - 1.0) * x.ln() - r * x;
    Ok(ln.exp())
}

/// Gamma distribution function `G(x; s, r)`.
pub fn gamma_cdf(x: f64, p: GammaParams) -> Result<f64> {
    if !(x >= 0.0) {
        return domain(format!("gamma_cdf requires x >= 0, got {x}"));
    }
    Ok(regularized_gamma(p.shape, p.rate * x)?.lower)
}

/// Upper tail `1 - G(x; s, r)`, computed without cancellation.
pub fn gamma_sf(x: f64, p: GammaParams) -> Result<f64> {
    if !(x >= 0.0) {
        return domain(format!("gamma_sf requires x >= 0, got {x}"));
    }
    Ok(regularized_gamma(p.shape, p.rate * x)?.upper)
}

/// Both regularized incomplete gamma functions `P(s, x)` and `Q(s, x)`.
#[derive(Debug, Clone, Copy)]
pub struct RegularizedGamma {
    pub lower: f64,
    pub upper: f64,
}

/// Regularized incomplete gamma via the power series for `x < s + 1` and the
/// Legendre continued fraction (modified Lentz) otherwise. Whichever side is
/// computed directly is the accurate one; the other is its complement.
pub fn regularized_gamma(s: f64, x: f64) -> Result<RegularizedGamma> {
    if !(s > 0.0 && s.is_finite()) {
        return domain(format!("incomplete gamma requires shape > 0, got {s}"));
    }
    if !(x >= 0.0) {
        return domain(format!("incomplete gamma requires x >= 0, got {x}"));
    }
    if x == 0.0 {
        return Ok(RegularizedGamma { lower: 0.0, upper: 1.0 });
    }
    if x.is_infinite() {
        return Ok(RegularizedGamma { lower: 1.0, upper: 0.0 });
    }
    let log_prefactor = s * x.ln() - x - ln_gamma(s);
    if x < s + 1.0 {
        // P(s,x) = x^s e^-x / Γ(s+1) * Σ x^n / ((s+1)...(s+n))
        let mut denom = s;
        let mut term = 1.0 / s;
        let mut sum = term;
        for _ in 0..INCGAMMA_MAX_ITER {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * INCGAMMA_EPS {
                let lower = (sum.ln() + log_prefactor).exp().min(1.0);
                return Ok(RegularizedGamma { lower, upper: 1.0 - lower });
            }
        }
        Err(Error::SeriesNonConvergence { terms: INCGAMMA_MAX_ITER })
    } else {
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=INCGAMMA_MAX_ITER {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < INCGAMMA_EPS {
                let upper = (h.ln() + log_prefactor).exp().min(1.0);
                return Ok(RegularizedGamma { lower: 1.0 - upper, upper });
            }
        }
        Err(Error::SeriesNonConvergence { terms: INCGAMMA_MAX_ITER })
    }
}

/// Lerch transcendent `Φ(z, s, a) = Σ_k z^k / (a + k)^s` for real `0 <= z < 1`.
pub fn lerch_phi(z: f64, s: f64, a: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&z) {
        return domain(format!("lerch_phi requires 0 <= z < 1, got {z}"));
    }
    if !(a > 0.0 && a.is_finite()) {
        return domain(format!("lerch_phi requires a > 0, got {a}"));
    }
    if !s.is_finite() {
        return domain(format!("lerch_phi requires finite s, got {s}"));
    }
    let mut sum = a.powf(-s);
    if z == 0.0 {
        return Ok(sum);
    }
    let mut zk = 1.0;
    for k in 1..LERCH_MAX_TERMS {
        zk *= z;
        let term = zk * (a + k as f64).powf(-s);
        sum += term;
        // for s < 0 terms can grow before z^k wins; only stop once past the peak
        let past_peak = (k as f64) > -s / (-z.ln()) - a;
        if past_peak && term <= LERCH_REL_TOL * sum {
            return Ok(sum);
        }
    }
    Err(Error::SeriesNonConvergence { terms: LERCH_MAX_TERMS })
}

/// Density of a Gamma(alpha, beta) advance wrapped onto the unit circle,
/// evaluated at circular advance `delta ∈ (0, 1]`.
pub fn wrapped_gamma_pdf(delta: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return domain(format!("wrapped_gamma_pdf requires 0 < delta <= 1, got {delta}"));
    }
    let p = GammaParams::new(alpha, beta)?;
    // Terms of the Lerch series with the prefactor folded in, summed in log
    // space relative to the largest term so that large shapes neither
    // overflow (δ+k)^(α−1) nor underflow β^α e^(−βδ).
    let ln_pref = p.shape * p.rate.ln() - ln_gamma(p.shape);
    let ln_term = |k: f64| ln_pref + (p.shape - 1.0) * (delta + k).ln() - p.rate * (delta + k);
    let peak = ((p.shape - 1.0) / p.rate - delta).max(0.0).floor();
    let ln_max = ln_term(0.0).max(ln_term(peak)).max(ln_term(peak + 1.0));
    if ln_max == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for k in 0..LERCH_MAX_TERMS {
        let kf = k as f64;
        let term = (ln_term(kf) - ln_max).exp();
        sum += term;
        if kf > peak && term <= LERCH_REL_TOL * sum {
            return Ok(ln_max.exp() * sum);
        }
    }
    Err(Error::SeriesNonConvergence { terms: LERCH_MAX_TERMS })
}

/// Gaussian density.
pub fn normal_pdf(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return domain(format!("normal_pdf requires sigma > 0, got {sigma}"));
    }
    Ok((-normal_log_kernel(y, mu, sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt()))
}

/// `(y - mu)^2 / (2 sigma^2)`; the filter works with this directly in log space.
#[inline]
pub(crate) fn normal_log_kernel(y: f64, mu: f64, sigma: f64) -> f64 {
    let r = (y - mu) / sigma;
    0.5 * r * r
}
