//! Forward simulation of the phase model.
//!
//! Variates come from ChaCha8 through samplers written out here (Marsaglia
//! polar normals, Marsaglia–Tsang gammas) so that a seed reproduces the same
//! series on every platform and dependency version.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Error, Result};
use crate::model::{CycleDataset, DayRecord, ModelParams};

/// Seeded source of the variates the model needs.
pub struct VariateSource {
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl VariateSource {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), spare_normal: None }
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * f);
                return u * f;
            }
        }
    }

    /// Gamma(shape, rate) variate; shape < 1 uses the `U^(1/shape)` boost.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> f64 {
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0, 1.0);
            return g * self.uniform().powf(1.0 / shape) / rate;
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.standard_normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v / rate;
            }
        }
    }
}

/// Simulated dataset with its latent path.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub dataset: CycleDataset,
    /// Phase before the first day.
    pub initial_phase: f64,
    /// ω_t for each day.
    pub latent_phases: Vec<f64>,
    /// ε_t for each day.
    pub latent_advances: Vec<f64>,
    pub seed: u64,
}

/// Runs the model forward for `n_days` from a uniformly drawn initial phase.
/// Each day's BBT is dropped independently with probability `missing_rate`.
pub fn simulate(params: &ModelParams, n_days: usize, missing_rate: f64, seed: u64) -> Result<SimOutput> {
    params.validate()?;
    if n_days == 0 {
        return Err(Error::InvalidInput("n_days must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(Error::InvalidInput(format!("missing rate must lie in [0, 1), got {missing_rate}")));
    }
    if params.alpha / params.beta >= 1.0 {
        return domain(format!(
            "mean daily advance alpha/beta = {} is not below one cycle",
            params.alpha / params.beta
        ));
    }
    let mut src = VariateSource::new(seed);
    let initial_phase = src.uniform();
    let mut omega = initial_phase;
    let mut latent_phases = Vec::with_capacity(n_days);
    let mut latent_advances = Vec::with_capacity(n_days);
    let mut records = Vec::with_capacity(n_days);
    for _ in 0..n_days {
        let eps = src.gamma(params.alpha, params.beta);
        let next = (omega + eps).rem_euclid(1.0);
        let menses = next <= omega;
        let noise = params.sigma * src.standard_normal();
        let missing = src.uniform() < missing_rate;
        let bbt = if missing { None } else { Some(params.mean_bbt(next) + noise) };
        records.push(DayRecord { bbt, menses });
        latent_phases.push(next);
        latent_advances.push(eps);
        omega = next;
    }
    let dataset = CycleDataset::new(format!("sim-{seed}"), None, records)?;
    Ok(SimOutput { dataset, initial_phase, latent_phases, latent_advances, seed })
}
