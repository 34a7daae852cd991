//! Independent reference implementations shared by the integration tests.
//! Nothing here calls the crate's numerical code: the transition table is
//! built from a brute-force wrap sum of statrs gamma densities, and the
//! forecast oracle samples gamma advances with rand_distr.

#![allow(dead_code)]

use phasecycle::model::{CycleDataset, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Uniform};
use statrs::distribution::{Continuous, Gamma as SGamma};

/// Wrapped gamma density by direct summation over `wraps` cycles.
pub fn wrap_sum(delta: f64, alpha: f64, beta: f64, wraps: usize) -> f64 {
    let g = SGamma::new(alpha, beta).unwrap();
    (0..=wraps).map(|k| g.pdf(delta + k as f64)).sum()
}

/// Column-normalised transition table, `dens[i][j]`, phases `i / n`.
pub fn reference_transition(p: &ModelParams, n: usize) -> Vec<Vec<f64>> {
    let mut dens = vec![vec![0.0; n]; n];
    for j in 0..n {
        for i in 0..n {
            let d = if i > j { (i - j) as f64 / n as f64 } else { 1.0 + (i as f64 - j as f64) / n as f64 };
            dens[i][j] = wrap_sum(d, p.alpha, p.beta, 200);
        }
        let mass: f64 = (0..n).map(|i| dens[i][j]).sum::<f64>() / n as f64;
        for row in dens.iter_mut() {
            row[j] /= mass;
        }
    }
    dens
}

fn mean_curve(p: &ModelParams, omega: f64) -> f64 {
    let mut mu = p.a;
    for m in 0..p.b.len() {
        let arg = 2.0 * std::f64::consts::PI * (m + 1) as f64 * omega;
        mu += p.b[m] * arg.cos() + p.c[m] * arg.sin();
    }
    mu
}

fn emission(p: &ModelParams, n: usize, i: usize, j: usize, y: Option<f64>, z: bool) -> f64 {
    let wrap = i <= j;
    if wrap != z {
        return 0.0;
    }
    match y {
        None => 1.0,
        Some(y) => {
            let r = (y - mean_curve(p, i as f64 / n as f64)) / p.sigma;
            (-0.5 * r * r).exp() / (p.sigma * (2.0 * std::f64::consts::PI).sqrt())
        }
    }
}

/// Textbook scaled forward-backward on the pair chain (ω_t, ω_{t−1}) with N²
/// states and an explicit dense N²×N² transition matrix.
pub struct PairChainResult {
    pub log_evidence: f64,
    /// Filtering marginals of ω_t as densities on the grid ((1/N)Σ = 1).
    pub filtered: Vec<Vec<f64>>,
    /// Smoothed marginals of ω_t, same scale.
    pub smoothed: Vec<Vec<f64>>,
}

pub fn pair_chain(p: &ModelParams, data: &CycleDataset, n: usize) -> PairChainResult {
    let dens = reference_transition(p, n);
    let s = n * n;
    let idx = |i: usize, j: usize| i * n + j;
    // a[from][to]
    let mut a = vec![vec![0.0; s]; s];
    for ip in 0..n {
        for jp in 0..n {
            for i in 0..n {
                a[idx(ip, jp)][idx(i, ip)] = dens[i][ip] / n as f64;
            }
        }
    }
    // initial: ω_0 uniform, ω_1 | ω_0 from the system model
    let mut pi = vec![0.0; s];
    for i in 0..n {
        for j in 0..n {
            pi[idx(i, j)] = dens[i][j] / (n * n) as f64;
        }
    }
    let recs = data.records();
    let t_len = recs.len();
    let emis: Vec<Vec<f64>> = recs
        .iter()
        .map(|r| (0..s).map(|k| emission(p, n, k / n, k % n, r.bbt, r.menses)).collect())
        .collect();

    let mut alphas: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut scales = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let prior: Vec<f64> = if t == 0 {
            pi.clone()
        } else {
            let prev = &alphas[t - 1];
            (0..s).map(|to| (0..s).map(|from| prev[from] * a[from][to]).sum()).collect()
        };
        let mut cur: Vec<f64> = prior.iter().zip(&emis[t]).map(|(x, e)| x * e).collect();
        let c: f64 = cur.iter().sum();
        cur.iter_mut().for_each(|v| *v /= c);
        scales.push(c);
        alphas.push(cur);
    }
    let log_evidence = scales.iter().map(|c| c.ln()).sum();

    let mut betas = vec![vec![1.0; s]; t_len];
    for t in (0..t_len - 1).rev() {
        for from in 0..s {
            let v: f64 = (0..s).map(|to| a[from][to] * emis[t + 1][to] * betas[t + 1][to]).sum();
            betas[t][from] = v / scales[t + 1];
        }
    }
    let to_marginal = |joint: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| joint[idx(i, j)]).sum::<f64>() * n as f64).collect() };
    let filtered = alphas.iter().map(|al| to_marginal(al)).collect();
    let smoothed = (0..t_len)
        .map(|t| {
            let g: Vec<f64> = alphas[t].iter().zip(&betas[t]).map(|(x, b)| x * b).collect();
            let tot: f64 = g.iter().sum();
            to_marginal(&g.iter().map(|v| v / tot).collect::<Vec<_>>())
        })
        .collect();
    PairChainResult { log_evidence, filtered, smoothed }
}

/// Monte Carlo distribution of days until the next onset from a phase drawn
/// by `start`; returns counts for k = 1..=k_max (longer waits are dropped).
pub fn onset_day_counts(alpha: f64, beta: f64, paths: usize, k_max: usize, seed: u64, start: &dyn Fn(&mut ChaCha8Rng) -> f64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Gamma::new(alpha, 1.0 / beta).unwrap();
    let mut counts = vec![0u64; k_max];
    for _ in 0..paths {
        let mut pos = start(&mut rng);
        for k in 1..=k_max {
            pos += g.sample(&mut rng);
            if pos >= 1.0 {
                counts[k - 1] += 1;
                break;
            }
        }
    }
    counts
}

/// Uniform phase on [0, 1).
pub fn continuous_start() -> impl Fn(&mut ChaCha8Rng) -> f64 {
    let u = Uniform::new(0.0, 1.0);
    move |rng: &mut ChaCha8Rng| u.sample(rng)
}
