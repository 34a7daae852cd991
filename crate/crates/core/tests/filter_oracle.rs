mod common;

use phasecycle::gridfilter::{run_filter, smooth, Retention};
use phasecycle::model::{ModelParams, PhaseGrid, TransitionTable};
use phasecycle::simulate::simulate;

/// Parameters whose cycles (about N/2.5 days) fit on an N-point grid, which
/// cannot represent a cycle longer than N days.
fn params_for(n: usize) -> ModelParams {
    let mean_len = n as f64 / 2.5;
    ModelParams::new(3.0, 3.0 * mean_len, 0.12, 36.3, vec![0.2, 0.05], vec![-0.1, 0.02]).unwrap()
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max)
}

fn check(n: usize, days: usize, seed: u64) {
    let p = params_for(n);
    let sim = simulate(&p, days, 0.1, seed).unwrap();
    let grid = PhaseGrid::new(n).unwrap();
    let trans = TransitionTable::build(&p, &grid).unwrap();
    let fr = run_filter(&p, &sim.dataset, &grid, &trans, Retention::Retained).unwrap();
    let sm = smooth(&fr, &trans).unwrap();
    let oracle = common::pair_chain(&p, &sim.dataset, n);
    let dl = (fr.total_loglik - oracle.log_evidence).abs();
    assert!(dl < 1e-8, "N={n} T={days}: loglik {} vs {}", fr.total_loglik, oracle.log_evidence);
    let df = sup_diff(&fr.filter_marginals, &oracle.filtered);
    assert!(df < 1e-8, "N={n}: filtered sup diff {df}");
    let ds = sup_diff(&sm.marginals, &oracle.smoothed);
    assert!(ds < 1e-8, "N={n}: smoothed sup diff {ds}");
}

#[test]
fn matches_pair_chain_n8() {
    check(8, 60, 1);
    check(8, 100, 2);
}

#[test]
fn matches_pair_chain_n16() {
    check(16, 100, 3);
}

#[test]
fn matches_pair_chain_n32() {
    check(32, 100, 4);
}

#[test]
fn reference_table_matches_wrap_sum_table() {
    let p = params_for(16);
    let grid = PhaseGrid::new(16).unwrap();
    let trans = TransitionTable::build(&p, &grid).unwrap();
    let reference = common::reference_transition(&p, 16);
    for i in 0..16 {
        for j in 0..16 {
            let (a, b) = (trans.get(i, j), reference[i][j]);
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300), "({i},{j}) {a} vs {b}");
        }
    }
}
