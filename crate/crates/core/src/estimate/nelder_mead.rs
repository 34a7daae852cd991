//! Nelder–Mead simplex minimiser with dimension-adaptive coefficients
//! (Gao & Han, 2012), which behave much better than the classic ones beyond a
//! handful of dimensions.

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop when the spread of function values over the simplex is below this.
    pub ftol: f64,
    /// ...and every vertex lies within this distance (max-norm) of the best.
    pub xtol: f64,
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Final spread of function values.
    pub f_spread: f64,
    /// Final simplex diameter (max-norm distance to the best vertex).
    pub x_spread: f64,
}

/// Minimises `f` starting from a simplex built on `x0` with per-coordinate
/// offsets `steps`. Non-finite objective values are treated as `+inf`.
pub fn minimize<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n);
    let nf = n as f64;
    let (rho, chi, gamma, sigma) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for k in 0..n {
        let mut v = x0.to_vec();
        v[k] += steps[k];
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();

    let mut iterations = 0;
    let mut converged = false;
    loop {
        // sort ascending by value; stable so ties keep vertex order
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fvals[a].total_cmp(&fvals[b]));
        simplex = order.iter().map(|&k| simplex[k].clone()).collect();
        fvals = order.iter().map(|&k| fvals[k]).collect();

        let f_spread = fvals[n] - fvals[0];
        let x_spread = spread(&simplex);
        if f_spread <= opts.ftol && x_spread <= opts.xtol {
            converged = true;
        }
        if converged || evals >= opts.max_evals {
            return SimplexResult {
                x: simplex[0].clone(),
                fx: fvals[0],
                evals,
                iterations,
                converged,
                f_spread,
                x_spread,
            };
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / nf).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect() };

        let xr = along(-rho);
        let fr = eval(&xr, &mut evals);
        if fr < fvals[0] {
            let xe = along(-rho * chi);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                fvals[n] = fe;
            } else {
                simplex[n] = xr;
                fvals[n] = fr;
            }
            continue;
        }
        if fr < fvals[n - 1] {
            simplex[n] = xr;
            fvals[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < fvals[n] {
            let xc = along(-rho * gamma);
            let fc = eval(&xc, &mut evals);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(gamma);
            let fc = eval(&xc, &mut evals);
            let ok = fc < fvals[n];
            (xc, fc, ok)
        };
        if accept {
            simplex[n] = xc;
            fvals[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for v in simplex.iter_mut().skip(1) {
            for k in 0..n {
                v[k] = best[k] + sigma * (v[k] - best[k]);
            }
        }
        for idx in 1..=n {
            fvals[idx] = eval(&simplex[idx], &mut evals);
        }
    }
}

fn spread(simplex: &[Vec<f64>]) -> f64 {
    let best = &simplex[0];
    simplex[1..]
        .iter()
        .flat_map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}
