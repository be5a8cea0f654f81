//! Independent reference computations shared by the integration tests and
//! the acceptance binary.

#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use sdde_core::{
    augment, build_index, pathwise_estimates, simulate, simulate_ensemble, BenchmarkModel, EstimatorMethod, History, ModelSpec,
    NoisePlan, TimeGrid, Trajectory,
};

/// Exact solution of `x' = 2 x (1 - x(t - 1))` with history `cos(s)` on
/// `[0, 1]`: `exp(2 (t - sin(t - 1) - sin 1))`.
pub fn logistic_exact_first(t: f64) -> f64 {
    (2.0 * (t - (t - 1.0).sin() - 1f64.sin())).exp()
}

/// Same solution on `[1, 2]` by composite Simpson quadrature of
/// `ln x(t) = ln x(1) + 2 * int_1^t (1 - x(s - 1)) ds`.
pub fn logistic_exact_second(t: f64) -> f64 {
    assert!((1.0..=2.0).contains(&t));
    let intervals = 4000;
    let h = (t - 1.0) / intervals as f64;
    let g = |s: f64| 1.0 - logistic_exact_first(s - 1.0);
    let mut acc = g(1.0) + g(t);
    for k in 1..intervals {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(1.0 + k as f64 * h);
    }
    (logistic_exact_first(1.0).ln() + 2.0 * acc * h / 3.0).exp()
}

pub fn logistic_exact(t: f64) -> f64 {
    if t <= 1.0 {
        logistic_exact_first(t)
    } else {
        logistic_exact_second(t)
    }
}

/// Delay logistic model with `alpha = 2`, `tau = 1` and zero diffusion.
pub fn deterministic_logistic() -> ModelSpec {
    ModelSpec::new(
        "logistic-deterministic",
        1,
        1,
        1.0,
        Arc::new(|x: &[f64], xt: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0] * (1.0 - xt[0])),
        Arc::new(|_: &[f64], _: &[f64], out: &mut [f64]| out[0] = 0.0),
        Arc::new(|s: f64, out: &mut [f64]| out[0] = s.cos()),
    )
    .unwrap()
}

/// `dX = sigma dW` from zero.
pub fn brownian(sigma: f64) -> ModelSpec {
    ModelSpec::new(
        "brownian",
        1,
        1,
        1.0,
        Arc::new(|_: &[f64], _: &[f64], out: &mut [f64]| out[0] = 0.0),
        Arc::new(move |_: &[f64], _: &[f64], out: &mut [f64]| out[0] = sigma),
        Arc::new(|_: f64, out: &mut [f64]| out[0] = 0.0),
    )
    .unwrap()
}

/// The exact solution sampled on `[0, t_end]`, `t_end <= 1`.
pub fn exact_trajectory(dt: f64, t_end: f64) -> Trajectory {
    let grid = TimeGrid::from_window(0.0, t_end, dt).unwrap();
    let states = (0..grid.steps()).map(|i| logistic_exact(grid.time(i))).collect();
    let history = History::functional(1, 1.0, Arc::new(|s: f64, out: &mut [f64]| out[0] = s.cos()));
    Trajectory::new(grid, states, history).unwrap()
}

/// True drift along the exact solution on `[0, 1]`.
pub fn exact_drift(t: f64) -> f64 {
    2.0 * logistic_exact_first(t) * (1.0 - (t - 1.0).cos())
}

/// Least-squares slope of `log2(err)` against `log2(dt)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.log2()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.log2()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Steps used for the convergence studies: four halvings from 0.01.
pub fn halving_steps() -> Vec<f64> {
    (0..5).map(|k| 0.01 / f64::from(1 << k)).collect()
}

/// Max pointwise drift error of `method` along the exact path on `[0, 1]`.
/// TR is compared against the averaged drift `(f_i + f_{i+1}) / 2`.
pub fn estimator_error(method: EstimatorMethod, dt: f64) -> f64 {
    let traj = exact_trajectory(dt, 1.0);
    let (lo, hi) = method.valid_range(traj.len()).unwrap();
    (lo..=hi)
        .map(|i| {
            let est = sdde_core::drift_estimate(method, &traj, i).unwrap()[0];
            let t = traj.grid().time(i);
            let want = match method {
                EstimatorMethod::Tr => 0.5 * (exact_drift(t) + exact_drift(t + dt)),
                _ => exact_drift(t),
            };
            (est - want).abs()
        })
        .fold(0.0, f64::max)
}

pub fn estimator_order(method: EstimatorMethod) -> f64 {
    let steps = halving_steps();
    let errs: Vec<f64> = steps.iter().map(|&dt| estimator_error(method, dt)).collect();
    loglog_slope(&steps, &errs)
}

/// Residual norm of the least-squares fit of `y` on the columns `cols`.
pub fn subset_residual(theta: &DMatrix<f64>, y: &DVector<f64>, cols: &[usize]) -> f64 {
    if cols.is_empty() {
        return y.norm();
    }
    let sub = theta.select_columns(cols);
    let coef = sub.clone().svd(true, true).solve(y, 1e-13).unwrap();
    (y - sub * coef).norm()
}

/// Smallest residual over all column subsets of size `k`.
pub fn best_subset_residual(theta: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> f64 {
    let p = theta.ncols();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << p) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let cols: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
        best = best.min(subset_residual(theta, y, &cols));
    }
    best
}

/// Small deterministic generator for test data.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }
}

/// Outcome of one STLS-versus-exhaustive instance.
pub struct StlsCase {
    pub stls_residual: f64,
    pub best_residual: f64,
}

impl StlsCase {
    pub fn within(&self, rel: f64) -> bool {
        self.stls_residual <= (1.0 + rel) * self.best_residual + 1e-9
    }
}

/// Random noiseless instance: `p <= 8` columns, `m <= 200` rows, a planted
/// sparse vector with some coefficients below the threshold.
pub fn stls_case(seed: u64, lambda: f64) -> StlsCase {
    let mut rng = Lcg(seed.wrapping_mul(0x9e37_79b9).wrapping_add(17));
    let p = 2 + rng.below(7);
    let m = p + 10 + rng.below(191 - p);
    let theta = DMatrix::from_fn(m, p, |_, _| rng.range(-1.0, 1.0));
    let xi = DVector::from_fn(p, |_, _| match rng.below(3) {
        0 => 0.0,
        1 => rng.range(0.0, 0.02) * if rng.next_f64() < 0.5 { -1.0 } else { 1.0 },
        _ => rng.range(0.5, 2.0) * if rng.next_f64() < 0.5 { -1.0 } else { 1.0 },
    });
    let y = &theta * &xi;
    let res = sdde_core::stls(&theta, &y, lambda, 10).unwrap();
    let support = res.support();
    StlsCase {
        stls_residual: (&y - &theta * DVector::from_column_slice(&res.coef)).norm(),
        best_residual: best_subset_residual(&theta, &y, support.len()),
    }
}

/// Euclidean-ball membership by direct scan.
pub fn scan(points: &[Vec<f64>], z: &[f64], eps: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= eps * eps)
        .map(|(i, _)| i)
        .collect()
}

/// Mean covariance estimate of each method on `dX = 0.3 dW`.
pub fn mean_covariances(samples: usize, seed: u64) -> Vec<(EstimatorMethod, f64)> {
    let model = brownian(0.3);
    let grid = TimeGrid::new(0.0, 0.01, samples + 3).unwrap();
    let plan = NoisePlan::for_grid(1, 0.01, 0.01, seed).unwrap();
    let traj = simulate(&model, &grid, &plan).unwrap();
    EstimatorMethod::ALL
        .iter()
        .map(|&m| {
            let mut set = pathwise_estimates(m, &traj, 1.0).unwrap();
            if m == EstimatorMethod::Tr {
                set.inject_tr_drift(|_| Ok(vec![0.0])).unwrap();
            }
            let mean = (0..set.len()).map(|r| set.cov_row(r).unwrap()[0]).sum::<f64>() / set.len() as f64;
            // TR rows estimate C(X_i) + C(X_{i+1}).
            let per_point = if m == EstimatorMethod::Tr { mean / 2.0 } else { mean };
            (m, per_point)
        })
        .collect()
}

/// Random ensemble, random radius: every query matches a direct scan.
pub fn neighbor_case(seed: u64) -> bool {
    let mut rng = Lcg(seed + 1);
    let model = BenchmarkModel::by_name(if seed % 2 == 0 { "logistic" } else { "predator_prey" }).unwrap();
    let spec = model.spec().unwrap();
    let paths = 2 + rng.below(4);
    let grid = TimeGrid::new(0.0, 0.01, 150 + rng.below(150)).unwrap();
    let plan = NoisePlan::for_grid(spec.noise_dim(), 0.01, 0.01, seed).unwrap();
    let ens = simulate_ensemble(&spec, &grid, &plan, paths).unwrap();
    let eps = rng.range(0.0, 0.3);
    let index = build_index(&ens, spec.tau(), eps).unwrap();
    let points: Vec<Vec<f64>> = ens
        .iter()
        .flat_map(|t| augment(t, spec.tau()).unwrap().into_iter().map(|s| s.z))
        .collect();
    if index.len() != points.len() {
        return false;
    }
    for _ in 0..30 {
        let q = &points[rng.below(points.len())];
        let jitter: Vec<f64> = q.iter().map(|v| v + rng.range(-eps, eps)).collect();
        for z in [q, &jitter] {
            if index.query(z, eps) != scan(&points, z, eps) {
                return false;
            }
        }
    }
    true
}
