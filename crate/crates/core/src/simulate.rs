//! Wiener increments and Euler–Maruyama integration with a constant delay.
//!
//! Noise is drawn from ChaCha8 streams keyed by `(seed, stream_id)`, so every
//! path is reproducible on its own and independent of scheduling order.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FinePath, HistoryFn, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::models::ModelSpec;

const STEP_TOL: f64 = 1e-9;

/// Noise layout of one path: `q` Brownian components sampled at `fine_dt`,
/// with `k` fine steps per grid step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub q: usize,
    pub fine_dt: f64,
    pub k: usize,
    pub seed: u64,
    pub stream_id: u64,
}

impl NoisePlan {
    pub fn new(q: usize, fine_dt: f64, k: usize, seed: u64, stream_id: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::arg("noise dimension must be positive"));
        }
        if !(fine_dt > 0.0) || !fine_dt.is_finite() {
            return Err(Error::arg(format!("fine step must be positive, got {fine_dt}")));
        }
        if k == 0 {
            return Err(Error::arg("subsampling factor K must be at least 1"));
        }
        Ok(Self {
            q,
            fine_dt,
            k,
            seed,
            stream_id,
        })
    }

    /// Plan with `K = dt / fine_dt`, which must be an integer.
    pub fn for_grid(q: usize, dt: f64, fine_dt: f64, seed: u64) -> Result<Self> {
        let k = integer_ratio(dt, fine_dt).ok_or_else(|| {
            Error::Config(format!("fine step {fine_dt} does not divide the grid step {dt}"))
        })?;
        Self::new(q, fine_dt, k, seed, 0)
    }

    pub fn with_stream(mut self, stream_id: u64) -> Self {
        self.stream_id = stream_id;
        self
    }

    pub fn coarse_dt(&self) -> f64 {
        self.fine_dt * self.k as f64
    }

    pub fn stream(&self) -> NoiseStream {
        NoiseStream::new(self.seed, self.stream_id, self.q, self.fine_dt)
    }
}

pub(crate) fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let k = r.round();
    if k >= 1.0 && (r - k).abs() <= STEP_TOL * k {
        Some(k as usize)
    } else {
        None
    }
}

/// Sequential source of fine Wiener increments.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    q: usize,
    scale: f64,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64, q: usize, fine_dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            rng,
            q,
            scale: fine_dt.sqrt(),
        }
    }

    #[inline]
    pub fn fill(&mut self, dw: &mut [f64]) {
        debug_assert_eq!(dw.len(), self.q);
        for v in dw.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *v = z * self.scale;
        }
    }
}

/// `steps x q` fine increments, row `j` covering `[j fine_dt, (j+1) fine_dt]`.
pub fn wiener_increments(plan: &NoisePlan, steps: usize) -> Result<DMatrix<f64>> {
    if steps == 0 {
        return Err(Error::arg("at least one increment is required"));
    }
    let mut stream = plan.stream();
    let mut out = DMatrix::zeros(steps, plan.q);
    let mut row = vec![0.0; plan.q];
    for j in 0..steps {
        stream.fill(&mut row);
        for (c, v) in row.iter().enumerate() {
            out[(j, c)] = *v;
        }
    }
    Ok(out)
}

/// Grid-step increments: each row sums `K` consecutive fine rows.
pub fn coarse_increments(plan: &NoisePlan, steps: usize) -> Result<DMatrix<f64>> {
    let fine = wiener_increments(plan, steps * plan.k)?;
    let mut out = DMatrix::zeros(steps, plan.q);
    for i in 0..steps {
        for r in 0..plan.k {
            for c in 0..plan.q {
                out[(i, c)] += fine[(i * plan.k + r, c)];
            }
        }
    }
    Ok(out)
}

/// One Euler–Maruyama update `x + f dt + g dW`.
pub fn em_step(model: &ModelSpec, x: &[f64], x_tau: &[f64], dw: &[f64], dt: f64) -> Result<Vec<f64>> {
    let (n, q) = (model.dim(), model.noise_dim());
    if x.len() != n || x_tau.len() != n || dw.len() != q {
        return Err(Error::arg("state or increment shape does not match the model"));
    }
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * q];
    let mut out = vec![0.0; n];
    model.drift_into(x, x_tau, &mut f);
    model.diffusion_into(x, x_tau, &mut g);
    apply_step(x, &f, &g, dw, dt, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Blowup { index: 0, path: None });
    }
    Ok(out)
}

#[inline]
pub(crate) fn apply_step(x: &[f64], f: &[f64], g: &[f64], dw: &[f64], dt: f64, out: &mut [f64]) {
    let q = dw.len();
    for c in 0..x.len() {
        let mut noise = 0.0;
        for r in 0..q {
            noise += g[c * q + r] * dw[r];
        }
        out[c] = x[c] + f[c] * dt + noise;
    }
}

/// Integration geometry shared by the true and identified models.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FineLayout {
    pub n: usize,
    pub q: usize,
    /// Delay in fine steps.
    pub lag: usize,
    pub k: usize,
    pub fine_dt: f64,
}

impl FineLayout {
    pub fn new(n: usize, q: usize, tau: f64, grid: &TimeGrid, plan: &NoisePlan) -> Result<Self> {
        if plan.q != q {
            return Err(Error::Config(format!(
                "noise plan has {} components, model needs {q}",
                plan.q
            )));
        }
        let k = integer_ratio(grid.dt(), plan.fine_dt).ok_or_else(|| {
            Error::Config(format!(
                "fine step {} does not divide the grid step {}",
                plan.fine_dt,
                grid.dt()
            ))
        })?;
        if k != plan.k {
            return Err(Error::Config(format!(
                "noise plan says K = {} but dt / fine_dt = {k}",
                plan.k
            )));
        }
        let lag = integer_ratio(tau, plan.fine_dt).ok_or_else(|| {
            Error::Config(format!(
                "delay {tau} is not a multiple of the fine step {}",
                plan.fine_dt
            ))
        })?;
        Ok(Self {
            n,
            q,
            lag,
            k,
            fine_dt: plan.fine_dt,
        })
    }
}

/// Integrates `dX = f dt + g dW` on fine nodes, reading delayed values from
/// a cached sampling of the history and from the path itself. `coeffs`
/// writes `f` (length `n`) and row-major `g` (`n x q`). Returns coarse states
/// and, when `K > 1`, the fine path.
pub(crate) fn integrate_with<F>(
    layout: FineLayout,
    history: &HistoryFn,
    steps: usize,
    noise: &mut NoiseStream,
    mut coeffs: F,
) -> Result<(Vec<f64>, Option<FinePath>)>
where
    F: FnMut(&[f64], &[f64], &mut [f64], &mut [f64]) -> Result<()>,
{
    let FineLayout {
        n,
        q,
        lag,
        k,
        fine_dt,
    } = layout;
    let fine_steps = (steps - 1) * k;
    // buf[lag + j] holds the state at fine node j; buf[0..=lag] is the history.
    let mut buf = vec![0.0; (lag + fine_steps + 1) * n];
    for j in 0..=lag {
        let s = -((lag - j) as f64) * fine_dt;
        history(s, &mut buf[j * n..(j + 1) * n]);
    }
    if buf.iter().any(|v| !v.is_finite()) {
        return Err(Error::Blowup { index: 0, path: None });
    }
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * q];
    let mut dw = vec![0.0; q];
    let mut next = vec![0.0; n];
    for j in 0..fine_steps {
        let cur = (lag + j) * n;
        let (x, x_tau) = (&buf[cur..cur + n], &buf[j * n..(j + 1) * n]);
        coeffs(x, x_tau, &mut f, &mut g)?;
        noise.fill(&mut dw);
        apply_step(x, &f, &g, &dw, fine_dt, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup {
                index: (j + 1).div_ceil(k),
                path: None,
            });
        }
        buf[cur + n..cur + 2 * n].copy_from_slice(&next);
    }
    let mut coarse = Vec::with_capacity(steps * n);
    for i in 0..steps {
        let at = (lag + i * k) * n;
        coarse.extend_from_slice(&buf[at..at + n]);
    }
    let fine = (k > 1).then(|| FinePath {
        dt: fine_dt,
        states: buf[lag * n..].to_vec(),
    });
    Ok((coarse, fine))
}

/// Ground-truth path on `grid`, starting from the model history at `t0`.
pub fn simulate(model: &ModelSpec, grid: &TimeGrid, plan: &NoisePlan) -> Result<Trajectory> {
    let layout = FineLayout::new(model.dim(), model.noise_dim(), model.tau(), grid, plan)?;
    let mut noise = plan.stream();
    let (states, fine) = integrate_with(layout, model.history_map(), grid.steps(), &mut noise, |x, xt, f, g| {
        model.drift_into(x, xt, f);
        model.diffusion_into(x, xt, g);
        Ok(())
    })?;
    let traj = Trajectory::new(*grid, states, model.history())?;
    Ok(match fine {
        Some(fp) => traj.with_fine_path(fp),
        None => traj,
    })
}

/// `paths` independent trajectories; path `k` uses stream `k` of `plan.seed`.
pub fn simulate_ensemble(model: &ModelSpec, grid: &TimeGrid, plan: &NoisePlan, paths: usize) -> Result<Vec<Trajectory>> {
    if paths == 0 {
        return Err(Error::arg("ensemble size must be at least 1"));
    }
    (0..paths)
        .into_par_iter()
        .map(|k| {
            simulate(model, grid, &plan.with_stream(k as u64)).map_err(|e| match e {
                Error::Blowup { index, .. } => Error::Blowup {
                    index,
                    path: Some(k),
                },
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::logistic_model;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    #[test]
    fn increments_are_reproducible() {
        let plan = NoisePlan::new(2, 0.01, 1, 7, 3).unwrap();
        assert_eq!(wiener_increments(&plan, 50).unwrap(), wiener_increments(&plan, 50).unwrap());
        let other = plan.with_stream(4);
        assert_ne!(wiener_increments(&plan, 50).unwrap(), wiener_increments(&other, 50).unwrap());
    }

    #[test]
    fn coarse_increments_sum_fine_ones() {
        let plan = NoisePlan::new(1, 0.002, 5, 11, 0).unwrap();
        let fine = wiener_increments(&plan, 50).unwrap();
        let coarse = coarse_increments(&plan, 10).unwrap();
        for i in 0..10 {
            let s: f64 = (0..5).map(|r| fine[(i * 5 + r, 0)]).sum();
            assert_eq!(coarse[(i, 0)], s);
        }
    }

    #[test]
    fn em_step_examples() {
        let m = logistic_model(2.0, 0.4, 1.0).unwrap();
        assert_eq!(em_step(&m, &[1.0], &[1.0], &[0.0], 0.01).unwrap(), vec![1.0]);
        assert_abs_diff_eq!(em_step(&m, &[1.0], &[0.0], &[0.0], 0.01).unwrap()[0], 1.02, epsilon = 1e-15);
        assert!(em_step(&m, &[f64::INFINITY], &[0.0], &[0.0], 0.01).is_err());
    }

    #[test]
    fn first_step_matches_em_step() {
        let m = logistic_model(2.0, 0.4, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, 5).unwrap();
        let plan = NoisePlan::for_grid(1, 0.01, 0.01, 3).unwrap();
        let traj = simulate(&m, &grid, &plan).unwrap();
        let dw = wiener_increments(&plan, 1).unwrap()[(0, 0)];
        let want = em_step(&m, &[1.0], &[(-1.0f64).cos()], &[dw], 0.01).unwrap();
        assert_eq!(traj.state(0), &[1.0]);
        assert_eq!(traj.state(1), &want[..]);
    }

    #[test]
    fn sub_step_delay_is_integrated_on_fine_nodes() {
        let m = crate::models::option_pricing_model(&Default::default()).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, 11).unwrap();
        let plan = NoisePlan::for_grid(1, 0.01, 0.002, 5).unwrap();
        assert_eq!(plan.k, 5);
        let traj = simulate(&m, &grid, &plan).unwrap();
        let fine = traj.fine_path().unwrap();
        assert_eq!(fine.states.len(), 51);
        for i in 0..11 {
            assert_eq!(traj.state(i)[0], fine.states[5 * i]);
        }
        assert!(matches!(
            simulate(&m, &grid, &NoisePlan::for_grid(1, 0.01, 0.01, 5).unwrap()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ensemble_path_zero_equals_single_run() {
        let m = logistic_model(2.0, 0.4, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, 200).unwrap();
        let plan = NoisePlan::for_grid(1, 0.01, 0.01, 42).unwrap();
        let single = simulate(&m, &grid, &plan).unwrap();
        let ens = simulate_ensemble(&m, &grid, &plan, 3).unwrap();
        assert_eq!(ens[0].states(), single.states());
        assert_ne!(ens[1].states(), single.states());
    }

    #[test]
    fn blowup_reports_path() {
        let m = ModelSpec::new(
            "explode",
            1,
            1,
            0.1,
            Arc::new(|x, _xt, out| out[0] = x[0] * x[0] * 1e150),
            Arc::new(|_x, _xt, out| out[0] = 0.0),
            Arc::new(|_s, out| out[0] = 1e100),
        )
        .unwrap();
        let grid = TimeGrid::new(0.0, 0.1, 10).unwrap();
        let plan = NoisePlan::for_grid(1, 0.1, 0.1, 0).unwrap();
        match simulate_ensemble(&m, &grid, &plan, 2) {
            Err(Error::Blowup { index, path }) => {
                assert_eq!(index, 1);
                assert_eq!(path, Some(0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
