//! Turning trajectories into regression data or fitted models.
//!
//! * A: from each state of one reference path, spawn `M` short synthetic
//!   Euler–Maruyama paths of an assumed model and average their stencils.
//! * B1: average the stencil quantities of every ensemble sample within
//!   distance `eps` of a query point, then regress once.
//! * B2: fit every path on its own and average the coefficients.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentedSample, Trajectory};
use crate::error::{Error, Result};
use crate::estimators::{cov_quantity, drift_quantity, pathwise_estimates, EstimateSet, EstimatorMethod, Stencil, MIN_ROWS};
use crate::library::BasisLibrary;
use crate::models::ModelSpec;
use crate::regression::{drift_only, fit_cov, fit_drift, FitOptions, SparseFit};
use crate::simulate::{apply_step, integer_ratio, NoisePlan, NoiseStream};

pub use crate::neighbors::{build_index, NeighborIndex};

/// Drift evaluator handed to TR covariance stages.
pub type DriftFn<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    A,
    B1,
    B2,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Self::A, Self::B1, Self::B2];

    pub fn tag(&self) -> &'static str {
        match self {
            Self::A => "A",
            Self::B1 => "B1",
            Self::B2 => "B2",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B1" => Ok(Self::B1),
            "B2" => Ok(Self::B2),
            _ => Err(Error::Config(format!("unknown approach `{s}` (expected A, B1 or B2)"))),
        }
    }
}

/// Anything that can produce estimate sets for a method and complete TR
/// covariance rows once a drift model is known.
pub trait EstimateSource: Sync {
    fn estimates(&self, method: EstimatorMethod) -> Result<EstimateSet>;

    fn complete_tr(&self, set: &mut EstimateSet, drift: &DriftFn) -> Result<()>;
}

/// Drift fit with `drift_method`, covariance fit with `diffusion_method`. A
/// TR covariance stage uses the drift identified from TR estimates.
pub fn identify_from(
    src: &dyn EstimateSource,
    lib_f: &BasisLibrary,
    lib_g: &BasisLibrary,
    opts: &FitOptions,
    drift_method: EstimatorMethod,
    diffusion_method: EstimatorMethod,
) -> Result<SparseFit> {
    let drift_set = src.estimates(drift_method)?;
    let drift = fit_drift(&drift_set, lib_f, &opts.drift)?;
    let mut cov_set = if diffusion_method == drift_method {
        drift_set
    } else {
        src.estimates(diffusion_method)?
    };
    if diffusion_method == EstimatorMethod::Tr {
        let tr_coef = if drift_method == EstimatorMethod::Tr {
            drift.coef.clone()
        } else {
            fit_drift(&cov_set, lib_f, &opts.drift)?.coef
        };
        let model = drift_only(lib_f, &tr_coef);
        src.complete_tr(&mut cov_set, &|z: &[f64]| model.eval(z))?;
    }
    let cov = fit_cov(&cov_set, lib_g, &opts.cov)?;
    SparseFit::from_parts(lib_f, lib_g, drift, cov, opts, (drift_method, diffusion_method))
}

/// Estimates along a single observed path.
pub struct Pathwise<'a> {
    pub traj: &'a Trajectory,
    pub tau: f64,
}

impl EstimateSource for Pathwise<'_> {
    fn estimates(&self, method: EstimatorMethod) -> Result<EstimateSet> {
        pathwise_estimates(method, self.traj, self.tau)
    }

    fn complete_tr(&self, set: &mut EstimateSet, drift: &DriftFn) -> Result<()> {
        set.inject_tr_drift(drift)
    }
}

/// Seed offset keeping synthetic increments apart from ground-truth streams.
const A_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Approach A around a reference trajectory.
pub struct ApproachA<'a> {
    model: &'a ModelSpec,
    reference: &'a Trajectory,
    points: Vec<AugmentedSample>,
    paths: usize,
    plan: NoisePlan,
    lag: usize,
}

impl<'a> ApproachA<'a> {
    /// `plan` supplies the fine step, `K` and the seed; its stream id is
    /// replaced by `(i << 32) | k` for reference index `i` and path `k`.
    pub fn new(model: &'a ModelSpec, reference: &'a Trajectory, paths: usize, plan: &NoisePlan) -> Result<Self> {
        if paths < 2 {
            return Err(Error::arg(format!("approach A needs at least 2 synthetic paths, got {paths}")));
        }
        if reference.dim() != model.dim() || plan.q != model.noise_dim() {
            return Err(Error::arg("reference trajectory or noise plan does not match the model"));
        }
        let k = integer_ratio(reference.grid().dt(), plan.fine_dt);
        if k != Some(plan.k) {
            return Err(Error::Config(format!(
                "fine step {} with K = {} does not match the grid step {}",
                plan.fine_dt,
                plan.k,
                reference.grid().dt()
            )));
        }
        let lag = integer_ratio(model.tau(), plan.fine_dt).ok_or_else(|| {
            Error::Config(format!(
                "delay {} is not a multiple of the fine step {}",
                model.tau(),
                plan.fine_dt
            ))
        })?;
        Ok(Self {
            model,
            reference,
            points: augment(reference, model.tau())?,
            paths,
            plan: *plan,
            lag,
        })
    }

    fn dt(&self) -> f64 {
        self.reference.grid().dt()
    }

    /// Delayed states read from the reference for the first fine nodes.
    fn reference_delays(&self, i: usize, fine_nodes: usize) -> Result<Vec<f64>> {
        let n = self.model.dim();
        let t = self.reference.grid().time(i);
        let count = fine_nodes.min(self.lag + 1);
        let mut out = vec![0.0; count * n];
        for j in 0..count {
            let s = t + j as f64 * self.plan.fine_dt - self.model.tau();
            self.reference.interpolate_into(s, &mut out[j * n..(j + 1) * n])?;
        }
        Ok(out)
    }

    /// Integrates path `k` from `Z(t_i)` over `coarse` grid steps and writes
    /// the states at `t_{i+1}, ..., t_{i+coarse}`.
    fn spawn(&self, i: usize, k: usize, coarse: usize, delays: &[f64], out: &mut [f64]) -> Result<()> {
        let (n, q) = (self.model.dim(), self.model.noise_dim());
        let steps = coarse * self.plan.k;
        let mut noise = NoiseStream::new(
            self.plan.seed ^ A_SEED_SALT,
            ((i as u64) << 32) | k as u64,
            q,
            self.plan.fine_dt,
        );
        let mut buf = vec![0.0; (steps + 1) * n];
        buf[..n].copy_from_slice(self.reference.state(i));
        let (mut f, mut g, mut dw) = (vec![0.0; n], vec![0.0; n * q], vec![0.0; q]);
        let mut next = vec![0.0; n];
        for j in 0..steps {
            let x = &buf[j * n..(j + 1) * n];
            let x_tau = if j <= self.lag {
                &delays[j * n..(j + 1) * n]
            } else {
                &buf[(j - self.lag) * n..(j - self.lag + 1) * n]
            };
            self.model.drift_into(x, x_tau, &mut f);
            self.model.diffusion_into(x, x_tau, &mut g);
            noise.fill(&mut dw);
            apply_step(x, &f, &g, &dw, self.plan.fine_dt, &mut next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Blowup { index: i, path: Some(k) });
            }
            buf[(j + 1) * n..(j + 2) * n].copy_from_slice(&next);
        }
        for c in 0..coarse {
            let at = (c + 1) * self.plan.k * n;
            out[c * n..(c + 1) * n].copy_from_slice(&buf[at..at + n]);
        }
        Ok(())
    }

    fn coarse_steps(method: EstimatorMethod) -> usize {
        method.ahead()
    }

    fn valid_rows(&self, method: EstimatorMethod) -> Result<Vec<usize>> {
        let (lo, hi) = method
            .valid_range(self.reference.len())
            .ok_or(Error::InsufficientData {
                needed: MIN_ROWS,
                got: 0,
            })?;
        Ok((lo..=hi).collect())
    }

    fn row(&self, method: EstimatorMethod, i: usize) -> Result<ARow> {
        let n = self.model.dim();
        let dt = self.dt();
        let coarse = Self::coarse_steps(method);
        let delays = self.reference_delays(i, coarse * self.plan.k)?;
        let mut ends = vec![0.0; coarse * n];
        let mut drift = vec![0.0; n];
        let mut cov = vec![0.0; n * n];
        let mut next_mean = vec![0.0; n];
        let (mut dq, mut cq) = (vec![0.0; n], vec![0.0; n * n]);
        let prev = if method.back() > 0 { self.reference.state(i - 1) } else { &[][..] };
        for k in 0..self.paths {
            self.spawn(i, k, coarse, &delays, &mut ends)?;
            let st = Stencil {
                prev,
                cur: self.reference.state(i),
                next: &ends[..n],
                next2: if coarse > 1 { &ends[n..2 * n] } else { &[] },
            };
            drift_quantity(method, &st, dt, &mut dq);
            for c in 0..n {
                drift[c] += dq[c];
                next_mean[c] += ends[c];
            }
            if method != EstimatorMethod::Tr {
                cov_quantity(method, &st, dt, None, &mut cq)?;
                for (a, b) in cov.iter_mut().zip(&cq) {
                    *a += b;
                }
            }
        }
        let m = self.paths as f64;
        drift.iter_mut().for_each(|v| *v /= m);
        cov.iter_mut().for_each(|v| *v /= m);
        next_mean.iter_mut().for_each(|v| *v /= m);
        if method == EstimatorMethod::Km {
            // Subtract the squared mean increment: (1/dt)(E[dX dX^T] - f f^T dt^2).
            for r in 0..n {
                for c in 0..n {
                    cov[r * n + c] -= drift[r] * drift[c] * dt;
                }
            }
        }
        let next = if method == EstimatorMethod::Tr {
            let t1 = self.reference.grid().time(i + 1);
            let delayed = self.reference.interpolate_state(t1 - self.model.tau())?;
            Some(AugmentedSample::from_parts(t1, &next_mean, &delayed)?)
        } else {
            None
        };
        Ok(ARow { drift, cov, next })
    }
}

struct ARow {
    drift: Vec<f64>,
    cov: Vec<f64>,
    next: Option<AugmentedSample>,
}

impl EstimateSource for ApproachA<'_> {
    fn estimates(&self, method: EstimatorMethod) -> Result<EstimateSet> {
        let rows = self.valid_rows(method)?;
        let results: Vec<ARow> = rows.par_iter().map(|&i| self.row(method, i)).collect::<Result<_>>()?;
        let tr = method == EstimatorMethod::Tr;
        let mut drift = Vec::with_capacity(rows.len() * self.model.dim());
        let mut cov = Vec::new();
        let mut next_points = Vec::new();
        for r in results {
            drift.extend_from_slice(&r.drift);
            cov.extend_from_slice(&r.cov);
            next_points.extend(r.next);
        }
        EstimateSet::new(
            method,
            self.dt(),
            rows.iter().map(|&i| self.points[i].clone()).collect(),
            next_points,
            rows,
            drift,
            (!tr).then_some(cov),
        )
    }

    fn complete_tr(&self, set: &mut EstimateSet, drift: &DriftFn) -> Result<()> {
        if set.method != EstimatorMethod::Tr {
            return Err(Error::arg("TR completion requested for a non-TR estimate set"));
        }
        let n = self.model.dim();
        let dt = self.dt();
        let rows: Vec<Vec<f64>> = set
            .indices
            .par_iter()
            .map(|&i| -> Result<Vec<f64>> {
                let delays = self.reference_delays(i, self.plan.k)?;
                let t1 = self.reference.grid().time(i + 1);
                let delayed = self.reference.interpolate_state(t1 - self.model.tau())?;
                let fa = drift(&self.points[i].z)?;
                let mut end = vec![0.0; n];
                let mut z1 = vec![0.0; 2 * n];
                let mut acc = vec![0.0; n * n];
                let mut cq = vec![0.0; n * n];
                for k in 0..self.paths {
                    self.spawn(i, k, 1, &delays, &mut end)?;
                    z1[..n].copy_from_slice(&end);
                    z1[n..].copy_from_slice(&delayed);
                    let fb = drift(&z1)?;
                    let st = Stencil {
                        prev: &[],
                        cur: self.reference.state(i),
                        next: &end,
                        next2: &[],
                    };
                    cov_quantity(EstimatorMethod::Tr, &st, dt, Some((&fa, &fb)), &mut cq)?;
                    for (a, b) in acc.iter_mut().zip(&cq) {
                        *a += b;
                    }
                }
                acc.iter_mut().for_each(|v| *v /= self.paths as f64);
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let rebuilt = EstimateSet::new(
            set.method,
            set.dt,
            std::mem::take(&mut set.points),
            std::mem::take(&mut set.next_points),
            std::mem::take(&mut set.indices),
            std::mem::take(&mut set.drift),
            Some(rows.concat()),
        )?;
        *set = rebuilt;
        Ok(())
    }
}

/// Approach A estimates for a non-TR method, or TR drift estimates.
pub fn approach_a(
    model: &ModelSpec,
    reference: &Trajectory,
    paths: usize,
    plan: &NoisePlan,
    method: EstimatorMethod,
) -> Result<EstimateSet> {
    ApproachA::new(model, reference, paths, plan)?.estimates(method)
}

/// Which samples serve as B1 query points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Every augmented sample of every path.
    #[default]
    Ensemble,
    /// The augmented samples of path 0.
    Reference,
}

/// Neighbourhood averaging over an ensemble.
pub struct B1Estimator<'a> {
    ensemble: &'a [Trajectory],
    eps: f64,
    index: NeighborIndex,
    queries: Vec<AugmentedSample>,
}

/// Estimates plus neighbourhood diagnostics.
#[derive(Clone, Debug)]
pub struct B1Output {
    pub set: EstimateSet,
    /// Stencil-valid neighbours per retained query.
    pub neighbor_counts: Vec<usize>,
    /// Queries dropped for lack of stencil-valid neighbours.
    pub skipped: usize,
}

impl<'a> B1Estimator<'a> {
    pub fn new(ensemble: &'a [Trajectory], tau: f64, eps: f64, queries: Vec<AugmentedSample>) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::arg(format!("neighbourhood radius must be nonnegative, got {eps}")));
        }
        let index = build_index(ensemble, tau, eps)?;
        if let Some(q) = queries.iter().find(|q| q.z.len() != index.dim()) {
            return Err(Error::arg(format!("query has dimension {}, expected {}", q.z.len(), index.dim())));
        }
        Ok(Self {
            ensemble,
            eps,
            index,
            queries,
        })
    }

    pub fn with_mode(ensemble: &'a [Trajectory], tau: f64, eps: f64, mode: QueryMode) -> Result<Self> {
        let queries = match mode {
            QueryMode::Reference => augment(ensemble.first().ok_or_else(|| Error::arg("ensemble is empty"))?, tau)?,
            QueryMode::Ensemble => ensemble
                .iter()
                .map(|t| augment(t, tau))
                .collect::<Result<Vec<_>>>()?
                .concat(),
        };
        Self::new(ensemble, tau, eps, queries)
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    fn stencil(&self, id: usize, method: EstimatorMethod) -> Option<Stencil<'a>> {
        let (k, i) = self.index.tag(id);
        let traj = &self.ensemble[k];
        method
            .is_valid(traj.len(), i)
            .then(|| Stencil::on(traj, method, i))
    }

    pub fn estimate(&self, method: EstimatorMethod) -> Result<B1Output> {
        let n = self.index.dim() / 2;
        let dt = self.ensemble[0].grid().dt();
        let tr = method == EstimatorMethod::Tr;
        let mut points = Vec::new();
        let mut next_points = Vec::new();
        let mut indices = Vec::new();
        let mut drift = Vec::new();
        let mut cov = Vec::new();
        let mut counts = Vec::new();
        let mut skipped = 0;
        let mut hits = Vec::new();
        let (mut dq, mut cq) = (vec![0.0; n], vec![0.0; n * n]);
        let (mut dsum, mut csum, mut zsum) = (vec![0.0; n], vec![0.0; n * n], vec![0.0; 2 * n]);
        for (qi, q) in self.queries.iter().enumerate() {
            self.index.query_into(&q.z, self.eps, &mut hits);
            dsum.fill(0.0);
            csum.fill(0.0);
            zsum.fill(0.0);
            let mut count = 0usize;
            for &id in &hits {
                let Some(st) = self.stencil(id, method) else { continue };
                count += 1;
                drift_quantity(method, &st, dt, &mut dq);
                for c in 0..n {
                    dsum[c] += dq[c];
                }
                if tr {
                    for (a, b) in zsum.iter_mut().zip(self.index.point(id + 1)) {
                        *a += b;
                    }
                } else {
                    cov_quantity(method, &st, dt, None, &mut cq)?;
                    for (a, b) in csum.iter_mut().zip(&cq) {
                        *a += b;
                    }
                }
            }
            if count == 0 {
                skipped += 1;
                continue;
            }
            let w = 1.0 / count as f64;
            drift.extend(dsum.iter().map(|v| v * w));
            if tr {
                next_points.push(AugmentedSample::new(q.t, zsum.iter().map(|v| v * w).collect())?);
            } else {
                cov.extend(csum.iter().map(|v| v * w));
            }
            points.push(q.clone());
            indices.push(qi);
            counts.push(count);
        }
        if skipped > 0 {
            log::warn!("B1 skipped {skipped} queries without stencil-valid neighbours");
        }
        let set = EstimateSet::new(method, dt, points, next_points, indices, drift, (!tr).then_some(cov))?;
        Ok(B1Output {
            set,
            neighbor_counts: counts,
            skipped,
        })
    }
}

impl EstimateSource for B1Estimator<'_> {
    fn estimates(&self, method: EstimatorMethod) -> Result<EstimateSet> {
        Ok(self.estimate(method)?.set)
    }

    fn complete_tr(&self, set: &mut EstimateSet, drift: &DriftFn) -> Result<()> {
        if set.method != EstimatorMethod::Tr {
            return Err(Error::arg("TR completion requested for a non-TR estimate set"));
        }
        let n = self.index.dim() / 2;
        let dt = set.dt;
        // The drift at every indexed sample; a neighbour's successor is the next id.
        let fvals: Vec<Vec<f64>> = (0..self.index.len())
            .into_par_iter()
            .map(|id| drift(self.index.point(id)))
            .collect::<Result<_>>()?;
        let mut cov = Vec::with_capacity(set.len() * n * n);
        let mut hits = Vec::new();
        let mut cq = vec![0.0; n * n];
        let mut acc = vec![0.0; n * n];
        for &qi in &set.indices {
            self.index.query_into(&self.queries[qi].z, self.eps, &mut hits);
            acc.fill(0.0);
            let mut count = 0usize;
            for &id in &hits {
                let Some(st) = self.stencil(id, EstimatorMethod::Tr) else { continue };
                cov_quantity(EstimatorMethod::Tr, &st, dt, Some((&fvals[id], &fvals[id + 1])), &mut cq)?;
                for (a, b) in acc.iter_mut().zip(&cq) {
                    *a += b;
                }
                count += 1;
            }
            if count == 0 {
                return Err(Error::Internal("TR completion lost a query's neighbourhood".into()));
            }
            cov.extend(acc.iter().map(|v| v / count as f64));
        }
        let rebuilt = EstimateSet::new(
            set.method,
            set.dt,
            std::mem::take(&mut set.points),
            std::mem::take(&mut set.next_points),
            std::mem::take(&mut set.indices),
            std::mem::take(&mut set.drift),
            Some(cov),
        )?;
        *set = rebuilt;
        Ok(())
    }
}

/// B1 estimates at the given query points.
pub fn approach_b1(
    ensemble: &[Trajectory],
    tau: f64,
    queries: Vec<AugmentedSample>,
    eps: f64,
    method: EstimatorMethod,
) -> Result<EstimateSet> {
    Ok(B1Estimator::new(ensemble, tau, eps, queries)?.estimate(method)?.set)
}

#[derive(Clone, Debug)]
pub struct B2Output {
    pub fit: SparseFit,
    pub failed: usize,
    pub total: usize,
}

/// Per-path fits averaged coefficientwise. Failing paths are dropped; more
/// than half failing is an error.
pub fn approach_b2(
    ensemble: &[Trajectory],
    tau: f64,
    lib_f: &BasisLibrary,
    lib_g: &BasisLibrary,
    opts: &FitOptions,
    drift_method: EstimatorMethod,
    diffusion_method: EstimatorMethod,
) -> Result<B2Output> {
    if ensemble.is_empty() {
        return Err(Error::arg("ensemble is empty"));
    }
    let results: Vec<Result<SparseFit>> = ensemble
        .par_iter()
        .map(|traj| identify_from(&Pathwise { traj, tau }, lib_f, lib_g, opts, drift_method, diffusion_method))
        .collect();
    let total = results.len();
    let mut fits = Vec::with_capacity(total);
    let mut first = None;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => fits.push(f),
            Err(e) => {
                log::warn!("B2 dropped path {k}: {e}");
                first.get_or_insert_with(|| format!("path {k}: {e}"));
            }
        }
    }
    let failed = total - fits.len();
    if 2 * failed > total || fits.is_empty() {
        return Err(Error::AggregateFailure {
            failed,
            total,
            first: first.unwrap_or_default(),
        });
    }
    Ok(B2Output {
        fit: SparseFit::mean(&fits)?,
        failed,
        total,
    })
}
