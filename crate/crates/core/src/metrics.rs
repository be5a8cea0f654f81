//! Coefficient errors and reconstruction RMSEs of an identified model.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentedSample, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, TrueCoefficients};
use crate::regression::SparseFit;
use crate::simulate::{integrate_with, simulate, FineLayout, NoisePlan};

/// Absolute errors keyed `f<c>:<term>` for drift component `c` and
/// `C<r><c>:<term>` for covariance entries (1-based).
pub type ErrorMap = BTreeMap<String, f64>;

pub fn drift_key(c: usize, term: &str) -> String {
    format!("f{}:{term}", c + 1)
}

pub fn cov_key(n: usize, e: usize, term: &str) -> String {
    format!("C{}{}:{term}", e / n + 1, e % n + 1)
}

/// `|fitted - true|` for every term carrying a true coefficient.
pub fn coefficient_errors(fit: &SparseFit, truth: &TrueCoefficients) -> Result<ErrorMap> {
    if truth.drift.len() != fit.n || truth.cov.len() != fit.n * fit.n {
        return Err(Error::arg("true coefficients do not match the fitted dimension"));
    }
    let mut out = ErrorMap::new();
    for (c, map) in truth.drift.iter().enumerate() {
        for (name, v) in map {
            let got = fit
                .drift_coefficient(c, name)
                .ok_or_else(|| Error::arg(format!("term `{name}` is not in the drift library")))?;
            out.insert(drift_key(c, name), (got - v).abs());
        }
    }
    for (e, map) in truth.cov.iter().enumerate() {
        for (name, v) in map {
            let got = fit
                .cov_coefficient(e, name)
                .ok_or_else(|| Error::arg(format!("term `{name}` is not in the diffusion library")))?;
            out.insert(cov_key(fit.n, e, name), (got - v).abs());
        }
    }
    Ok(out)
}

/// Whether the nonzero pattern equals the true one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportCheck {
    pub drift_exact: bool,
    pub cov_exact: bool,
}

pub fn support_check(fit: &SparseFit, truth: &TrueCoefficients) -> SupportCheck {
    let same = |got: Vec<String>, want: Vec<String>| got == want;
    let drift_exact = (0..fit.n).all(|c| {
        same(
            fit.drift_map(c).into_keys().collect(),
            truth.drift[c].keys().cloned().collect(),
        )
    });
    let cov_exact = (0..fit.n * fit.n).all(|e| {
        same(
            fit.cov_map(e).into_keys().collect(),
            truth.cov[e].keys().cloned().collect(),
        )
    });
    SupportCheck { drift_exact, cov_exact }
}

/// Re-simulates the identified model with the ground truth's noise and
/// history and returns the RMS deviation over `window` (grid indices).
/// The identified diffusion is `diag(sqrt(C_ii))`.
pub fn rmse_state(
    model_true: &ModelSpec,
    fit: &SparseFit,
    grid: &TimeGrid,
    plan: &NoisePlan,
    window: Range<usize>,
) -> Result<f64> {
    let truth = simulate(model_true, grid, plan)?;
    let identified = simulate_identified(model_true, fit, grid, plan)?;
    rms_deviation(&truth, &identified, window)
}

/// Path of the identified model driven by the same increments as `plan`.
pub fn simulate_identified(model_true: &ModelSpec, fit: &SparseFit, grid: &TimeGrid, plan: &NoisePlan) -> Result<Trajectory> {
    let n = fit.n;
    if model_true.dim() != n || model_true.noise_dim() != n {
        return Err(Error::arg(
            "common-noise re-simulation needs a diagonal-noise model with q = n",
        ));
    }
    let layout = FineLayout::new(n, n, model_true.tau(), grid, plan)?;
    let mut noise = plan.stream();
    let mut z = vec![0.0; 2 * n];
    let mut row_f = vec![0.0; fit.lib_f.len()];
    let mut row_g = vec![0.0; fit.lib_g.len()];
    let mut cov = vec![0.0; n * n];
    let (states, _) = integrate_with(layout, model_true.history_map(), grid.steps(), &mut noise, |x, xt, f, g| {
        z[..n].copy_from_slice(x);
        z[n..].copy_from_slice(xt);
        fit.eval_drift_into(&z, &mut row_f, f)?;
        fit.eval_cov_into(&z, &mut row_g, &mut cov)?;
        g.fill(0.0);
        for c in 0..n {
            let v = cov[c * n + c];
            if !(v >= 0.0) {
                return Err(Error::DiffusionExtraction {
                    component: c,
                    value: v,
                    state: z.clone(),
                });
            }
            g[c * n + c] = v.sqrt();
        }
        Ok(())
    })?;
    Trajectory::new(*grid, states, model_true.history())
}

fn rms_deviation(a: &Trajectory, b: &Trajectory, window: Range<usize>) -> Result<f64> {
    if window.is_empty() || window.end > a.len() || a.len() != b.len() {
        return Err(Error::arg(format!("invalid comparison window {window:?}")));
    }
    let n = a.dim();
    let mut sum = 0.0;
    for i in window.clone() {
        for c in 0..n {
            sum += (a.state(i)[c] - b.state(i)[c]).powi(2);
        }
    }
    Ok((sum / (window.len() * n) as f64).sqrt())
}

/// Pointwise RMS errors of the reconstructed drift and covariance
/// `C = g g^T` over `validation`, normalised by point count and dimension.
pub fn rmse_drift_diffusion(fit: &SparseFit, model_true: &ModelSpec, validation: &[AugmentedSample]) -> Result<(f64, f64)> {
    let n = fit.n;
    if validation.is_empty() {
        return Err(Error::arg("validation set is empty"));
    }
    let (mut ef, mut ec) = (0.0, 0.0);
    let mut row_f = vec![0.0; fit.lib_f.len()];
    let mut row_g = vec![0.0; fit.lib_g.len()];
    let mut f = vec![0.0; n];
    let mut c = vec![0.0; n * n];
    for (s, point) in validation.iter().enumerate() {
        let relabel = |e: Error| match e {
            Error::Evaluation { term, .. } => Error::Evaluation { sample: s, term },
            other => other,
        };
        fit.eval_drift_into(&point.z, &mut row_f, &mut f).map_err(relabel)?;
        fit.eval_cov_into(&point.z, &mut row_g, &mut c).map_err(relabel)?;
        let ft = model_true.drift(point.current(), point.delayed());
        let ct = model_true.covariance(point.current(), point.delayed());
        ef += f.iter().zip(&ft).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        ec += c.iter().zip(&ct).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let m = validation.len() as f64;
    Ok(((ef / (m * n as f64)).sqrt(), (ec / (m * (n * n) as f64)).sqrt()))
}

/// One ledger row: metrics of a run plus the settings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub model: String,
    pub approach: String,
    pub drift_method: String,
    pub diffusion_method: String,
    /// `same` (KM diffusion), `matched` (diffusion method = drift method) or `custom`.
    pub diffusion_mode: String,
    pub paths: usize,
    pub eps: f64,
    pub lambda_f: f64,
    pub lambda_g: f64,
    pub seed: u64,
    /// `ok`, or the error that stopped the run.
    pub status: String,
    pub support: Option<SupportCheck>,
    pub errors: ErrorMap,
    /// `None` when the identified model could not be re-simulated.
    pub rmse_full: Option<f64>,
    pub rmse_drift: Option<f64>,
    pub rmse_diffusion: Option<f64>,
    /// Free-form diagnostics (dropped B2 paths, skipped B1 queries, ...).
    pub note: String,
    /// Wall-clock seconds for estimation and regression.
    pub cpu_seconds: f64,
}

impl BenchmarkResult {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::augment;
    use crate::estimators::EstimatorMethod;
    use crate::models::BenchmarkModel;
    use crate::regression::{FitOptions, StlsStatus, TargetFit};
    use nalgebra::DMatrix;

    fn truth_fit(model: &BenchmarkModel, scale: f64) -> SparseFit {
        let (lf, lg) = model.default_libraries();
        let truth = model.truth();
        let n = model.dim();
        let mut drift = DMatrix::zeros(lf.len(), n);
        let mut cov = DMatrix::zeros(lg.len(), n * n);
        for (c, map) in truth.drift.iter().enumerate() {
            for (k, v) in map {
                drift[(lf.position(k).unwrap(), c)] = v * scale;
            }
        }
        for (e, map) in truth.cov.iter().enumerate() {
            for (k, v) in map {
                cov[(lg.position(k).unwrap(), e)] = v * scale;
            }
        }
        let part = |coef: DMatrix<f64>| TargetFit {
            status: vec![StlsStatus::Converged; coef.ncols()],
            rms_residual: vec![0.0; coef.ncols()],
            coef,
            condition_number: 1.0,
            rows: 0,
        };
        SparseFit::from_parts(
            &lf,
            &lg,
            part(drift),
            part(cov),
            &FitOptions::default(),
            (EstimatorMethod::Km, EstimatorMethod::Km),
        )
        .unwrap()
    }

    #[test]
    fn exact_fit_has_zero_errors() {
        for name in ["logistic", "predator_prey"] {
            let model = BenchmarkModel::by_name(name).unwrap();
            let fit = truth_fit(&model, 1.0);
            let errs = coefficient_errors(&fit, &model.truth()).unwrap();
            assert!(errs.values().all(|v| *v == 0.0));
            assert_eq!(support_check(&fit, &model.truth()), SupportCheck { drift_exact: true, cov_exact: true });

            let spec = model.spec().unwrap();
            let grid = TimeGrid::new(0.0, 0.01, 1001).unwrap();
            let plan = NoisePlan::for_grid(spec.noise_dim(), 0.01, 0.01, 5).unwrap();
            assert!(rmse_state(&spec, &fit, &grid, &plan, 800..1001).unwrap() < 1e-12);
            let traj = simulate(&spec, &grid, &plan).unwrap();
            let val = augment(&traj, spec.tau()).unwrap();
            let (a, b) = rmse_drift_diffusion(&fit, &spec, &val[800..]).unwrap();
            assert!(a < 1e-12 && b < 1e-12);
        }
    }

    #[test]
    fn logistic_error_example() {
        let model = BenchmarkModel::by_name("logistic").unwrap();
        let mut fit = truth_fit(&model, 1.0);
        fit.drift[(1, 0)] = 1.998;
        fit.drift[(4, 0)] = -2.003;
        let errs = coefficient_errors(&fit, &model.truth()).unwrap();
        assert!((errs["f1:X(t)"] - 2e-3).abs() < 1e-12);
        assert!((errs["f1:X(t)X(t-tau)"] - 3e-3).abs() < 1e-12);
    }

    #[test]
    fn zero_fit_drift_rmse_is_rms_of_true_drift() {
        let model = BenchmarkModel::by_name("logistic").unwrap();
        let spec = model.spec().unwrap();
        let fit = truth_fit(&model, 0.0);
        let grid = TimeGrid::new(0.0, 0.01, 500).unwrap();
        let plan = NoisePlan::for_grid(1, 0.01, 0.01, 2).unwrap();
        let val = augment(&simulate(&spec, &grid, &plan).unwrap(), 1.0).unwrap();
        let (a, _) = rmse_drift_diffusion(&fit, &spec, &val).unwrap();
        let want = (val.iter().map(|z| (2.0 * z.z[0] * (1.0 - z.z[1])).powi(2)).sum::<f64>() / val.len() as f64).sqrt();
        assert!((a - want).abs() < 1e-12);
        let full = rmse_state(&spec, &fit, &grid, &plan, 400..500).unwrap();
        assert!(full.is_finite() && full > 0.0);
    }

    #[test]
    fn negative_variance_is_reported() {
        let model = BenchmarkModel::by_name("logistic").unwrap();
        let spec = model.spec().unwrap();
        let fit = truth_fit(&model, -1.0);
        let grid = TimeGrid::new(0.0, 0.01, 50).unwrap();
        let plan = NoisePlan::for_grid(1, 0.01, 0.01, 2).unwrap();
        assert!(matches!(
            rmse_state(&spec, &fit, &grid, &plan, 40..50),
            Err(Error::DiffusionExtraction { component: 0, .. })
        ));
    }

    #[test]
    fn unknown_truth_term_is_rejected() {
        let model = BenchmarkModel::by_name("logistic").unwrap();
        let fit = truth_fit(&model, 1.0);
        let mut truth = model.truth();
        truth.drift[0].insert("Q(t)".into(), 1.0);
        assert!(matches!(coefficient_errors(&fit, &truth), Err(Error::Argument(_))));
    }
}
