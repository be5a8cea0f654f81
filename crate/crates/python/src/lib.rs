//! Python bindings: simulate benchmark models, run identification
//! experiments and call the estimators and the sparse regression directly.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sdde_core::{
    BenchmarkModel, BenchmarkResult, EstimatorMethod, ExperimentConfig, NoisePlan, SparseFit, TimeGrid,
};

fn to_py(e: sdde_core::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn method(name: &str) -> PyResult<EstimatorMethod> {
    name.parse().map_err(to_py)
}

/// Experiment configuration; round-trips through TOML.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Logistic model, approach B1 with KM estimates.
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        Self {
            inner: ExperimentConfig::logistic_default(seed),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    #[getter]
    fn model(&self) -> &'static str {
        self.inner.model.name()
    }

    #[setter]
    fn set_model(&mut self, name: &str) -> PyResult<()> {
        self.inner.model = BenchmarkModel::by_name(name).map_err(to_py)?;
        self.inner.library = Default::default();
        Ok(())
    }

    #[getter]
    fn approach(&self) -> String {
        self.inner.approach.to_string()
    }

    #[setter]
    fn set_approach(&mut self, name: &str) -> PyResult<()> {
        self.inner.approach = name.parse().map_err(to_py)?;
        Ok(())
    }

    #[getter]
    fn drift_method(&self) -> String {
        self.inner.drift_method.to_string()
    }

    #[setter]
    fn set_drift_method(&mut self, name: &str) -> PyResult<()> {
        self.inner.drift_method = method(name)?;
        Ok(())
    }

    #[getter]
    fn diffusion_method(&self) -> String {
        self.inner.diffusion_method.to_string()
    }

    #[setter]
    fn set_diffusion_method(&mut self, name: &str) -> PyResult<()> {
        self.inner.diffusion_method = method(name)?;
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn paths(&self) -> usize {
        self.inner.paths
    }

    #[setter]
    fn set_paths(&mut self, v: usize) {
        self.inner.paths = v;
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }

    #[setter]
    fn set_eps(&mut self, v: f64) {
        self.inner.eps = v;
    }

    #[getter]
    fn lambda_f(&self) -> f64 {
        self.inner.lambda_f
    }

    #[setter]
    fn set_lambda_f(&mut self, v: f64) {
        self.inner.lambda_f = v;
    }

    #[getter]
    fn lambda_g(&self) -> f64 {
        self.inner.lambda_g
    }

    #[setter]
    fn set_lambda_g(&mut self, v: f64) {
        self.inner.lambda_g = v;
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.grid.dt
    }

    #[setter]
    fn set_dt(&mut self, v: f64) {
        self.inner.grid.dt = v;
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.inner.grid.t_end
    }

    #[setter]
    fn set_t_end(&mut self, v: f64) {
        self.inner.grid.t_end = v;
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.inner.label())
    }
}

/// One sampled path: times and row-major states.
#[pyclass(name = "Trajectory")]
struct PyTrajectory {
    inner: sdde_core::Trajectory,
    tau: f64,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.tau
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.grid().dt()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn times(&self) -> Vec<f64> {
        (0..self.inner.len()).map(|i| self.inner.grid().time(i)).collect()
    }

    /// States as a list of rows.
    fn states(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|i| self.inner.state(i).to_vec()).collect()
    }

    /// Augmented points `(X(t), X(t - tau))`.
    fn augmented(&self) -> PyResult<Vec<Vec<f64>>> {
        let z = sdde_core::augment(&self.inner, self.tau).map_err(to_py)?;
        Ok(z.into_iter().map(|s| s.z).collect())
    }

    fn drift_estimate(&self, method_name: &str, i: usize) -> PyResult<Vec<f64>> {
        sdde_core::drift_estimate(method(method_name)?, &self.inner, i).map_err(to_py)
    }

    /// Row-major `n x n` covariance estimate without drift correction.
    fn cov_estimate(&self, method_name: &str, i: usize) -> PyResult<Vec<f64>> {
        sdde_core::cov_estimate(method(method_name)?, &self.inner, i, None).map_err(to_py)
    }

    /// Valid index range `(lo, hi)` of an estimator on this path.
    fn valid_range(&self, method_name: &str) -> PyResult<(usize, usize)> {
        method(method_name)?
            .valid_range(self.inner.len())
            .ok_or_else(|| PyValueError::new_err("path too short for this estimator"))
    }
}

/// Identified drift and covariance coefficients.
#[pyclass(name = "Fit")]
struct PyFit {
    inner: SparseFit,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn drift_terms(&self) -> Vec<String> {
        self.inner.lib_f.names().into_iter().map(String::from).collect()
    }

    #[getter]
    fn diffusion_terms(&self) -> Vec<String> {
        self.inner.lib_g.names().into_iter().map(String::from).collect()
    }

    /// Nonzero drift coefficients of component `c`.
    fn drift(&self, c: usize) -> PyResult<BTreeMap<String, f64>> {
        if c >= self.inner.n {
            return Err(PyValueError::new_err(format!("component {c} out of range")));
        }
        Ok(self.inner.drift_map(c))
    }

    /// Nonzero coefficients of covariance entry `(r, c)`.
    fn covariance(&self, r: usize, c: usize) -> PyResult<BTreeMap<String, f64>> {
        let n = self.inner.n;
        if r >= n || c >= n {
            return Err(PyValueError::new_err(format!("entry ({r}, {c}) out of range")));
        }
        Ok(self.inner.cov_map(r * n + c))
    }

    fn eval_drift(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.eval_drift(&z).map_err(to_py)
    }

    fn eval_cov(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.eval_cov(&z).map_err(to_py)
    }

    fn report(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_report(&mut buf).map_err(to_py)?;
        Ok(String::from_utf8_lossy(&buf).into_owned())
    }
}

fn result_dict(r: &BenchmarkResult) -> BTreeMap<String, Option<String>> {
    let ledger = sdde_core::Ledger::new(vec![r.clone()]);
    let header = ledger.header();
    let text = ledger.to_csv_string().unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let row = reader.records().next().and_then(|r| r.ok());
    header
        .into_iter()
        .enumerate()
        .map(|(k, h)| {
            let v = row.as_ref().and_then(|r| r.get(k)).filter(|s| !s.is_empty()).map(String::from);
            (h, v)
        })
        .collect()
}

/// Simulate `paths` trajectories of a benchmark model.
#[pyfunction]
#[pyo3(signature = (model, t_end, dt = 0.01, paths = 1, seed = 0, fine_dt = None))]
fn simulate(model: &str, t_end: f64, dt: f64, paths: usize, seed: u64, fine_dt: Option<f64>) -> PyResult<Vec<PyTrajectory>> {
    let model = BenchmarkModel::by_name(model).map_err(to_py)?;
    let spec = model.spec().map_err(to_py)?;
    let grid = TimeGrid::from_window(0.0, t_end, dt).map_err(to_py)?;
    let fine = fine_dt.unwrap_or_else(|| model.default_fine_dt(dt));
    let plan = NoisePlan::for_grid(spec.noise_dim(), dt, fine, seed).map_err(to_py)?;
    let ens = sdde_core::simulate_ensemble(&spec, &grid, &plan, paths).map_err(to_py)?;
    Ok(ens
        .into_iter()
        .map(|inner| PyTrajectory { inner, tau: spec.tau() })
        .collect())
}

/// Run one experiment; returns the fit and the ledger row as a dict of
/// strings (`None` for empty cells).
#[pyfunction]
fn identify(py: Python<'_>, config: &PyConfig) -> PyResult<(PyFit, BTreeMap<String, Option<String>>)> {
    let cfg = config.inner.clone();
    let out = py.detach(move || sdde_core::run(&cfg)).map_err(to_py)?;
    Ok((PyFit { inner: out.fit }, result_dict(&out.result)))
}

/// Drift and diffusion library term names of a benchmark model.
#[pyfunction]
fn library_names(model: &str) -> PyResult<(Vec<String>, Vec<String>)> {
    let cfg = ExperimentConfig {
        model: BenchmarkModel::by_name(model).map_err(to_py)?,
        ..ExperimentConfig::logistic_default(0)
    };
    let (f, g) = cfg.library.build(&cfg.model).map_err(to_py)?;
    let names = |l: &sdde_core::BasisLibrary| l.names().into_iter().map(String::from).collect();
    Ok((names(&f), names(&g)))
}

/// Sequentially thresholded least squares on a dense design given as rows.
/// Returns `(coef, status)`.
#[pyfunction]
#[pyo3(signature = (theta, y, lam, max_iter = 10))]
fn stls(theta: Vec<Vec<f64>>, y: Vec<f64>, lam: f64, max_iter: usize) -> PyResult<(Vec<f64>, String)> {
    let m = theta.len();
    let p = theta.first().map_or(0, Vec::len);
    if theta.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("ragged design matrix"));
    }
    let a = DMatrix::from_fn(m, p, |i, j| theta[i][j]);
    let res = sdde_core::stls(&a, &DVector::from_vec(y), lam, max_iter).map_err(to_py)?;
    Ok((res.coef, res.status.to_string()))
}

#[pymodule]
fn sddeid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(library_names, m)?)?;
    m.add_function(wrap_pyfunction!(stls, m)?)?;
    Ok(())
}
