//! Ground-truth SDDE models `dX = f(X, X_tau) dt + g(X, X_tau) dW`.
//!
//! Besides the generic [`ModelSpec`] this module provides the three benchmark
//! systems (delay logistic, delayed predator-prey, option pricing with
//! GARCH-type delayed volatility) and their true sparse coefficients expressed
//! by library term name. The identified covariance target is `C = g g^T`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{History, HistoryFn};
use crate::error::{Error, Result};
use crate::library::{self, BasisLibrary};

pub type StateMap = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Drift, diffusion, delay and initial history of an SDDE with a single
/// constant delay.
#[derive(Clone)]
pub struct ModelSpec {
    pub label: String,
    n: usize,
    q: usize,
    tau: f64,
    drift: StateMap,
    diffusion: StateMap,
    history: HistoryFn,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("q", &self.q)
            .field("tau", &self.tau)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// `drift` writes `n` values, `diffusion` writes the row-major `n x q`
    /// matrix, `history` maps `s in [-tau, 0]` to a state.
    pub fn new(
        label: impl Into<String>,
        n: usize,
        q: usize,
        tau: f64,
        drift: StateMap,
        diffusion: StateMap,
        history: HistoryFn,
    ) -> Result<Self> {
        if n == 0 || q == 0 {
            return Err(Error::arg("state and noise dimensions must be positive"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::arg(format!("delay must be positive, got {tau}")));
        }
        Ok(Self {
            label: label.into(),
            n,
            q,
            tau,
            drift,
            diffusion,
            history,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn noise_dim(&self) -> usize {
        self.q
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn drift_into(&self, x: &[f64], x_tau: &[f64], out: &mut [f64]) {
        (self.drift)(x, x_tau, out)
    }

    pub fn diffusion_into(&self, x: &[f64], x_tau: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, x_tau, out)
    }

    pub fn drift(&self, x: &[f64], x_tau: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.drift_into(x, x_tau, &mut out);
        out
    }

    /// Row-major `n x q`.
    pub fn diffusion(&self, x: &[f64], x_tau: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.q];
        self.diffusion_into(x, x_tau, &mut out);
        out
    }

    /// `C = g g^T`, row-major `n x n`.
    pub fn covariance(&self, x: &[f64], x_tau: &[f64]) -> Vec<f64> {
        let g = self.diffusion(x, x_tau);
        let (n, q) = (self.n, self.q);
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                c[i * n + j] = (0..q).map(|k| g[i * q + k] * g[j * q + k]).sum();
            }
        }
        c
    }

    pub fn history_map(&self) -> &HistoryFn {
        &self.history
    }

    pub fn history(&self) -> History {
        History::functional(self.n, self.tau, self.history.clone())
    }
}

fn require_positive(pairs: &[(&str, f64)]) -> Result<()> {
    for (name, v) in pairs {
        if !(*v > 0.0) || !v.is_finite() {
            return Err(Error::arg(format!("parameter {name} must be positive, got {v}")));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub alpha: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            sigma: 0.4,
            tau: 1.0,
        }
    }
}

/// Hutchinson equation with multiplicative noise:
/// `dX = a X (1 - X_tau) dt + s X dW`, history `cos(s)`.
pub fn logistic_model(alpha: f64, sigma: f64, tau: f64) -> Result<ModelSpec> {
    require_positive(&[("alpha", alpha), ("sigma", sigma), ("tau", tau)])?;
    ModelSpec::new(
        "logistic",
        1,
        1,
        tau,
        Arc::new(move |x, xt, out| out[0] = alpha * x[0] * (1.0 - xt[0])),
        Arc::new(move |x, _xt, out| out[0] = sigma * x[0]),
        Arc::new(|s, out| out[0] = s.cos()),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredatorPreyParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub kappa: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub tau: f64,
}

impl Default for PredatorPreyParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            gamma: 0.1,
            delta: 0.5,
            kappa: 0.1,
            sigma1: 0.4,
            sigma2: 0.4,
            tau: 1.0,
        }
    }
}

/// Prey `x1`, predator `x2`; diagonal multiplicative noise; history `(5, 2)`.
pub fn predator_prey_model(p: &PredatorPreyParams) -> Result<ModelSpec> {
    require_positive(&[
        ("alpha", p.alpha),
        ("beta", p.beta),
        ("gamma", p.gamma),
        ("delta", p.delta),
        ("kappa", p.kappa),
        ("sigma1", p.sigma1),
        ("sigma2", p.sigma2),
        ("tau", p.tau),
    ])?;
    let p = *p;
    ModelSpec::new(
        "predator_prey",
        2,
        2,
        p.tau,
        Arc::new(move |x, xt, out| {
            out[0] = x[0] * (p.alpha - p.beta * x[0] - p.gamma * xt[1]);
            out[1] = x[1] * (-p.delta + p.kappa * xt[0]);
        }),
        Arc::new(move |x, _xt, out| {
            out[0] = p.sigma1 * x[0];
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = p.sigma2 * x[1];
        }),
        Arc::new(|_s, out| {
            out[0] = 5.0;
            out[1] = 2.0;
        }),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptionPricingParams {
    pub r: f64,
    /// Long-run average variance.
    pub v: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Default for OptionPricingParams {
    fn default() -> Self {
        Self {
            r: 0.05,
            v: 0.127,
            alpha: 0.6,
            gamma: 0.4,
            tau: 0.002,
        }
    }
}

/// Delayed GARCH-type variance
/// `gamma V / (alpha + gamma) + alpha / (tau (alpha + gamma)) ln^2(x / x_tau)`.
pub fn volatility_squared(x: f64, x_tau: f64, v: f64, alpha: f64, gamma: f64, tau: f64) -> Result<f64> {
    if !(x > 0.0) || !(x_tau > 0.0) {
        return Err(Error::Domain {
            what: format!("log-return undefined for x = {x}, x_tau = {x_tau}"),
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    if !(tau > 0.0) || !(alpha + gamma > 0.0) {
        return Err(Error::arg("volatility needs tau > 0 and alpha + gamma > 0"));
    }
    let l = (x / x_tau).ln();
    Ok(gamma * v / (alpha + gamma) + alpha / (tau * (alpha + gamma)) * l * l)
}

/// `dX = r X dt + sigma(X, X_tau) X dW`, constant history 100.
pub fn option_pricing_model(p: &OptionPricingParams) -> Result<ModelSpec> {
    require_positive(&[
        ("r", p.r),
        ("V", p.v),
        ("alpha", p.alpha),
        ("gamma", p.gamma),
        ("tau", p.tau),
    ])?;
    let p = *p;
    ModelSpec::new(
        "option_pricing",
        1,
        1,
        p.tau,
        Arc::new(move |x, _xt, out| out[0] = p.r * x[0]),
        Arc::new(move |x, xt, out| {
            // NaN outside the positive quadrant; the integrator reports it as a blow-up.
            out[0] = match volatility_squared(x[0], xt[0], p.v, p.alpha, p.gamma, p.tau) {
                Ok(s2) => s2.sqrt() * x[0],
                Err(_) => f64::NAN,
            };
        }),
        Arc::new(|_s, out| out[0] = 100.0),
    )
}

/// Named coefficient map, keyed by library term name.
pub type CoefficientMap = BTreeMap<String, f64>;

/// True sparse coefficients of a model in the names of its default libraries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrueCoefficients {
    /// One map per drift component.
    pub drift: Vec<CoefficientMap>,
    /// One map per covariance entry, row-major `n x n`.
    pub cov: Vec<CoefficientMap>,
}

/// One of the three benchmark systems with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BenchmarkModel {
    Logistic(LogisticParams),
    PredatorPrey(PredatorPreyParams),
    OptionPricing(OptionPricingParams),
}

impl BenchmarkModel {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "logistic" => Ok(Self::Logistic(LogisticParams::default())),
            "predator_prey" => Ok(Self::PredatorPrey(PredatorPreyParams::default())),
            "option_pricing" => Ok(Self::OptionPricing(OptionPricingParams::default())),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected logistic, predator_prey or option_pricing)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Logistic(_) => "logistic",
            Self::PredatorPrey(_) => "predator_prey",
            Self::OptionPricing(_) => "option_pricing",
        }
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        match self {
            Self::Logistic(p) => logistic_model(p.alpha, p.sigma, p.tau),
            Self::PredatorPrey(p) => predator_prey_model(p),
            Self::OptionPricing(p) => option_pricing_model(p),
        }
    }

    pub fn tau(&self) -> f64 {
        match self {
            Self::Logistic(p) => p.tau,
            Self::PredatorPrey(p) => p.tau,
            Self::OptionPricing(p) => p.tau,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::PredatorPrey(_) => 2,
            _ => 1,
        }
    }

    /// Internal integration step used when none is configured: the grid step,
    /// except for delays shorter than it.
    pub fn default_fine_dt(&self, dt: f64) -> f64 {
        let tau = self.tau();
        if tau < dt {
            tau
        } else {
            dt
        }
    }

    /// Default drift and diffusion libraries (degree 2 polynomials, or the
    /// log-augmented libraries for option pricing).
    pub fn default_libraries(&self) -> (BasisLibrary, BasisLibrary) {
        match self {
            Self::OptionPricing(_) => (
                library::option_drift_library(),
                library::option_diffusion_library(),
            ),
            _ => {
                let lib = library::polynomial_library(self.dim(), 2, true)
                    .expect("degree-2 library for a positive dimension");
                (lib.clone(), lib)
            }
        }
    }

    /// Signed true coefficients. Entries of `C = g g^T` that vanish have an
    /// empty map.
    pub fn truth(&self) -> TrueCoefficients {
        let map = |pairs: &[(&str, f64)]| -> CoefficientMap {
            pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
        };
        match self {
            Self::Logistic(p) => TrueCoefficients {
                drift: vec![map(&[("X(t)", p.alpha), ("X(t)X(t-tau)", -p.alpha)])],
                cov: vec![map(&[("X(t)^2", p.sigma * p.sigma)])],
            },
            Self::PredatorPrey(p) => TrueCoefficients {
                drift: vec![
                    map(&[("X(t)", p.alpha), ("X(t)^2", -p.beta), ("X(t)Y(t-tau)", -p.gamma)]),
                    map(&[("Y(t)", -p.delta), ("Y(t)X(t-tau)", p.kappa)]),
                ],
                cov: vec![
                    map(&[("X(t)^2", p.sigma1 * p.sigma1)]),
                    CoefficientMap::new(),
                    CoefficientMap::new(),
                    map(&[("Y(t)^2", p.sigma2 * p.sigma2)]),
                ],
            },
            Self::OptionPricing(p) => {
                let s = p.alpha + p.gamma;
                TrueCoefficients {
                    drift: vec![map(&[("X(t)", p.r)])],
                    cov: vec![map(&[
                        ("X(t)^2", p.gamma * p.v / s),
                        (library::OPTION_LOG2_TERM, p.alpha / (p.tau * s)),
                    ])],
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn logistic_examples() {
        let m = logistic_model(2.0, 0.4, 1.0).unwrap();
        assert_eq!(m.drift(&[1.0], &[1.0]), vec![0.0]);
        assert_eq!(m.drift(&[1.0], &[0.0]), vec![2.0]);
        assert_abs_diff_eq!(m.diffusion(&[0.5], &[17.0])[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(m.history().eval(-0.5)[0], (-0.5f64).cos());
        assert!(logistic_model(0.0, 0.4, 1.0).is_err());
        assert!(logistic_model(2.0, -0.4, 1.0).is_err());
    }

    #[test]
    fn predator_prey_examples() {
        let m = predator_prey_model(&PredatorPreyParams::default()).unwrap();
        let f = m.drift(&[10.0, 0.0], &[0.0, 0.0]);
        assert_abs_diff_eq!(f[0], 0.0, epsilon = 1e-14);
        assert_eq!(f[1], 0.0);
        assert_eq!(m.diffusion(&[1.0, 1.0], &[3.0, 3.0]), vec![0.4, 0.0, 0.0, 0.4]);
        assert_eq!(m.history().eval(-0.3), vec![5.0, 2.0]);
        let bad = PredatorPreyParams {
            kappa: 0.0,
            ..Default::default()
        };
        assert!(predator_prey_model(&bad).is_err());
    }

    #[test]
    fn volatility_examples() {
        let p = OptionPricingParams::default();
        let flat = volatility_squared(100.0, 100.0, p.v, p.alpha, p.gamma, p.tau).unwrap();
        assert_abs_diff_eq!(flat, 0.0508, epsilon = 1e-15);
        let e = std::f64::consts::E;
        let v = volatility_squared(e, 1.0, p.v, p.alpha, p.gamma, p.tau).unwrap();
        assert_abs_diff_eq!(v, 300.0508, epsilon = 1e-9);
        assert_abs_diff_eq!(p.alpha / (p.tau * (p.alpha + p.gamma)), 300.0, epsilon = 1e-9);
        assert!(matches!(
            volatility_squared(-1.0, 1.0, p.v, p.alpha, p.gamma, p.tau),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn option_pricing_examples() {
        let m = option_pricing_model(&OptionPricingParams::default()).unwrap();
        assert_abs_diff_eq!(m.drift(&[100.0], &[1.0])[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.diffusion(&[100.0], &[100.0])[0], 22.538855339, epsilon = 1e-8);
        assert_eq!(m.history().eval(-0.001), vec![100.0]);
        assert!(m.diffusion(&[-1.0], &[100.0])[0].is_nan());
    }

    #[test]
    fn truth_matches_named_library_terms() {
        for model in [
            BenchmarkModel::by_name("logistic").unwrap(),
            BenchmarkModel::by_name("predator_prey").unwrap(),
            BenchmarkModel::by_name("option_pricing").unwrap(),
        ] {
            let (lf, lg) = model.default_libraries();
            let truth = model.truth();
            for map in &truth.drift {
                for name in map.keys() {
                    assert!(lf.position(name).is_some(), "{name} missing from drift library");
                }
            }
            for map in &truth.cov {
                for name in map.keys() {
                    assert!(lg.position(name).is_some(), "{name} missing from diffusion library");
                }
            }
        }
        let t = BenchmarkModel::by_name("logistic").unwrap().truth();
        assert_eq!(t.drift[0]["X(t)"], 2.0);
        assert_eq!(t.drift[0]["X(t)X(t-tau)"], -2.0);
        assert_abs_diff_eq!(t.cov[0]["X(t)^2"], 0.16, epsilon = 1e-15);
        let t = BenchmarkModel::by_name("option_pricing").unwrap().truth();
        assert_abs_diff_eq!(t.cov[0]["X(t)^2"], 0.0508, epsilon = 1e-15);
        assert_abs_diff_eq!(t.cov[0][library::OPTION_LOG2_TERM], 300.0, epsilon = 1e-9);
    }

    #[test]
    fn truth_reproduces_drift_and_covariance() {
        let model = BenchmarkModel::by_name("predator_prey").unwrap();
        let spec = model.spec().unwrap();
        let (lf, lg) = model.default_libraries();
        let truth = model.truth();
        let z = [4.0, 1.5, 3.0, 2.5];
        let row_f = lf.evaluate_point(&z).unwrap();
        let row_g = lg.evaluate_point(&z).unwrap();
        let eval = |lib: &BasisLibrary, row: &[f64], map: &CoefficientMap| -> f64 {
            map.iter().map(|(k, v)| v * row[lib.position(k).unwrap()]).sum()
        };
        let f = spec.drift(&z[..2], &z[2..]);
        let c = spec.covariance(&z[..2], &z[2..]);
        for i in 0..2 {
            assert_abs_diff_eq!(eval(&lf, &row_f, &truth.drift[i]), f[i], epsilon = 1e-12);
        }
        for e in 0..4 {
            assert_abs_diff_eq!(eval(&lg, &row_g, &truth.cov[e]), c[e], epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn covariance_is_psd_and_deterministic(
            x1 in 0.01f64..20.0, x2 in 0.01f64..20.0, y1 in 0.01f64..20.0, y2 in 0.01f64..20.0
        ) {
            let specs = [
                logistic_model(2.0, 0.4, 1.0).unwrap(),
                predator_prey_model(&PredatorPreyParams::default()).unwrap(),
                option_pricing_model(&OptionPricingParams::default()).unwrap(),
            ];
            for m in &specs {
                let n = m.dim();
                let (x, xt) = (&[x1, x2][..n], &[y1, y2][..n]);
                let c = m.covariance(x, xt);
                prop_assert_eq!(c.clone(), m.covariance(x, xt));
                prop_assert_eq!(m.drift(x, xt), m.drift(x, xt));
                for i in 0..n {
                    prop_assert!(c[i * n + i] > 0.0);
                }
                if n == 2 {
                    let det = c[0] * c[3] - c[1] * c[2];
                    prop_assert!(det >= -1e-12 * c[0] * c[3]);
                }
            }
        }
    }
}
