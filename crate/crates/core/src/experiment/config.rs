use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::approaches::{Approach, QueryMode};
use crate::data::{SplitSpec, TimeGrid};
use crate::error::{Error, Result};
use crate::estimators::EstimatorMethod;
use crate::library::{self, BasisLibrary, CustomTerm, Placement};
use crate::models::BenchmarkModel;
use crate::regression::{FitOptions, StlsOptions};
use crate::simulate::NoisePlan;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t0: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Internal integration step; the model default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_dt: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t0: 0.0,
            dt: 0.01,
            t_end: 20.0,
            fine_dt: None,
        }
    }
}

/// Polynomial degrees and named extra terms. Absent degrees fall back to the
/// model defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibraryConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_degree: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_degree: Option<u32>,
    /// Appended to the drift library.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_custom: Option<Vec<String>>,
    /// Tensored with the monomials of the diffusion library.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_custom: Option<Vec<String>>,
}

/// Custom terms available by name.
pub fn custom_term(name: &str) -> Result<CustomTerm> {
    let lr = library::log_ratio_term();
    let lr2 = library::log_ratio_squared_term();
    if name == lr.name {
        Ok(lr)
    } else if name == lr2.name {
        Ok(lr2)
    } else {
        Err(Error::Config(format!(
            "unknown custom term `{name}` (known: `{}`, `{}`)",
            lr.name, lr2.name
        )))
    }
}

impl LibraryConfig {
    pub fn build(&self, model: &BenchmarkModel) -> Result<(BasisLibrary, BasisLibrary)> {
        let option = matches!(model, BenchmarkModel::OptionPricing(_));
        let n = model.dim();
        let df = self.drift_degree.unwrap_or(if option { 1 } else { 2 });
        let dg = self.diffusion_degree.unwrap_or(if option { 4 } else { 2 });
        let names = |v: &Option<Vec<String>>, default: &[&str]| -> Vec<String> {
            match v {
                Some(v) => v.clone(),
                None if option => default.iter().map(|s| s.to_string()).collect(),
                None => Vec::new(),
            }
        };
        let lr = library::log_ratio_term().name;
        let lr2 = library::log_ratio_squared_term().name;
        let fx = names(&self.drift_custom, &[lr.as_str()]);
        let gx = names(&self.diffusion_custom, &[lr.as_str(), lr2.as_str()]);
        let extend = |d: u32, extra: &[String], placement: Placement| -> Result<BasisLibrary> {
            let base = library::polynomial_library(n, d, true)?;
            if extra.is_empty() {
                return Ok(base);
            }
            if n != 1 {
                return Err(Error::Config("custom terms are defined for scalar models only".into()));
            }
            let terms = extra.iter().map(|s| custom_term(s)).collect::<Result<Vec<_>>>()?;
            library::with_custom_terms(&base, &terms, placement)
        };
        Ok((extend(df, &fx, Placement::Append)?, extend(dg, &gx, Placement::Tensor)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub approach: Approach,
    pub drift_method: EstimatorMethod,
    pub diffusion_method: EstimatorMethod,
    /// Ensemble size for B1/B2, synthetic paths per state for A.
    pub paths: usize,
    /// Neighbourhood radius, used by B1 only.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_lambda")]
    pub lambda_f: f64,
    #[serde(default = "default_lambda")]
    pub lambda_g: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_train")]
    pub train_fraction: f64,
    #[serde(default)]
    pub b1_queries: QueryMode,
    /// Relative to the output root; nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Also write the pointwise estimate CSVs.
    #[serde(default)]
    pub write_estimates: bool,
    pub model: BenchmarkModel,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub library: LibraryConfig,
}

fn default_eps() -> f64 {
    1e-4
}

fn default_lambda() -> f64 {
    0.025
}

fn default_max_iter() -> usize {
    10
}

fn default_train() -> f64 {
    0.8
}

impl ExperimentConfig {
    /// Logistic, B1, KM, M = 1000, eps = 1e-4 on [0, 20] with dt = 0.01.
    pub fn logistic_default(seed: u64) -> Self {
        Self {
            seed,
            approach: Approach::B1,
            drift_method: EstimatorMethod::Km,
            diffusion_method: EstimatorMethod::Km,
            paths: 1000,
            eps: default_eps(),
            lambda_f: default_lambda(),
            lambda_g: default_lambda(),
            max_iter: default_max_iter(),
            train_fraction: default_train(),
            b1_queries: QueryMode::default(),
            output: None,
            write_estimates: false,
            model: BenchmarkModel::by_name("logistic").expect("known model"),
            grid: GridConfig::default(),
            library: LibraryConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Checks every precondition that can be checked without simulating.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return bad(format!("eps must be finite and nonnegative, got {}", self.eps));
        }
        let min_paths = if self.approach == Approach::A { 2 } else { 1 };
        if self.paths < min_paths {
            return bad(format!("approach {} needs at least {min_paths} paths, got {}", self.approach, self.paths));
        }
        self.fit_options().drift.validate()?;
        self.fit_options().cov.validate()?;
        SplitSpec::new(self.train_fraction)?;
        self.model.spec()?;
        let grid = self.time_grid()?;
        self.noise_plan(grid.dt())?;
        self.library.build(&self.model)?;
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_window(self.grid.t0, self.grid.t_end, self.grid.dt)
    }

    pub fn fine_dt(&self) -> f64 {
        self.grid.fine_dt.unwrap_or_else(|| self.model.default_fine_dt(self.grid.dt))
    }

    pub fn noise_plan(&self, dt: f64) -> Result<NoisePlan> {
        let spec = self.model.spec()?;
        NoisePlan::for_grid(spec.noise_dim(), dt, self.fine_dt(), self.seed)
    }

    pub fn fit_options(&self) -> FitOptions {
        let opt = |lambda| StlsOptions {
            lambda,
            max_iter: self.max_iter,
            ..StlsOptions::default()
        };
        FitOptions {
            drift: opt(self.lambda_f),
            cov: opt(self.lambda_g),
        }
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
        }
    }

    /// Short cell label such as `logistic/B1/KM+KM/M=1000/eps=1e-4/seed=1`.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}+{}/M={}/eps={:e}/seed={}",
            self.model.name(),
            self.approach,
            self.drift_method,
            self.diffusion_method,
            self.paths,
            self.eps,
            self.seed
        )
    }
}
