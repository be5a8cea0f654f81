use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approaches::Approach;
use crate::error::{Error, Result};
use crate::estimators::EstimatorMethod;

use super::config::ExperimentConfig;
use super::ledger::Ledger;
use super::run::{failed_result, output_root, run};

/// How the diffusion method relates to the drift method in a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMode {
    /// Diffusion always from KM.
    Same,
    /// Diffusion from the drift's method.
    Matched,
}

impl DiffusionMode {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Same => "same",
            Self::Matched => "matched",
        }
    }

    fn method(&self, drift: EstimatorMethod) -> EstimatorMethod {
        match self {
            Self::Same => EstimatorMethod::Km,
            Self::Matched => drift,
        }
    }
}

impl fmt::Display for DiffusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DiffusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Self::Same),
            "matched" => Ok(Self::Matched),
            _ => Err(Error::Config(format!("unknown diffusion mode `{s}` (expected same or matched)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatrixAxes {
    pub approaches: Vec<Approach>,
    pub methods: Vec<EstimatorMethod>,
    pub modes: Vec<DiffusionMode>,
}

impl MatrixAxes {
    /// 3 approaches x 4 methods x 2 diffusion modes.
    pub fn full() -> Self {
        Self {
            approaches: Approach::ALL.to_vec(),
            methods: EstimatorMethod::ALL.to_vec(),
            modes: vec![DiffusionMode::Same, DiffusionMode::Matched],
        }
    }

    pub fn cells(&self) -> usize {
        self.approaches.len() * self.methods.len() * self.modes.len()
    }
}

/// One run per cell of the Cartesian product. Cells run in parallel; a
/// failing cell becomes a flagged row. With `base.output` set, each cell
/// writes to its own subdirectory and the ledger and rendered table go to
/// the base directory.
pub fn benchmark_matrix(base: &ExperimentConfig, axes: &MatrixAxes) -> Result<Ledger> {
    if axes.cells() == 0 {
        return Err(Error::Config("benchmark axes must all be nonempty".into()));
    }
    base.validate()?;
    let mut cells = Vec::with_capacity(axes.cells());
    for &a in &axes.approaches {
        for &m in &axes.methods {
            for &mode in &axes.modes {
                let mut cfg = base.clone();
                cfg.approach = a;
                cfg.drift_method = m;
                cfg.diffusion_method = mode.method(m);
                cfg.output = base
                    .output
                    .as_ref()
                    .map(|o| o.join(format!("{a}-{m}-{mode}")));
                cells.push((cfg, mode));
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|(cfg, mode)| {
            let mut row = match run(cfg) {
                Ok(out) => out.result,
                Err(e) => {
                    log::warn!("{} failed: {e}", cfg.label());
                    failed_result(cfg, &e)
                }
            };
            row.diffusion_mode = mode.tag().to_string();
            row
        })
        .collect();
    let ledger = Ledger::new(rows);
    write_ledger(base, &ledger, None)?;
    Ok(ledger)
}

/// Parameters a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "eps")]
    Eps,
    #[serde(rename = "M")]
    Paths,
}

impl SweepParam {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Eps => "eps",
            Self::Paths => "M",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(Self::Eps),
            "M" | "m" | "paths" => Ok(Self::Paths),
            _ => Err(Error::Config(format!("unknown sweep parameter `{s}` (expected eps or M)"))),
        }
    }
}

/// One run per value. Writes the ledger and tidy plot data when
/// `base.output` is set.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Ledger> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut cells = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = base.clone();
        match param {
            SweepParam::Eps => cfg.eps = v,
            SweepParam::Paths => {
                if !(v >= 1.0) || v.fract() != 0.0 {
                    return Err(Error::Config(format!("ensemble size must be a positive integer, got {v}")));
                }
                cfg.paths = v as usize;
            }
        }
        cfg.validate()?;
        cfg.output = base
            .output
            .as_ref()
            .map(|o| o.join(format!("{}-{}={v:e}", cfg.approach, param.tag())));
        cells.push(cfg);
    }
    let rows = cells
        .par_iter()
        .map(|cfg| run(cfg).map(|o| o.result).unwrap_or_else(|e| {
            log::warn!("{} failed: {e}", cfg.label());
            failed_result(cfg, &e)
        }))
        .collect();
    let ledger = Ledger::new(rows);
    write_ledger(base, &ledger, Some(param))?;
    Ok(ledger)
}

/// Writes `ledger.csv`, `table.txt` and, for sweeps, `plot_<param>.csv`.
pub fn write_ledger(base: &ExperimentConfig, ledger: &Ledger, param: Option<SweepParam>) -> Result<Option<PathBuf>> {
    let Some(rel) = &base.output else { return Ok(None) };
    let dir = output_root().join(rel);
    fs::create_dir_all(&dir)?;
    ledger.write_csv(fs::File::create(dir.join("ledger.csv"))?)?;
    fs::write(dir.join("table.txt"), ledger.render_table())?;
    if let Some(p) = param {
        ledger.write_plot_data(p.tag(), fs::File::create(dir.join(format!("plot_{}.csv", p.tag())))?)?;
    }
    Ok(Some(dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::logistic_default(5);
        cfg.paths = 10;
        cfg.eps = 0.05;
        cfg.grid.t_end = 4.0;
        cfg
    }

    #[test]
    fn full_matrix_has_24_cells() {
        let l = benchmark_matrix(&small(), &MatrixAxes::full()).unwrap();
        assert_eq!(l.len(), 24);
        let same = l.rows.iter().filter(|r| r.diffusion_mode == "same").count();
        assert_eq!(same, 12);
        assert!(l.rows.iter().filter(|r| r.diffusion_mode == "same").all(|r| r.diffusion_method == "KM"));
    }

    #[test]
    fn single_cell_equals_run() {
        let base = small();
        let axes = MatrixAxes {
            approaches: vec![Approach::B1],
            methods: vec![EstimatorMethod::Km],
            modes: vec![DiffusionMode::Matched],
        };
        let mut a = benchmark_matrix(&base, &axes).unwrap().rows.remove(0);
        let mut b = run(&base).unwrap().result;
        a.cpu_seconds = 0.0;
        b.cpu_seconds = 0.0;
        assert_eq!(a, b);
        let mut c = sweep(&base, SweepParam::Eps, &[0.05]).unwrap().rows.remove(0);
        c.cpu_seconds = 0.0;
        assert_eq!(c, b);
    }

    #[test]
    fn empty_axes_and_values_are_rejected() {
        let axes = MatrixAxes {
            approaches: vec![],
            ..MatrixAxes::full()
        };
        assert!(benchmark_matrix(&small(), &axes).is_err());
        assert!(sweep(&small(), SweepParam::Eps, &[]).is_err());
        assert!(sweep(&small(), SweepParam::Paths, &[2.5]).is_err());
    }

    #[test]
    fn failing_cells_are_flagged() {
        let mut base = small();
        // Far too few rows for any fit.
        base.grid.t_end = 0.05;
        base.paths = 2;
        let l = benchmark_matrix(&base, &MatrixAxes::full()).unwrap();
        assert_eq!(l.len(), 24);
        assert!(l.rows.iter().all(|r| !r.is_ok()));
    }
}
