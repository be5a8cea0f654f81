use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::approaches::{approach_b2, identify_from, Approach, ApproachA, B1Estimator, EstimateSource};
use crate::data::{augment, Trajectory};
use crate::error::{Error, Result};
use crate::estimators::EstimatorMethod;
use crate::metrics::{coefficient_errors, rmse_drift_diffusion, rmse_state, support_check, BenchmarkResult};
use crate::regression::SparseFit;
use crate::simulate::{simulate, simulate_ensemble};

use super::config::ExperimentConfig;
use super::ledger::Ledger;

/// Environment variable holding the root directory for all outputs.
pub const OUTPUT_ENV: &str = "SDDEID_OUTPUT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub result: BenchmarkResult,
    pub fit: SparseFit,
    /// Directory the artifacts went to, if any.
    pub dir: Option<PathBuf>,
}

pub fn diffusion_mode(drift: EstimatorMethod, diffusion: EstimatorMethod) -> &'static str {
    if drift == diffusion {
        "matched"
    } else if diffusion == EstimatorMethod::Km {
        "same"
    } else {
        "custom"
    }
}

/// Ledger row for a run that stopped with `err`.
pub fn failed_result(cfg: &ExperimentConfig, err: &Error) -> BenchmarkResult {
    let mut r = blank_result(cfg);
    r.status = format!("error: {err}");
    r
}

fn blank_result(cfg: &ExperimentConfig) -> BenchmarkResult {
    BenchmarkResult {
        model: cfg.model.name().to_string(),
        approach: cfg.approach.to_string(),
        drift_method: cfg.drift_method.to_string(),
        diffusion_method: cfg.diffusion_method.to_string(),
        diffusion_mode: diffusion_mode(cfg.drift_method, cfg.diffusion_method).to_string(),
        paths: cfg.paths,
        eps: cfg.eps,
        lambda_f: cfg.lambda_f,
        lambda_g: cfg.lambda_g,
        seed: cfg.seed,
        status: "ok".into(),
        support: None,
        errors: Default::default(),
        rmse_full: None,
        rmse_drift: None,
        rmse_diffusion: None,
        note: String::new(),
        cpu_seconds: 0.0,
    }
}

/// Ground truth, identification on the training window, metrics on the
/// validation window, and artifacts under `output_root()/cfg.output`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let spec = cfg.model.spec()?;
    let tau = spec.tau();
    let grid = cfg.time_grid()?;
    let plan = cfg.noise_plan(grid.dt())?;
    let (lib_f, lib_g) = cfg.library.build(&cfg.model)?;
    let opts = cfg.fit_options();
    let m = grid.steps();
    let train = cfg.split().train_len(m);
    if train < 2 || train >= m {
        return Err(Error::Config(format!("split leaves {train} of {m} samples for training")));
    }

    let truth = match cfg.approach {
        Approach::A => vec![simulate(&spec, &grid, &plan)?],
        _ => simulate_ensemble(&spec, &grid, &plan, cfg.paths)?,
    };
    let training = truth
        .iter()
        .map(|t| t.truncated(train))
        .collect::<Result<Vec<Trajectory>>>()?;

    let mut result = blank_result(cfg);
    let (dm, cm) = (cfg.drift_method, cfg.diffusion_method);
    let start = Instant::now();
    let fit = match cfg.approach {
        Approach::A => {
            let src = ApproachA::new(&spec, &training[0], cfg.paths, &plan)?;
            identify_from(&src, &lib_f, &lib_g, &opts, dm, cm)?
        }
        Approach::B1 => {
            let src = B1Estimator::with_mode(&training, tau, cfg.eps, cfg.b1_queries)?;
            identify_from(&src, &lib_f, &lib_g, &opts, dm, cm)?
        }
        Approach::B2 => {
            let out = approach_b2(&training, tau, &lib_f, &lib_g, &opts, dm, cm)?;
            if out.failed > 0 {
                result.note = format!("{} of {} per-path fits dropped", out.failed, out.total);
            }
            out.fit
        }
    };
    result.cpu_seconds = start.elapsed().as_secs_f64();

    let truth_coef = cfg.model.truth();
    result.errors = coefficient_errors(&fit, &truth_coef)?;
    result.support = Some(support_check(&fit, &truth_coef));
    let validation = augment(&truth[0], tau)?.split_off(train);
    let (rd, rc) = rmse_drift_diffusion(&fit, &spec, &validation)?;
    result.rmse_drift = Some(rd);
    result.rmse_diffusion = Some(rc);
    match rmse_state(&spec, &fit, &grid, &plan, train..m) {
        Ok(v) => result.rmse_full = Some(v),
        Err(e) if !e.is_validation() => {
            log::warn!("{}: full RMSE unavailable: {e}", cfg.label());
            if !result.note.is_empty() {
                result.note.push_str("; ");
            }
            result.note.push_str(&format!("rmse_full: {e}"));
        }
        Err(e) => return Err(e),
    }

    let dir = match &cfg.output {
        Some(rel) => {
            let dir = output_root().join(rel);
            write_artifacts(&dir, cfg, &result, &fit, &training, tau)?;
            Some(dir)
        }
        None => None,
    };
    Ok(RunOutput { result, fit, dir })
}

fn write_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    result: &BenchmarkResult,
    fit: &SparseFit,
    training: &[Trajectory],
    tau: f64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    fit.write_report(BufWriter::new(fs::File::create(dir.join("fit_report.txt"))?))?;
    Ledger::new(vec![result.clone()]).write_csv(fs::File::create(dir.join("ledger.csv"))?)?;
    fit.lib_f.write_description(fs::File::create(dir.join("library_drift.csv"))?)?;
    fit.lib_g.write_description(fs::File::create(dir.join("library_diffusion.csv"))?)?;
    if !cfg.write_estimates {
        return Ok(());
    }
    // Estimation is repeated here so the timed step stays free of I/O.
    let mut methods = vec![cfg.drift_method];
    if cfg.diffusion_method != cfg.drift_method {
        methods.push(cfg.diffusion_method);
    }
    for method in methods {
        let path = dir.join(format!("estimates_{}.csv", method.tag()));
        let set = match cfg.approach {
            Approach::A => {
                let spec = cfg.model.spec()?;
                let plan = cfg.noise_plan(cfg.grid.dt)?;
                ApproachA::new(&spec, &training[0], cfg.paths, &plan)?.estimates(method)?
            }
            Approach::B1 => {
                let est = B1Estimator::with_mode(training, tau, cfg.eps, cfg.b1_queries)?;
                let out = est.estimate(method)?;
                let mut w = csv::Writer::from_path(dir.join(format!("neighbors_{}.csv", method.tag())))?;
                w.write_record(["query", "neighbors"])?;
                for (q, c) in out.set.indices.iter().zip(&out.neighbor_counts) {
                    w.write_record([q.to_string(), c.to_string()])?;
                }
                w.flush()?;
                out.set
            }
            Approach::B2 => crate::estimators::pathwise_estimates(method, &training[0], tau)?,
        };
        set.write_csv(BufWriter::new(fs::File::create(path)?))?;
    }
    Ok(())
}
