//! Least squares, sequentially thresholded least squares, and assembly of the
//! drift and covariance regression problems.
//!
//! Designs are compressed on the fly: rows of `[Theta | Y]` are folded into
//! the triangular factor of a QR decomposition in fixed-size blocks, so only
//! a `(p + k) x (p + k)` matrix is kept however many samples are used.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::estimators::{EstimateSet, EstimatorMethod};
use crate::library::BasisLibrary;
use crate::models::CoefficientMap;

const BLOCK_ROWS: usize = 2048;

/// Triangular factor of `[A | Y]` for an `m x p` design and `k` targets.
#[derive(Clone, Debug)]
pub struct CompressedProblem {
    p: usize,
    k: usize,
    rows: usize,
    r: DMatrix<f64>,
    block: Vec<f64>,
    block_rows: usize,
}

impl CompressedProblem {
    pub fn new(p: usize, k: usize) -> Self {
        Self {
            p,
            k,
            rows: 0,
            r: DMatrix::zeros(0, p + k),
            block: Vec::with_capacity(BLOCK_ROWS * (p + k)),
            block_rows: 0,
        }
    }

    pub fn from_matrices(a: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != y.nrows() {
            return Err(Error::arg(format!(
                "design has {} rows but targets have {}",
                a.nrows(),
                y.nrows()
            )));
        }
        let (p, k) = (a.ncols(), y.ncols());
        let mut prob = Self::new(p, k);
        let mut row = vec![0.0; p + k];
        for i in 0..a.nrows() {
            for j in 0..p {
                row[j] = a[(i, j)];
            }
            for j in 0..k {
                row[p + j] = y[(i, j)];
            }
            prob.push_row(&row)?;
        }
        prob.flush();
        Ok(prob)
    }

    pub fn n_terms(&self) -> usize {
        self.p
    }

    pub fn n_targets(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.rows + self.block_rows
    }

    /// Appends one row `[theta | y]` of length `p + k`.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.p + self.k {
            return Err(Error::Internal("regression row has the wrong width".into()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite value in regression data"));
        }
        self.block.extend_from_slice(row);
        self.block_rows += 1;
        if self.block_rows == BLOCK_ROWS {
            self.flush();
        }
        Ok(())
    }

    /// Folds buffered rows into the triangular factor.
    pub fn flush(&mut self) {
        if self.block_rows == 0 {
            return;
        }
        let w = self.p + self.k;
        let prev = self.r.nrows();
        let mut stacked = DMatrix::zeros(prev + self.block_rows, w);
        stacked.view_mut((0, 0), (prev, w)).copy_from(&self.r);
        for i in 0..self.block_rows {
            for j in 0..w {
                stacked[(prev + i, j)] = self.block[i * w + j];
            }
        }
        self.r = stacked.qr().r();
        self.rows += self.block_rows;
        self.block.clear();
        self.block_rows = 0;
    }

    fn solved(&self) -> Result<&DMatrix<f64>> {
        if self.block_rows > 0 {
            return Err(Error::Internal("compressed problem has unflushed rows".into()));
        }
        Ok(&self.r)
    }

    fn factor_a(&self) -> DMatrix<f64> {
        let mut ra = DMatrix::zeros(self.p, self.p);
        let h = self.r.nrows().min(self.p);
        ra.view_mut((0, 0), (h, self.p)).copy_from(&self.r.view((0, 0), (h, self.p)));
        ra
    }

    fn rhs(&self, j: usize) -> DVector<f64> {
        let mut c = DVector::zeros(self.p);
        for i in 0..self.r.nrows().min(self.p) {
            c[i] = self.r[(i, self.p + j)];
        }
        c
    }

    /// Squared norm of target `j` orthogonal to the design's column space.
    fn orthogonal_sq(&self, j: usize) -> f64 {
        (self.p..self.r.nrows()).map(|i| self.r[(i, self.p + j)].powi(2)).sum()
    }

    /// `||A x - y_j||^2`.
    pub fn residual_sq(&self, j: usize, x: &[f64]) -> Result<f64> {
        self.solved()?;
        let ra = self.factor_a();
        let c = self.rhs(j);
        let x = DVector::from_column_slice(x);
        Ok((ra * x - c).norm_squared() + self.orthogonal_sq(j))
    }

    /// 2-norm condition number of the design.
    pub fn condition_number(&self) -> Result<f64> {
        self.solved()?;
        let sv = self.factor_a().singular_values();
        let max = sv.max();
        let min = sv.min();
        Ok(if min > 0.0 { max / min } else { f64::INFINITY })
    }

    /// Least squares for target `j` restricted to the columns in `support`;
    /// other entries are zero. Rank-deficient subproblems get the
    /// minimum-norm solution (in the column-equilibrated metric when
    /// `equilibrate` is set).
    pub fn solve_subset(&self, j: usize, support: &[usize], equilibrate: bool) -> Result<Vec<f64>> {
        self.solved()?;
        let mut x = vec![0.0; self.p];
        if support.is_empty() {
            return Ok(x);
        }
        let ra = self.factor_a();
        let s = support.len();
        let mut sub = DMatrix::zeros(self.p, s);
        let mut scale = vec![1.0; s];
        for (c, &col) in support.iter().enumerate() {
            sub.set_column(c, &ra.column(col));
            if equilibrate {
                let norm = sub.column(c).norm();
                if norm > 0.0 {
                    scale[c] = norm;
                    sub.column_mut(c).unscale_mut(norm);
                }
            }
        }
        let svd = sub.svd(true, true);
        let smax = svd.singular_values.max();
        let eps = smax * self.p.max(s) as f64 * f64::EPSILON;
        let sol = svd
            .solve(&self.rhs(j), eps)
            .map_err(|e| Error::Internal(format!("SVD solve failed: {e}")))?;
        for (c, &col) in support.iter().enumerate() {
            x[col] = sol[c] / scale[c];
        }
        Ok(x)
    }

    /// Sequentially thresholded least squares for target `j`.
    pub fn stls(&self, j: usize, opts: &StlsOptions) -> Result<StlsResult> {
        opts.validate()?;
        let mut support: Vec<usize> = (0..self.p).collect();
        let mut x = self.solve_subset(j, &support, opts.equilibrate)?;
        let mut status = StlsStatus::MaxIter;
        let mut iterations = 0;
        for it in 0..opts.max_iter {
            iterations = it + 1;
            let next: Vec<usize> = support.iter().copied().filter(|&c| x[c].abs() >= opts.lambda).collect();
            if next.is_empty() {
                log::warn!("STLS thresholded every coefficient of target {j} (lambda = {})", opts.lambda);
                let zeros = vec![0.0; self.p];
                let residual = self.residual_sq(j, &zeros)?;
                return Ok(StlsResult {
                    coef: zeros,
                    status: StlsStatus::EmptySupport,
                    iterations,
                    residual_sq: residual,
                });
            }
            if next == support {
                status = StlsStatus::Converged;
                break;
            }
            support = next;
            x = self.solve_subset(j, &support, opts.equilibrate)?;
        }
        if status == StlsStatus::MaxIter {
            for v in x.iter_mut() {
                if v.abs() < opts.lambda {
                    *v = 0.0;
                }
            }
        }
        let residual_sq = self.residual_sq(j, &x)?;
        Ok(StlsResult {
            coef: x,
            status,
            iterations,
            residual_sq,
        })
    }
}

/// Minimiser of `||A x - b||_2`, minimum-norm when `A` is rank deficient.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::arg("least squares needs a non-empty matrix"));
    }
    let y = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let prob = CompressedProblem::from_matrices(a, &y)?;
    let all: Vec<usize> = (0..a.ncols()).collect();
    Ok(DVector::from_vec(prob.solve_subset(0, &all, false)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StlsOptions {
    pub lambda: f64,
    pub max_iter: usize,
    /// Scale design columns to unit norm inside each solve.
    pub equilibrate: bool,
}

impl Default for StlsOptions {
    fn default() -> Self {
        Self {
            lambda: 0.025,
            max_iter: 10,
            equilibrate: true,
        }
    }
}

impl StlsOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::arg(format!("threshold must be nonnegative, got {}", self.lambda)));
        }
        if self.max_iter == 0 {
            return Err(Error::arg("STLS needs max_iter >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StlsStatus {
    Converged,
    MaxIter,
    /// Every coefficient fell below the threshold; the result is all zeros.
    EmptySupport,
}

impl fmt::Display for StlsStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Converged => "converged",
            Self::MaxIter => "max_iter",
            Self::EmptySupport => "empty_support",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StlsResult {
    pub coef: Vec<f64>,
    pub status: StlsStatus,
    pub iterations: usize,
    pub residual_sq: f64,
}

impl StlsResult {
    pub fn support(&self) -> Vec<usize> {
        (0..self.coef.len()).filter(|&j| self.coef[j] != 0.0).collect()
    }
}

pub fn stls(theta: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, max_iter: usize) -> Result<StlsResult> {
    let opts = StlsOptions {
        lambda,
        max_iter,
        ..StlsOptions::default()
    };
    opts.validate()?;
    let ym = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    CompressedProblem::from_matrices(theta, &ym)?.stls(0, &opts)
}

/// Regression matrices built from an estimate set.
#[derive(Clone, Debug)]
pub struct Problem {
    pub drift_design: DMatrix<f64>,
    pub cov_design: DMatrix<f64>,
    pub drift_targets: DMatrix<f64>,
    /// `None` when the estimate set carries no covariance yet (TR).
    pub cov_targets: Option<DMatrix<f64>>,
}

fn evaluation_error(lib: &BasisLibrary, sample: usize, term: usize) -> Error {
    Error::Evaluation {
        sample,
        term: lib.terms()[term].name.clone(),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum DesignKind {
    Plain,
    /// `(theta_i + theta_{i+1}) / 2`.
    Average,
    /// `theta_i + theta_{i+1}`.
    Sum,
}

fn design_kind(method: EstimatorMethod, drift: bool) -> DesignKind {
    match (method, drift) {
        (EstimatorMethod::Tr, true) => DesignKind::Average,
        (EstimatorMethod::Tr, false) => DesignKind::Sum,
        _ => DesignKind::Plain,
    }
}

fn design_row(set: &EstimateSet, lib: &BasisLibrary, kind: DesignKind, r: usize, out: &mut [f64], scratch: &mut [f64]) -> Result<()> {
    lib.evaluate_into(&set.points[r].z, out)
        .map_err(|j| evaluation_error(lib, r, j))?;
    if kind != DesignKind::Plain {
        let next = set
            .next_points
            .get(r)
            .ok_or_else(|| Error::Internal("TR design needs the next augmented state".into()))?;
        lib.evaluate_into(&next.z, scratch)
            .map_err(|j| evaluation_error(lib, r, j))?;
        let w = if kind == DesignKind::Average { 0.5 } else { 1.0 };
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o = w * (*o + *s);
        }
    }
    Ok(())
}

fn check_library(set: &EstimateSet, lib: &BasisLibrary) -> Result<()> {
    if lib.state_dim() != set.n {
        return Err(Error::arg(format!(
            "library is over {} states but the estimates have {}",
            lib.state_dim(),
            set.n
        )));
    }
    Ok(())
}

/// Dense design and target matrices. TR drift rows use averaged designs and
/// TR covariance rows summed designs; other methods use `theta(Z_i)`.
pub fn assemble_problem(set: &EstimateSet, lib: &BasisLibrary) -> Result<Problem> {
    check_library(set, lib)?;
    let (rows, p, n) = (set.len(), lib.len(), set.n);
    let build = |kind| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, p);
        let (mut row, mut scratch) = (vec![0.0; p], vec![0.0; p]);
        for r in 0..rows {
            design_row(set, lib, kind, r, &mut row, &mut scratch)?;
            for j in 0..p {
                m[(r, j)] = row[j];
            }
        }
        Ok(m)
    };
    let drift_design = build(design_kind(set.method, true))?;
    let cov_design = if set.method == EstimatorMethod::Tr {
        build(DesignKind::Sum)?
    } else {
        drift_design.clone()
    };
    let drift_targets = DMatrix::from_row_slice(rows, n, &set.drift);
    let cov_targets = set.cov.as_ref().map(|c| DMatrix::from_row_slice(rows, n * n, c));
    Ok(Problem {
        drift_design,
        cov_design,
        drift_targets,
        cov_targets,
    })
}

/// Coefficients and diagnostics for one group of targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetFit {
    /// `p x k`.
    pub coef: DMatrix<f64>,
    pub status: Vec<StlsStatus>,
    /// Root-mean-square residual per target.
    pub rms_residual: Vec<f64>,
    pub condition_number: f64,
    pub rows: usize,
}

fn compress(set: &EstimateSet, lib: &BasisLibrary, drift: bool, targets: &[usize]) -> Result<CompressedProblem> {
    check_library(set, lib)?;
    let p = lib.len();
    if set.len() < p {
        return Err(Error::InsufficientData {
            needed: p,
            got: set.len(),
        });
    }
    let kind = design_kind(set.method, drift);
    let n = set.n;
    let mut prob = CompressedProblem::new(p, targets.len());
    let mut row = vec![0.0; p + targets.len()];
    let mut scratch = vec![0.0; p];
    for r in 0..set.len() {
        design_row(set, lib, kind, r, &mut row[..p], &mut scratch)?;
        let src = if drift {
            set.drift_row(r)
        } else {
            set.cov_row(r)
                .ok_or_else(|| Error::MissingDependency("covariance estimates have not been computed".into()))?
        };
        debug_assert!(targets.iter().all(|&t| t < if drift { n } else { n * n }));
        for (c, &t) in targets.iter().enumerate() {
            row[p + c] = src[t];
        }
        prob.push_row(&row)?;
    }
    prob.flush();
    Ok(prob)
}

fn solve_targets(prob: &CompressedProblem, opts: &StlsOptions) -> Result<TargetFit> {
    let (p, k) = (prob.n_terms(), prob.n_targets());
    let mut coef = DMatrix::zeros(p, k);
    let mut status = Vec::with_capacity(k);
    let mut rms = Vec::with_capacity(k);
    for j in 0..k {
        let res = prob.stls(j, opts)?;
        coef.set_column(j, &DVector::from_vec(res.coef));
        status.push(res.status);
        rms.push((res.residual_sq / prob.rows() as f64).sqrt());
    }
    Ok(TargetFit {
        coef,
        status,
        rms_residual: rms,
        condition_number: prob.condition_number()?,
        rows: prob.rows(),
    })
}

/// One STLS problem per drift component.
pub fn fit_drift(set: &EstimateSet, lib: &BasisLibrary, opts: &StlsOptions) -> Result<TargetFit> {
    let targets: Vec<usize> = (0..set.n).collect();
    solve_targets(&compress(set, lib, true, &targets)?, opts)
}

/// One STLS problem per upper-triangular covariance entry, mirrored to the
/// full row-major `n x n` layout.
pub fn fit_cov(set: &EstimateSet, lib: &BasisLibrary, opts: &StlsOptions) -> Result<TargetFit> {
    let n = set.n;
    let upper: Vec<usize> = (0..n).flat_map(|r| (r..n).map(move |c| r * n + c)).collect();
    let half = solve_targets(&compress(set, lib, false, &upper)?, opts)?;
    let p = lib.len();
    let mut coef = DMatrix::zeros(p, n * n);
    let mut status = vec![StlsStatus::Converged; n * n];
    let mut rms = vec![0.0; n * n];
    for (j, &e) in upper.iter().enumerate() {
        let (r, c) = (e / n, e % n);
        for mirror in [r * n + c, c * n + r] {
            coef.set_column(mirror, &half.coef.column(j));
            status[mirror] = half.status[j];
            rms[mirror] = half.rms_residual[j];
        }
    }
    Ok(TargetFit {
        coef,
        status,
        rms_residual: rms,
        condition_number: half.condition_number,
        rows: half.rows,
    })
}

/// Identified drift and covariance in the coordinates of two libraries.
#[derive(Clone, Debug)]
pub struct SparseFit {
    pub lib_f: BasisLibrary,
    pub lib_g: BasisLibrary,
    pub n: usize,
    /// `p_f x n`.
    pub drift: DMatrix<f64>,
    /// `p_g x n^2`, columns in row-major order of the covariance entries.
    pub cov: DMatrix<f64>,
    pub lambda_f: f64,
    pub lambda_g: f64,
    pub drift_method: EstimatorMethod,
    pub diffusion_method: EstimatorMethod,
    pub drift_status: Vec<StlsStatus>,
    pub cov_status: Vec<StlsStatus>,
    pub drift_residual: Vec<f64>,
    pub cov_residual: Vec<f64>,
    pub drift_condition: f64,
    pub cov_condition: f64,
}

/// Threshold settings for the two regression problems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub drift: StlsOptions,
    pub cov: StlsOptions,
}

impl FitOptions {
    pub fn new(lambda_f: f64, lambda_g: f64) -> Self {
        Self {
            drift: StlsOptions::with_lambda(lambda_f),
            cov: StlsOptions::with_lambda(lambda_g),
        }
    }
}

impl Default for FitOptions {
    fn default() -> Self {
        Self::new(0.025, 0.025)
    }
}

impl SparseFit {
    pub fn from_parts(
        lib_f: &BasisLibrary,
        lib_g: &BasisLibrary,
        drift: TargetFit,
        cov: TargetFit,
        opts: &FitOptions,
        methods: (EstimatorMethod, EstimatorMethod),
    ) -> Result<Self> {
        let n = drift.coef.ncols();
        if drift.coef.nrows() != lib_f.len() || cov.coef.nrows() != lib_g.len() || cov.coef.ncols() != n * n {
            return Err(Error::Internal("coefficient shapes do not match the libraries".into()));
        }
        Ok(Self {
            lib_f: lib_f.clone(),
            lib_g: lib_g.clone(),
            n,
            drift: drift.coef,
            cov: cov.coef,
            lambda_f: opts.drift.lambda,
            lambda_g: opts.cov.lambda,
            drift_method: methods.0,
            diffusion_method: methods.1,
            drift_status: drift.status,
            cov_status: cov.status,
            drift_residual: drift.rms_residual,
            cov_residual: cov.rms_residual,
            drift_condition: drift.condition_number,
            cov_condition: cov.condition_number,
        })
    }

    pub fn eval_drift_into(&self, z: &[f64], row: &mut [f64], out: &mut [f64]) -> Result<()> {
        self.lib_f
            .evaluate_into(z, row)
            .map_err(|j| evaluation_error(&self.lib_f, 0, j))?;
        for c in 0..self.n {
            out[c] = self.drift.column(c).iter().zip(row.iter()).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    pub fn eval_cov_into(&self, z: &[f64], row: &mut [f64], out: &mut [f64]) -> Result<()> {
        self.lib_g
            .evaluate_into(z, row)
            .map_err(|j| evaluation_error(&self.lib_g, 0, j))?;
        for e in 0..self.n * self.n {
            out[e] = self.cov.column(e).iter().zip(row.iter()).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    pub fn eval_drift(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.lib_f.len()];
        let mut out = vec![0.0; self.n];
        self.eval_drift_into(z, &mut row, &mut out)?;
        Ok(out)
    }

    pub fn eval_cov(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.lib_g.len()];
        let mut out = vec![0.0; self.n * self.n];
        self.eval_cov_into(z, &mut row, &mut out)?;
        Ok(out)
    }

    fn named(lib: &BasisLibrary, m: &DMatrix<f64>, col: usize) -> CoefficientMap {
        lib.terms()
            .iter()
            .zip(m.column(col).iter())
            .filter(|(_, v)| **v != 0.0)
            .map(|(t, v)| (t.name.clone(), *v))
            .collect()
    }

    /// Nonzero drift coefficients of component `c` by term name.
    pub fn drift_map(&self, c: usize) -> CoefficientMap {
        Self::named(&self.lib_f, &self.drift, c)
    }

    /// Nonzero coefficients of covariance entry `e` (row-major) by term name.
    pub fn cov_map(&self, e: usize) -> CoefficientMap {
        Self::named(&self.lib_g, &self.cov, e)
    }

    pub fn drift_coefficient(&self, c: usize, name: &str) -> Option<f64> {
        self.lib_f.position(name).map(|j| self.drift[(j, c)])
    }

    pub fn cov_coefficient(&self, e: usize, name: &str) -> Option<f64> {
        self.lib_g.position(name).map(|j| self.cov[(j, e)])
    }

    /// Arithmetic mean of the raw coefficients, without re-thresholding.
    pub fn mean(fits: &[SparseFit]) -> Result<SparseFit> {
        let first = fits.first().ok_or_else(|| Error::arg("no fits to average"))?;
        let k = fits.len() as f64;
        let mut out = first.clone();
        for f in &fits[1..] {
            if f.drift.shape() != out.drift.shape() || f.cov.shape() != out.cov.shape() {
                return Err(Error::Internal("cannot average fits over different libraries".into()));
            }
            out.drift += &f.drift;
            out.cov += &f.cov;
        }
        out.drift /= k;
        out.cov /= k;
        for (acc, f) in [(&mut out.drift_residual, 0), (&mut out.cov_residual, 1)] {
            for (j, v) in acc.iter_mut().enumerate() {
                *v = fits
                    .iter()
                    .map(|x| if f == 0 { x.drift_residual[j] } else { x.cov_residual[j] })
                    .sum::<f64>()
                    / k;
            }
        }
        out.drift_condition = fits.iter().map(|f| f.drift_condition).fold(0.0, f64::max);
        out.cov_condition = fits.iter().map(|f| f.cov_condition).fold(0.0, f64::max);
        Ok(out)
    }

    /// Text report: ordered `term, coefficient` lists per target.
    pub fn write_report<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "drift_method = {}", self.drift_method)?;
        writeln!(w, "diffusion_method = {}", self.diffusion_method)?;
        writeln!(w, "lambda_f = {}", fmt_f64(self.lambda_f))?;
        writeln!(w, "lambda_G = {}", fmt_f64(self.lambda_g))?;
        writeln!(w, "drift_condition = {}", fmt_f64(self.drift_condition))?;
        writeln!(w, "cov_condition = {}", fmt_f64(self.cov_condition))?;
        for c in 0..self.n {
            writeln!(
                w,
                "\n[drift {}] status = {}, rms_residual = {}",
                c + 1,
                self.drift_status[c],
                fmt_f64(self.drift_residual[c])
            )?;
            for (name, v) in self.ordered(&self.lib_f, &self.drift, c) {
                writeln!(w, "{name}, {}", fmt_f64(v))?;
            }
        }
        for e in 0..self.n * self.n {
            let (r, c) = (e / self.n, e % self.n);
            writeln!(
                w,
                "\n[cov {}{}] status = {}, rms_residual = {}",
                r + 1,
                c + 1,
                self.cov_status[e],
                fmt_f64(self.cov_residual[e])
            )?;
            for (name, v) in self.ordered(&self.lib_g, &self.cov, e) {
                writeln!(w, "{name}, {}", fmt_f64(v))?;
            }
        }
        Ok(())
    }

    fn ordered<'a>(&self, lib: &'a BasisLibrary, m: &DMatrix<f64>, col: usize) -> Vec<(&'a str, f64)> {
        lib.terms()
            .iter()
            .enumerate()
            .filter(|(j, _)| m[(*j, col)] != 0.0)
            .map(|(j, t)| (t.name.as_str(), m[(j, col)]))
            .collect()
    }
}

/// Drift and covariance fit from one estimate set. A pathwise TR set without
/// covariance is completed with the drift just identified.
pub fn fit(set: &EstimateSet, lib_f: &BasisLibrary, lib_g: &BasisLibrary, lambda_f: f64, lambda_g: f64) -> Result<SparseFit> {
    fit_with(set, lib_f, lib_g, &FitOptions::new(lambda_f, lambda_g))
}

pub fn fit_with(set: &EstimateSet, lib_f: &BasisLibrary, lib_g: &BasisLibrary, opts: &FitOptions) -> Result<SparseFit> {
    let needed = lib_f.len().max(lib_g.len());
    if set.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: set.len(),
        });
    }
    let drift = fit_drift(set, lib_f, &opts.drift)?;
    let cov = if set.has_cov() {
        fit_cov(set, lib_g, &opts.cov)?
    } else {
        let mut completed = set.clone();
        let partial = drift_only(lib_f, &drift.coef);
        completed.inject_tr_drift(|z| partial.eval(z))?;
        fit_cov(&completed, lib_g, &opts.cov)?
    };
    SparseFit::from_parts(lib_f, lib_g, drift, cov, opts, (set.method, set.method))
}

/// Drift model given by coefficients over a library.
#[derive(Clone, Debug)]
pub struct DriftModel<'a> {
    lib: &'a BasisLibrary,
    coef: &'a DMatrix<f64>,
}

pub fn drift_only<'a>(lib: &'a BasisLibrary, coef: &'a DMatrix<f64>) -> DriftModel<'a> {
    DriftModel { lib, coef }
}

impl DriftModel<'_> {
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let row = self.lib.evaluate_point(z)?;
        Ok((0..self.coef.ncols())
            .map(|c| self.coef.column(c).iter().zip(&row).map(|(a, b)| a * b).sum())
            .collect())
    }
}
