//! Pathwise drift and covariance estimators (KM, FD, CD, TR).
//!
//! All covariance estimators target `C = g g^T`. KM, FD and CD therefore carry
//! twice the usual `1/(2 dt)`-type prefactor; TR returns the sum
//! `C(Z_i) + C(Z_{i+1})` and needs drift values at both ends.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{augment, fmt_f64, AugmentedSample, Trajectory};
use crate::error::{Error, Result};

/// Minimum number of stencil-valid rows an estimate set must contain.
pub const MIN_ROWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorMethod {
    #[serde(rename = "KM")]
    Km,
    #[serde(rename = "FD")]
    Fd,
    #[serde(rename = "CD")]
    Cd,
    #[serde(rename = "TR")]
    Tr,
}

impl EstimatorMethod {
    pub const ALL: [EstimatorMethod; 4] = [Self::Km, Self::Fd, Self::Cd, Self::Tr];

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Km => "KM",
            Self::Fd => "FD",
            Self::Cd => "CD",
            Self::Tr => "TR",
        }
    }

    /// Samples needed before `t_i`.
    pub fn back(&self) -> usize {
        matches!(self, Self::Cd) as usize
    }

    /// Samples needed after `t_i`.
    pub fn ahead(&self) -> usize {
        if matches!(self, Self::Fd) {
            2
        } else {
            1
        }
    }

    /// Inclusive range of valid indices on an `m`-sample trajectory.
    pub fn valid_range(&self, m: usize) -> Option<(usize, usize)> {
        let lo = self.back();
        let hi = m.checked_sub(self.ahead() + 1)?;
        (lo <= hi).then_some((lo, hi))
    }

    pub fn is_valid(&self, m: usize, i: usize) -> bool {
        matches!(self.valid_range(m), Some((lo, hi)) if i >= lo && i <= hi)
    }

    fn check_index(&self, m: usize, i: usize) -> Result<()> {
        if self.is_valid(m, i) {
            return Ok(());
        }
        let valid = match self.valid_range(m) {
            Some((lo, hi)) => format!("{lo}..={hi}"),
            None => "empty".to_string(),
        };
        Err(Error::Stencil {
            method: self.tag(),
            index: i,
            valid,
        })
    }
}

impl fmt::Display for EstimatorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EstimatorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "KM" => Ok(Self::Km),
            "FD" => Ok(Self::Fd),
            "CD" => Ok(Self::Cd),
            "TR" => Ok(Self::Tr),
            _ => Err(Error::Config(format!("unknown estimator `{s}` (expected KM, FD, CD or TR)"))),
        }
    }
}

/// States around `t_i`. Entries a method does not use may be empty.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil<'a> {
    pub prev: &'a [f64],
    pub cur: &'a [f64],
    pub next: &'a [f64],
    pub next2: &'a [f64],
}

impl<'a> Stencil<'a> {
    pub fn on(traj: &'a Trajectory, method: EstimatorMethod, i: usize) -> Self {
        let empty: &[f64] = &[];
        Self {
            prev: if method.back() > 0 { traj.state(i - 1) } else { empty },
            cur: traj.state(i),
            next: traj.state(i + 1),
            next2: if method.ahead() > 1 { traj.state(i + 2) } else { empty },
        }
    }
}

pub(crate) fn drift_quantity(method: EstimatorMethod, s: &Stencil, dt: f64, out: &mut [f64]) {
    for c in 0..out.len() {
        out[c] = match method {
            EstimatorMethod::Km | EstimatorMethod::Tr => (s.next[c] - s.cur[c]) / dt,
            EstimatorMethod::Fd => (4.0 * (s.next[c] - s.cur[c]) - (s.next2[c] - s.cur[c])) / (2.0 * dt),
            EstimatorMethod::Cd => (s.next[c] - s.prev[c]) / (2.0 * dt),
        };
    }
}

/// Row-major symmetric `n x n` covariance quantity. TR requires the drift at
/// `t_i` and `t_{i+1}`.
pub(crate) fn cov_quantity(
    method: EstimatorMethod,
    s: &Stencil,
    dt: f64,
    tr_drift: Option<(&[f64], &[f64])>,
    out: &mut [f64],
) -> Result<()> {
    let n = s.cur.len();
    let outer = |out: &mut [f64], a: &dyn Fn(usize) -> f64, scale: f64, acc: bool| {
        for r in 0..n {
            for c in r..n {
                let v = a(r) * a(c) * scale;
                if acc {
                    out[r * n + c] += v;
                } else {
                    out[r * n + c] = v;
                }
            }
        }
    };
    match method {
        EstimatorMethod::Km => outer(out, &|c| s.next[c] - s.cur[c], 1.0 / dt, false),
        EstimatorMethod::Fd => {
            outer(out, &|c| s.next[c] - s.cur[c], 4.0 / (2.0 * dt), false);
            outer(out, &|c| s.next2[c] - s.cur[c], -1.0 / (2.0 * dt), true);
        }
        EstimatorMethod::Cd => outer(out, &|c| s.next[c] - s.prev[c], 1.0 / (2.0 * dt), false),
        EstimatorMethod::Tr => {
            let (fa, fb) = tr_drift.ok_or_else(|| {
                Error::MissingDependency("TR covariance needs drift values at both stencil ends".into())
            })?;
            outer(
                out,
                &|c| 2.0 * (s.next[c] - s.cur[c]) - dt * (fa[c] + fb[c]),
                1.0 / (2.0 * dt),
                false,
            );
        }
    }
    for r in 0..n {
        for c in 0..r {
            out[r * n + c] = out[c * n + r];
        }
    }
    Ok(())
}

pub fn drift_estimate(method: EstimatorMethod, traj: &Trajectory, i: usize) -> Result<Vec<f64>> {
    method.check_index(traj.len(), i)?;
    let mut out = vec![0.0; traj.dim()];
    drift_quantity(method, &Stencil::on(traj, method, i), traj.grid().dt(), &mut out);
    Ok(out)
}

/// `drift_at` supplies the drift at `t_i` and `t_{i+1}` (TR only).
pub fn cov_estimate(
    method: EstimatorMethod,
    traj: &Trajectory,
    i: usize,
    drift_at: Option<(&[f64], &[f64])>,
) -> Result<Vec<f64>> {
    method.check_index(traj.len(), i)?;
    let n = traj.dim();
    let mut out = vec![0.0; n * n];
    cov_quantity(method, &Stencil::on(traj, method, i), traj.grid().dt(), drift_at, &mut out)?;
    Ok(out)
}

/// Regression data: one row per surviving sample.
#[derive(Clone, Debug)]
pub struct EstimateSet {
    pub method: EstimatorMethod,
    pub n: usize,
    pub dt: f64,
    /// `Z(t_i)` for each row.
    pub points: Vec<AugmentedSample>,
    /// `Z(t_{i+1})` for each row; filled for TR only.
    pub next_points: Vec<AugmentedSample>,
    /// Grid index (pathwise), reference index (A) or query id (B1) per row.
    pub indices: Vec<usize>,
    /// Row-major `rows x n`.
    pub drift: Vec<f64>,
    /// Row-major `rows x n^2`; `None` for TR until drift is injected.
    pub cov: Option<Vec<f64>>,
    /// Raw increments `X_{i+1} - X_i` kept by pathwise TR for drift injection.
    increments: Vec<f64>,
}

impl EstimateSet {
    pub fn new(
        method: EstimatorMethod,
        dt: f64,
        points: Vec<AugmentedSample>,
        next_points: Vec<AugmentedSample>,
        indices: Vec<usize>,
        drift: Vec<f64>,
        cov: Option<Vec<f64>>,
    ) -> Result<Self> {
        let rows = points.len();
        let n = points.first().map(|p| p.dim()).unwrap_or(0);
        if rows < MIN_ROWS {
            return Err(Error::InsufficientData {
                needed: MIN_ROWS,
                got: rows,
            });
        }
        let misaligned = indices.len() != rows
            || drift.len() != rows * n
            || (method == EstimatorMethod::Tr && next_points.len() != rows)
            || cov.as_ref().is_some_and(|c| c.len() != rows * n * n);
        if misaligned {
            return Err(Error::Internal("estimate rows are misaligned".into()));
        }
        let mut set = Self {
            method,
            n,
            dt,
            points,
            next_points,
            indices,
            drift,
            cov,
            increments: Vec::new(),
        };
        set.check_finite()?;
        Ok(set)
    }

    fn check_finite(&mut self) -> Result<()> {
        if let Some(row) = self.drift.chunks(self.n).position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Blowup {
                index: self.indices[row],
                path: None,
            });
        }
        let n = self.n;
        if let Some(cov) = self.cov.as_mut() {
            for (row, chunk) in cov.chunks_mut(n * n).enumerate() {
                if chunk.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Blowup {
                        index: self.indices[row],
                        path: None,
                    });
                }
                for r in 0..n {
                    for c in 0..r {
                        let m = 0.5 * (chunk[r * n + c] + chunk[c * n + r]);
                        chunk[r * n + c] = m;
                        chunk[c * n + r] = m;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn drift_row(&self, r: usize) -> &[f64] {
        &self.drift[r * self.n..(r + 1) * self.n]
    }

    pub fn cov_row(&self, r: usize) -> Option<&[f64]> {
        let nn = self.n * self.n;
        self.cov.as_ref().map(|c| &c[r * nn..(r + 1) * nn])
    }

    pub fn has_cov(&self) -> bool {
        self.cov.is_some()
    }

    /// Fills the TR covariance rows of a pathwise set from a drift model
    /// evaluated at both stencil ends.
    pub fn inject_tr_drift<F>(&mut self, drift: F) -> Result<()>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        if self.method != EstimatorMethod::Tr || self.increments.is_empty() {
            return Err(Error::MissingDependency(
                "drift injection applies to pathwise TR estimate sets only".into(),
            ));
        }
        let n = self.n;
        let mut cov = vec![0.0; self.len() * n * n];
        let zero = vec![0.0; n];
        for r in 0..self.len() {
            let fa = drift(&self.points[r].z)?;
            let fb = drift(&self.next_points[r].z)?;
            let dx = &self.increments[r * n..(r + 1) * n];
            let st = Stencil {
                prev: &[],
                cur: &zero,
                next: dx,
                next2: &[],
            };
            cov_quantity(EstimatorMethod::Tr, &st, self.dt, Some((&fa, &fb)), &mut cov[r * n * n..(r + 1) * n * n])?;
        }
        self.cov = Some(cov);
        self.check_finite()
    }

    /// `t, z1..., z2..., fhat1..., chat11...`; covariance columns are left
    /// empty when not yet computed.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.n;
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|c| format!("z1_{c}")));
        header.extend((1..=n).map(|c| format!("z2_{c}")));
        header.extend((1..=n).map(|c| format!("fhat{c}")));
        for r in 1..=n {
            header.extend((1..=n).map(|c| format!("chat{r}{c}")));
        }
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec = vec![fmt_f64(self.points[r].t)];
            rec.extend(self.points[r].z.iter().map(|v| fmt_f64(*v)));
            rec.extend(self.drift_row(r).iter().map(|v| fmt_f64(*v)));
            match self.cov_row(r) {
                Some(c) => rec.extend(c.iter().map(|v| fmt_f64(*v))),
                None => rec.extend(std::iter::repeat_n(String::new(), n * n)),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Estimates at every stencil-valid index of `traj`, paired with `Z(t_i)`.
/// TR sets carry no covariance until [`EstimateSet::inject_tr_drift`].
pub fn pathwise_estimates(method: EstimatorMethod, traj: &Trajectory, tau: f64) -> Result<EstimateSet> {
    let z = augment(traj, tau)?;
    let m = traj.len();
    let (lo, hi) = method.valid_range(m).ok_or(Error::InsufficientData {
        needed: MIN_ROWS,
        got: 0,
    })?;
    let rows = hi + 1 - lo;
    if rows < MIN_ROWS {
        return Err(Error::InsufficientData {
            needed: MIN_ROWS,
            got: rows,
        });
    }
    let n = traj.dim();
    let dt = traj.grid().dt();
    let tr = method == EstimatorMethod::Tr;
    let mut drift = vec![0.0; rows * n];
    let mut cov = (!tr).then(|| vec![0.0; rows * n * n]);
    let mut increments = Vec::new();
    let mut next_points = Vec::new();
    for (r, i) in (lo..=hi).enumerate() {
        let st = Stencil::on(traj, method, i);
        drift_quantity(method, &st, dt, &mut drift[r * n..(r + 1) * n]);
        if let Some(c) = cov.as_mut() {
            cov_quantity(method, &st, dt, None, &mut c[r * n * n..(r + 1) * n * n])?;
        }
        if tr {
            increments.extend(st.next.iter().zip(st.cur).map(|(a, b)| a - b));
            next_points.push(z[i + 1].clone());
        }
    }
    let mut set = EstimateSet::new(
        method,
        dt,
        z[lo..=hi].to_vec(),
        next_points,
        (lo..=hi).collect(),
        drift,
        cov,
    )?;
    set.increments = increments;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{History, TimeGrid};
    use approx::assert_abs_diff_eq;

    fn scalar(values: Vec<f64>, dt: f64) -> Trajectory {
        let grid = TimeGrid::new(0.0, dt, values.len()).unwrap();
        Trajectory::new(grid, values, History::constant(&[0.0], 1.0)).unwrap()
    }

    #[test]
    fn constant_data_gives_zero() {
        let tr = scalar(vec![3.0; 20], 0.01);
        for m in EstimatorMethod::ALL {
            let i = 2;
            assert_eq!(drift_estimate(m, &tr, i).unwrap(), vec![0.0]);
            let zero = [0.0];
            assert_eq!(cov_estimate(m, &tr, i, Some((&zero, &zero))).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn linear_data_is_exact() {
        let dt = 0.01;
        let tr = scalar((0..20).map(|i| 2.0 * i as f64 * dt).collect(), dt);
        for m in [EstimatorMethod::Km, EstimatorMethod::Fd, EstimatorMethod::Cd] {
            assert_abs_diff_eq!(drift_estimate(m, &tr, 5).unwrap()[0], 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadratic_data_at_left_node() {
        let dt = 0.01;
        let tr = scalar((0..20).map(|i| (i as f64 * dt).powi(2)).collect(), dt);
        assert_abs_diff_eq!(drift_estimate(EstimatorMethod::Km, &tr, 0).unwrap()[0], 0.01, epsilon = 1e-14);
        assert_abs_diff_eq!(drift_estimate(EstimatorMethod::Fd, &tr, 0).unwrap()[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn km_covariance_example() {
        let tr = scalar(vec![0.0, 0.02, 0.02, 0.02, 0.02], 0.01);
        assert_abs_diff_eq!(cov_estimate(EstimatorMethod::Km, &tr, 0, None).unwrap()[0], 0.04, epsilon = 1e-15);
    }

    #[test]
    fn stencil_ranges() {
        let tr = scalar(vec![0.0; 30], 0.1);
        assert!(matches!(drift_estimate(EstimatorMethod::Cd, &tr, 0), Err(Error::Stencil { .. })));
        assert!(drift_estimate(EstimatorMethod::Fd, &tr, 28).is_err());
        assert!(drift_estimate(EstimatorMethod::Fd, &tr, 27).is_ok());
        assert!(drift_estimate(EstimatorMethod::Km, &tr, 28).is_ok());
        assert!(drift_estimate(EstimatorMethod::Km, &tr, 29).is_err());
        assert!(matches!(
            cov_estimate(EstimatorMethod::Tr, &tr, 3, None),
            Err(Error::MissingDependency(_))
        ));
    }

    #[test]
    fn row_counts_on_default_grid() {
        let tr = scalar(vec![1.0; 2001], 0.01);
        let count = |m| pathwise_estimates(m, &tr, 1.0).unwrap().len();
        assert_eq!(count(EstimatorMethod::Km), 2000);
        assert_eq!(count(EstimatorMethod::Fd), 1999);
        assert_eq!(count(EstimatorMethod::Cd), 1999);
        let cd = pathwise_estimates(EstimatorMethod::Cd, &tr, 1.0).unwrap();
        assert_eq!((cd.indices[0], *cd.indices.last().unwrap()), (1, 1999));
        let short = scalar(vec![1.0; 10], 0.01);
        assert!(matches!(
            pathwise_estimates(EstimatorMethod::Km, &short, 0.05),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn tr_injection_matches_direct_formula() {
        let dt = 0.1;
        let values: Vec<f64> = (0..15).map(|i| ((i * 7) % 5) as f64 * 0.3).collect();
        let tr = scalar(values, dt);
        let mut set = pathwise_estimates(EstimatorMethod::Tr, &tr, 0.3).unwrap();
        assert!(!set.has_cov());
        let f = |z: &[f64]| Ok(vec![0.5 * z[0] - z[1]]);
        set.inject_tr_drift(f).unwrap();
        for r in 0..set.len() {
            let i = set.indices[r];
            let fa = f(&set.points[r].z).unwrap();
            let fb = f(&set.next_points[r].z).unwrap();
            let direct = cov_estimate(EstimatorMethod::Tr, &tr, i, Some((&fa, &fb))).unwrap();
            assert_abs_diff_eq!(set.cov_row(r).unwrap()[0], direct[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_header() {
        let grid = TimeGrid::new(0.0, 0.1, 12).unwrap();
        let traj = Trajectory::new(grid, vec![1.0; 24], History::constant(&[1.0, 1.0], 1.0)).unwrap();
        let set = pathwise_estimates(EstimatorMethod::Km, &traj, 0.5).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,z1_1,z1_2,z2_1,z2_2,fhat1,fhat2,chat11,chat12,chat21,chat22\n"));
    }

    #[test]
    fn covariance_is_symmetric() {
        let grid = TimeGrid::new(0.0, 0.1, 12).unwrap();
        let states: Vec<f64> = (0..24).map(|i| (i as f64 * 1.3).sin()).collect();
        let traj = Trajectory::new(grid, states, History::constant(&[0.0, 0.0], 1.0)).unwrap();
        for m in [EstimatorMethod::Km, EstimatorMethod::Fd, EstimatorMethod::Cd] {
            let set = pathwise_estimates(m, &traj, 0.2).unwrap();
            for r in 0..set.len() {
                let c = set.cov_row(r).unwrap();
                assert_eq!(c[1], c[2]);
            }
        }
    }
}
