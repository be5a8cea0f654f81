//! Time grids, trajectories, delay-augmented samples and train/validation
//! splitting.
//!
//! A [`Trajectory`] stores the observed states on a uniform grid together with
//! the initial history segment on `[t0 - span, t0]`. Off-grid and delayed
//! values are obtained by piecewise-linear interpolation of the observed
//! samples, or by evaluating the history.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to snap a query time onto a grid node.
const NODE_SNAP: f64 = 1e-12;

/// Uniform time grid `t_i = t0 + i * dt`, `i = 0..steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::arg(format!("time step must be positive, got {dt}")));
        }
        if steps < 2 {
            return Err(Error::arg(format!("a grid needs at least 2 samples, got {steps}")));
        }
        if !t0.is_finite() {
            return Err(Error::arg("t0 must be finite"));
        }
        Ok(Self { t0, dt, steps })
    }

    /// Grid covering `[t0, t_end]` inclusive.
    pub fn from_window(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(t_end > t0) {
            return Err(Error::arg(format!("empty window [{t0}, {t_end}]")));
        }
        let intervals = (t_end - t0) / dt;
        let rounded = intervals.round();
        if (intervals - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::arg(format!(
                "window length {} is not a multiple of dt = {dt}",
                t_end - t0
            )));
        }
        Self::new(t0, dt, rounded as usize + 1)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps - 1)
    }

    /// The first `steps` nodes of this grid.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps > self.steps {
            return Err(Error::arg(format!(
                "cannot truncate a {}-sample grid to {steps} samples",
                self.steps
            )));
        }
        Self::new(self.t0, self.dt, steps)
    }
}

pub type HistoryFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Initial segment `X(t0 + s)`, `s in [-span, 0]`.
///
/// Either a callable map (evaluated exactly) or a set of uniformly spaced
/// nodes (linearly interpolated). Simulations cache a sampled copy at the
/// integration step so both variants produce the same path.
#[derive(Clone)]
pub struct History {
    n: usize,
    span: f64,
    map: Option<HistoryFn>,
    node_step: f64,
    nodes: Vec<f64>,
}

impl History {
    pub fn functional(n: usize, span: f64, map: HistoryFn) -> Self {
        Self {
            n,
            span,
            map: Some(map),
            node_step: 0.0,
            nodes: Vec::new(),
        }
    }

    pub fn constant(value: &[f64], span: f64) -> Self {
        let v = value.to_vec();
        Self::functional(
            value.len(),
            span,
            Arc::new(move |_s, out: &mut [f64]| out.copy_from_slice(&v)),
        )
    }

    /// Nodes at `s = -span + j * step`, `j = 0..=span/step`, stored row-major.
    pub fn sampled(n: usize, span: f64, step: f64, nodes: Vec<f64>) -> Result<Self> {
        if n == 0 || nodes.len() % n != 0 {
            return Err(Error::arg("history nodes do not match the state dimension"));
        }
        let count = nodes.len() / n;
        if count < 2 && span > 0.0 {
            return Err(Error::arg("a sampled history needs at least two nodes"));
        }
        if span > 0.0 && ((count - 1) as f64 * step - span).abs() > 1e-9 * span {
            return Err(Error::arg("history nodes do not cover [-span, 0]"));
        }
        Ok(Self {
            n,
            span,
            map: None,
            node_step: step,
            nodes,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn is_functional(&self) -> bool {
        self.map.is_some()
    }

    /// Evaluate at relative time `s in [-span, 0]`.
    pub fn eval_into(&self, s: f64, out: &mut [f64]) {
        if let Some(map) = &self.map {
            map(s, out);
            return;
        }
        let n = self.n;
        let count = self.nodes.len() / n;
        if count == 1 || self.node_step == 0.0 {
            out.copy_from_slice(&self.nodes[..n]);
            return;
        }
        let u = ((s + self.span) / self.node_step).clamp(0.0, (count - 1) as f64);
        let j = u.floor() as usize;
        let w = u - j as f64;
        if j + 1 >= count || w <= NODE_SNAP {
            let j = j.min(count - 1);
            out.copy_from_slice(&self.nodes[j * n..(j + 1) * n]);
        } else {
            for c in 0..n {
                let a = self.nodes[j * n + c];
                let b = self.nodes[(j + 1) * n + c];
                out[c] = a + w * (b - a);
            }
        }
    }

    pub fn eval(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.eval_into(s, &mut out);
        out
    }
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("History")
            .field("n", &self.n)
            .field("span", &self.span)
            .field("functional", &self.map.is_some())
            .field("nodes", &(self.nodes.len() / self.n.max(1)))
            .finish()
    }
}

/// States of one realization sampled on a [`TimeGrid`].
#[derive(Clone, Debug)]
pub struct Trajectory {
    grid: TimeGrid,
    n: usize,
    states: Vec<f64>,
    history: History,
    fine: Option<FinePath>,
}

/// Internal integration path when the simulator steps below the grid spacing.
#[derive(Clone, Debug)]
pub struct FinePath {
    pub dt: f64,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Vec<f64>, history: History) -> Result<Self> {
        let n = history.dim();
        if n == 0 {
            return Err(Error::arg("state dimension must be positive"));
        }
        if states.len() != grid.steps() * n {
            return Err(Error::arg(format!(
                "expected {} state values ({} steps x {n}), got {}",
                grid.steps() * n,
                grid.steps(),
                states.len()
            )));
        }
        if let Some(pos) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::Blowup {
                index: pos / n,
                path: None,
            });
        }
        Ok(Self {
            grid,
            n,
            states,
            history,
            fine: None,
        })
    }

    pub(crate) fn with_fine_path(mut self, fine: FinePath) -> Self {
        self.fine = Some(fine);
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.grid.steps()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.n..(i + 1) * self.n]
    }

    pub fn fine_path(&self) -> Option<&FinePath> {
        self.fine.as_ref()
    }

    /// The first `steps` samples, sharing the same history.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        let grid = self.grid.truncated(steps)?;
        Ok(Self {
            grid,
            n: self.n,
            states: self.states[..steps * self.n].to_vec(),
            history: self.history.clone(),
            fine: None,
        })
    }

    /// Valid interpolation domain `[t0 - span, t_end]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.grid.t0() - self.history.span(), self.grid.t_end())
    }

    pub fn interpolate_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = self.domain();
        let slack = NODE_SNAP * self.grid.dt() * (1.0 + (hi - lo).abs() / self.grid.dt());
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::Domain {
                what: format!("interpolation time {t} outside the trajectory domain"),
                lo,
                hi,
            });
        }
        let t0 = self.grid.t0();
        let u = (t - t0) / self.grid.dt();
        let nearest = u.round();
        if (u - nearest).abs() <= NODE_SNAP * nearest.abs().max(1.0) && nearest >= 0.0 {
            let i = (nearest as usize).min(self.len() - 1);
            out.copy_from_slice(self.state(i));
            return Ok(());
        }
        if u < 0.0 {
            self.history.eval_into((t - t0).max(-self.history.span()), out);
            return Ok(());
        }
        let i = (u.floor() as usize).min(self.len() - 2);
        let w = u - i as f64;
        let (a, b) = (self.state(i), self.state(i + 1));
        for c in 0..self.n {
            out[c] = a[c] + w * (b[c] - a[c]);
        }
        Ok(())
    }

    /// Piecewise-linear state at time `t`; history values for `t < t0`.
    pub fn interpolate_state(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.interpolate_into(t, &mut out)?;
        Ok(out)
    }

    /// Writes `t,x1,...,xn`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n).map(|c| format!("x{c}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![fmt_f64(self.grid.time(i))];
            rec.extend(self.state(i).iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trajectory CSV; the history is supplied separately since the
    /// file only carries grid samples.
    pub fn read_csv<R: std::io::Read>(reader: R, history: History) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let n = r.headers()?.len().saturating_sub(1);
        if n != history.dim() {
            return Err(Error::arg(format!(
                "CSV has {n} state columns but the history has dimension {}",
                history.dim()
            )));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::arg(format!("bad number `{s}`: {e}")))
            };
            times.push(parse(&rec[0])?);
            for c in 1..=n {
                states.push(parse(&rec[c])?);
            }
        }
        if times.len() < 2 {
            return Err(Error::arg("trajectory CSV needs at least two rows"));
        }
        let dt = times[1] - times[0];
        for (i, t) in times.iter().enumerate() {
            if (t - (times[0] + i as f64 * dt)).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(Error::arg("trajectory CSV is not uniformly sampled"));
            }
        }
        let grid = TimeGrid::new(times[0], dt, times.len())?;
        Self::new(grid, states, history)
    }
}

/// Sidecar record written next to a trajectory CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub model: String,
    pub n: usize,
    pub tau: f64,
    pub dt: f64,
    pub seed: u64,
    pub path: usize,
}

impl TrajectoryMeta {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Augmented state `z = (X(t), X(t - tau))` in `R^{2n}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample {
    pub t: f64,
    pub z: Vec<f64>,
}

impl AugmentedSample {
    pub fn new(t: f64, z: Vec<f64>) -> Result<Self> {
        if z.is_empty() || z.len() % 2 != 0 {
            return Err(Error::arg(format!(
                "augmented state must have even positive length, got {}",
                z.len()
            )));
        }
        Ok(Self { t, z })
    }

    pub fn from_parts(t: f64, current: &[f64], delayed: &[f64]) -> Result<Self> {
        if current.len() != delayed.len() {
            return Err(Error::arg("current and delayed parts differ in length"));
        }
        let mut z = Vec::with_capacity(2 * current.len());
        z.extend_from_slice(current);
        z.extend_from_slice(delayed);
        Self::new(t, z)
    }

    pub fn dim(&self) -> usize {
        self.z.len() / 2
    }

    pub fn current(&self) -> &[f64] {
        &self.z[..self.dim()]
    }

    pub fn delayed(&self) -> &[f64] {
        &self.z[self.dim()..]
    }
}

/// Emits `Z(t_i)` for every grid index; delayed times before `t0` read the
/// history.
pub fn augment(traj: &Trajectory, tau: f64) -> Result<Vec<AugmentedSample>> {
    check_delay(traj, tau)?;
    let n = traj.dim();
    let mut delayed = vec![0.0; n];
    (0..traj.len())
        .map(|i| {
            let t = traj.grid().time(i);
            traj.interpolate_into(t - tau, &mut delayed)?;
            AugmentedSample::from_parts(t, traj.state(i), &delayed)
        })
        .collect()
}

pub(crate) fn check_delay(traj: &Trajectory, tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::arg(format!("delay must be positive, got {tau}")));
    }
    let span = traj.history().span();
    if tau > span * (1.0 + 1e-12) {
        return Err(Error::Domain {
            what: format!("delay {tau} exceeds the available history"),
            lo: 0.0,
            hi: span,
        });
    }
    Ok(())
}

/// Chronological train/validation split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self> {
        let spec = Self { train_fraction };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::arg(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// `floor(fraction * m)`.
    pub fn train_len(&self, m: usize) -> usize {
        ((self.train_fraction * m as f64) + 1e-9).floor() as usize
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8 }
    }
}

pub fn split<T: Clone>(samples: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    spec.validate()?;
    if samples.len() < 5 {
        return Err(Error::InsufficientData {
            needed: 5,
            got: samples.len(),
        });
    }
    let k = spec.train_len(samples.len());
    Ok((samples[..k].to_vec(), samples[k..].to_vec()))
}
