//! Device perturbations: stuck cells and device-to-device spread at program
//! time; I-V nonlinearity and random telegraph noise at read time.
//!
//! Program-time perturbations draw from one child stream per row, so the
//! result is independent of how rows are scheduled across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::ConductanceWindow;
use crate::numeric::{Matrix, RandomStream};
use crate::par;

const MODULE: &str = "nonidealities";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StuckMode {
    AtGOff,
    AtGOn,
    AtRandomLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StuckSpec {
    pub probability: f64,
    pub mode: StuckMode,
}

impl StuckSpec {
    pub fn new(probability: f64, mode: StuckMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::param(MODULE, format!("stuck probability {probability} outside [0, 1]")));
        }
        Ok(StuckSpec { probability, mode })
    }
}

/// Which cells are stuck, and at what conductance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMask")]
pub struct StuckMask {
    rows: usize,
    cols: usize,
    cells: Vec<Option<f64>>,
}

#[derive(Deserialize)]
struct RawMask {
    rows: usize,
    cols: usize,
    cells: Vec<Option<f64>>,
}

impl TryFrom<RawMask> for StuckMask {
    type Error = Error;

    fn try_from(raw: RawMask) -> Result<Self> {
        if raw.cells.len() != raw.rows * raw.cols {
            return Err(Error::shape(MODULE, format!("{} mask cells for {}x{}", raw.cells.len(), raw.rows, raw.cols)));
        }
        if raw.cells.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::numeric(MODULE, "non-finite stuck conductance"));
        }
        Ok(StuckMask { rows: raw.rows, cols: raw.cols, cells: raw.cells })
    }
}

impl StuckMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        StuckMask { rows, cols, cells: vec![None; rows * cols] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.cols + j]
    }

    pub fn is_stuck(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_some()
    }

    pub fn set(&mut self, i: usize, j: usize, value: Option<f64>) {
        self.cells[i * self.cols + j] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn fraction(&self) -> f64 {
        if self.cells.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.cells.len() as f64
        }
    }

    /// Stuck cells as `((row, col), conductance)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let cols = self.cols;
        self.cells.iter().enumerate().filter_map(move |(k, c)| c.map(|g| ((k / cols, k % cols), g)))
    }

    /// Restrict to a sub-block of rows.
    pub fn rows_subset(&self, order: &[usize]) -> StuckMask {
        let mut out = StuckMask::empty(order.len(), self.cols);
        for (p, &src) in order.iter().enumerate() {
            for j in 0..self.cols {
                out.set(p, j, self.get(src, j));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct D2DSpec {
    /// Lognormal shape parameter.
    pub sigma: f64,
}

impl D2DSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::param(MODULE, format!("D2D sigma must be non-negative, got {sigma}")));
        }
        Ok(D2DSpec { sigma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IVNonlinearityParam {
    /// Dimensionless curvature; 0 is Ohmic.
    pub gamma: f64,
    pub v_read: f64,
}

impl IVNonlinearityParam {
    pub fn new(gamma: f64, v_read: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) || !(v_read > 0.0 && v_read.is_finite()) {
            return Err(Error::param(MODULE, format!("need gamma >= 0 and V_read > 0, got {gamma}, {v_read}")));
        }
        Ok(IVNonlinearityParam { gamma, v_read })
    }

    pub fn ohmic(v_read: f64) -> Self {
        IVNonlinearityParam { gamma: 0.0, v_read }
    }

    pub fn is_ohmic(&self) -> bool {
        self.gamma == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RTNParams {
    /// Relative conductance increase in the high state.
    pub delta: f64,
    /// Mean dwell time in the high state, in read cycles.
    pub tau_high: f64,
    /// Mean dwell time in the low state, in read cycles.
    pub tau_low: f64,
}

impl RTNParams {
    pub fn new(delta: f64, tau_high: f64, tau_low: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) || !(tau_high >= 1.0) || !(tau_low >= 1.0) {
            return Err(Error::param(
                MODULE,
                format!("need delta >= 0 and dwell times >= 1 (got {delta}, {tau_high}, {tau_low})"),
            ));
        }
        Ok(RTNParams { delta, tau_high, tau_low })
    }

    /// Long-run probability of the high state.
    pub fn stationary_high(&self) -> f64 {
        self.tau_high / (self.tau_high + self.tau_low)
    }
}

/// Flag each cell independently with probability `p_stuck` and pin it.
pub fn apply_stuck(
    g: &Matrix,
    spec: &StuckSpec,
    window: &ConductanceWindow,
    stream: &RandomStream,
) -> (Matrix, StuckMask) {
    let (rows, cols) = g.shape();
    let per_row = par::map_indexed(rows, |i| {
        let mut s = stream.fork(i as u64);
        (0..cols)
            .map(|_| {
                let hit = s.bernoulli(spec.probability);
                let level = s.uniform_in(window.g_off(), window.g_on());
                hit.then_some(match spec.mode {
                    StuckMode::AtGOff => window.g_off(),
                    StuckMode::AtGOn => window.g_on(),
                    StuckMode::AtRandomLevel => level,
                })
            })
            .collect::<Vec<_>>()
    });
    let mut out = g.clone();
    let mut mask = StuckMask::empty(rows, cols);
    for (i, row) in per_row.into_iter().enumerate() {
        for (j, cell) in row.into_iter().enumerate() {
            if let Some(v) = cell {
                out[(i, j)] = v;
                mask.set(i, j, Some(v));
            }
        }
    }
    (out, mask)
}

/// Multiply each entry by an independent median-1 lognormal factor and clip.
pub fn apply_d2d(g: &Matrix, spec: &D2DSpec, window: &ConductanceWindow, stream: &RandomStream) -> Matrix {
    if spec.sigma == 0.0 {
        return g.clone();
    }
    let (rows, cols) = g.shape();
    let per_row = par::map_indexed(rows, |i| {
        let mut s = stream.fork(i as u64);
        g.row(i).iter().map(|&v| window.clip(v * s.lognormal(0.0, spec.sigma))).collect::<Vec<_>>()
    });
    Matrix::from_vec(rows, cols, per_row.concat()).expect("shape preserved")
}

/// Device current `G·V_read·sinh(γV/V_read)/sinh(γ)`; Ohmic when `γ = 0`.
pub fn iv_current(g: f64, v: f64, param: &IVNonlinearityParam) -> Result<f64> {
    if v.abs() > param.v_read {
        return Err(Error::range(MODULE, format!("|V| = {} exceeds V_read = {}", v.abs(), param.v_read)));
    }
    Ok(iv_current_unchecked(g, v, param))
}

#[inline]
pub(crate) fn iv_current_unchecked(g: f64, v: f64, param: &IVNonlinearityParam) -> f64 {
    if param.gamma == 0.0 {
        return g * v;
    }
    let gamma = param.gamma;
    let magnitude = g * param.v_read * ((gamma * (v.abs() / param.v_read)).sinh() / gamma.sinh());
    magnitude.copysign(v)
}

/// Secant conductance `I(V)/V`; the small-signal slope at `V = 0`.
#[inline]
pub(crate) fn secant_conductance(g: f64, v: f64, param: &IVNonlinearityParam) -> f64 {
    if param.gamma == 0.0 {
        return g;
    }
    if v == 0.0 {
        return g * param.gamma / param.gamma.sinh();
    }
    iv_current_unchecked(g, v, param) / v
}

/// Per-read conductance multipliers from a two-state Markov chain over
/// `{1, 1 + delta}`, started from its stationary distribution.
pub fn rtn_multipliers(params: &RTNParams, n_reads: usize, stream: &mut RandomStream) -> Result<Vec<f64>> {
    if n_reads < 1 {
        return Err(Error::param(MODULE, "n_reads must be at least 1"));
    }
    let leave_high = 1.0 / params.tau_high;
    let leave_low = 1.0 / params.tau_low;
    let mut high = stream.bernoulli(params.stationary_high());
    let mut out = Vec::with_capacity(n_reads);
    for k in 0..n_reads {
        if k > 0 {
            let p = if high { leave_high } else { leave_low };
            if stream.bernoulli(p) {
                high = !high;
            }
        }
        out.push(if high { 1.0 + params.delta } else { 1.0 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_stream;

    fn win() -> ConductanceWindow {
        ConductanceWindow::new(10e-6, 100e-6).unwrap()
    }

    #[test]
    fn stuck_zero_probability() {
        let g = Matrix::filled(5, 7, 50e-6);
        let (out, mask) = apply_stuck(&g, &StuckSpec::new(0.0, StuckMode::AtGOn).unwrap(), &win(), &seeded_stream(1, 0));
        assert_eq!(out, g);
        assert!(mask.is_empty());
    }

    #[test]
    fn stuck_certain() {
        let g = Matrix::filled(4, 4, 50e-6);
        let (out, mask) = apply_stuck(&g, &StuckSpec::new(1.0, StuckMode::AtGOff).unwrap(), &win(), &seeded_stream(1, 0));
        assert!(out.as_slice().iter().all(|&v| v == 10e-6));
        assert_eq!(mask.count(), 16);
    }

    #[test]
    fn stuck_fraction_in_binomial_interval() {
        let g = Matrix::filled(100, 100, 50e-6);
        let spec = StuckSpec::new(0.05, StuckMode::AtRandomLevel).unwrap();
        let (out, mask) = apply_stuck(&g, &spec, &win(), &seeded_stream(2024, 7));
        assert!((0.037..=0.064).contains(&mask.fraction()), "{}", mask.fraction());
        assert!(mask.iter().all(|(_, v)| win().contains(v)));
        for ((i, j), v) in mask.iter() {
            assert_eq!(out[(i, j)], v);
        }
    }

    #[test]
    fn stuck_deterministic() {
        let g = Matrix::filled(30, 20, 50e-6);
        let spec = StuckSpec::new(0.1, StuckMode::AtRandomLevel).unwrap();
        let a = apply_stuck(&g, &spec, &win(), &seeded_stream(5, 5));
        let b = apply_stuck(&g, &spec, &win(), &seeded_stream(5, 5));
        assert_eq!(a, b);
        assert!(StuckSpec::new(1.5, StuckMode::AtGOff).is_err());
    }

    #[test]
    fn d2d_identity_and_clip() {
        let g = Matrix::from_fn(20, 20, |i, j| 10e-6 + (i * 20 + j) as f64 * 0.2e-6);
        assert_eq!(apply_d2d(&g, &D2DSpec::new(0.0).unwrap(), &win(), &seeded_stream(1, 1)), g);
        let wide = apply_d2d(&g, &D2DSpec::new(2.0).unwrap(), &win(), &seeded_stream(1, 1));
        assert!(wide.as_slice().iter().all(|&v| win().contains(v)));
        assert!(D2DSpec::new(-0.1).is_err());
    }

    #[test]
    fn d2d_factor_median_is_one() {
        // a wide window keeps clipping out of play
        let huge = ConductanceWindow::new(1e-12, 1e12).unwrap();
        let g = Matrix::filled(100, 1000, 1.0);
        let out = apply_d2d(&g, &D2DSpec::new(0.1).unwrap(), &huge, &seeded_stream(9, 9));
        let mut f = out.into_vec();
        f.sort_by(f64::total_cmp);
        let median = 0.5 * (f[f.len() / 2 - 1] + f[f.len() / 2]);
        assert!((0.997..=1.003).contains(&median), "{median}");
    }

    #[test]
    fn iv_examples() {
        let ohmic = IVNonlinearityParam::new(0.0, 0.2).unwrap();
        assert_eq!(iv_current(1e-4, 0.13, &ohmic).unwrap(), 1e-4 * 0.13);
        let p = IVNonlinearityParam::new(2.0, 0.2).unwrap();
        assert_eq!(iv_current(1e-4, 0.2, &p).unwrap(), 1e-4 * 0.2);
        let half = iv_current(1.0, 0.1, &p).unwrap() / 0.2;
        assert!((half - 1f64.sinh() / 2f64.sinh()).abs() < 1e-15);
        assert!((half - 0.3240).abs() < 1e-4);
        assert!(iv_current(1.0, 0.25, &p).is_err());
    }

    #[test]
    fn iv_odd_monotone_and_ohmic_limit() {
        for gamma in [0.0, 1e-6, 0.5, 2.0, 5.0] {
            let p = IVNonlinearityParam::new(gamma, 0.3).unwrap();
            let mut last = f64::NEG_INFINITY;
            for k in -300..=300 {
                let v = k as f64 * 1e-3;
                let i = iv_current(2e-5, v, &p).unwrap();
                assert_eq!(iv_current(2e-5, -v, &p).unwrap(), -i);
                assert!(i >= last);
                last = i;
                if gamma == 1e-6 && v != 0.0 {
                    assert!((i / (2e-5 * v) - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rtn_degenerate_delta() {
        let p = RTNParams::new(0.0, 2.0, 8.0).unwrap();
        let m = rtn_multipliers(&p, 100, &mut seeded_stream(1, 0)).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
        assert!(rtn_multipliers(&p, 0, &mut seeded_stream(1, 0)).is_err());
    }

    #[test]
    fn rtn_stationary_fraction() {
        let p = RTNParams::new(0.1, 2.0, 8.0).unwrap();
        assert_eq!(p.stationary_high(), 0.2);
        let m = rtn_multipliers(&p, 100_000, &mut seeded_stream(77, 0)).unwrap();
        let frac = m.iter().filter(|&&v| v > 1.0).count() as f64 / m.len() as f64;
        assert!((frac - 0.2).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn rtn_dwell_times() {
        let p = RTNParams::new(0.1, 3.0, 12.0).unwrap();
        let m = rtn_multipliers(&p, 100_000, &mut seeded_stream(78, 0)).unwrap();
        let (mut high_runs, mut low_runs) = (Vec::new(), Vec::new());
        let mut run = 1usize;
        for k in 1..m.len() {
            if m[k] == m[k - 1] {
                run += 1;
            } else {
                // skip the first (censored) run
                if run != k {
                    if m[k - 1] > 1.0 { high_runs.push(run) } else { low_runs.push(run) }
                }
                run = 1;
            }
        }
        let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
        assert!((mean(&high_runs) / 3.0 - 1.0).abs() < 0.1, "{}", mean(&high_runs));
        assert!((mean(&low_runs) / 12.0 - 1.0).abs() < 0.1, "{}", mean(&low_runs));
    }
}
