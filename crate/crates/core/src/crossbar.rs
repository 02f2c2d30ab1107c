//! Programmable crossbar: mapping, device model, nonidealities and
//! interconnect composed into a vector-matrix multiply engine.
//!
//! Programming runs `map → quantize → pulse programming → D2D → stuck → drift`
//! once and yields an immutable [`Crossbar`]. Reads are pure: every call to
//! [`Crossbar::vmm`] derives its random draws from the crossbar lineage and an
//! explicit `read_index`, so concurrent reads never interfere.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::devices::{self, DeviceModel};
use crate::error::{Error, Result};
use crate::interconnect::{self, LineResistanceParams, TileSpec, TiledCircuit};
use crate::mapping::{self, MappingScheme, MappingVariant};
use crate::nonidealities::{self, D2DSpec, IVNonlinearityParam, RTNParams, StuckMask, StuckSpec};
use crate::numeric::{Matrix, RandomStream};
use crate::par;

const MODULE: &str = "crossbar";

// stream keys for each random stage
const KEY_D2D: u64 = 1;
const KEY_STUCK: u64 = 2;
const KEY_RTN: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgrammingSpec {
    pub max_pulses: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    /// Seconds elapsed since programming.
    pub time_s: f64,
}

/// Which nonidealities are active. `Default` is the ideal device.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NonidealityConfig {
    /// Snap targets to the device's multilevel grid.
    pub quantize: bool,
    pub programming: Option<ProgrammingSpec>,
    pub d2d: Option<D2DSpec>,
    pub stuck: Option<StuckSpec>,
    /// sinh I-V curvature; 0 is Ohmic.
    pub iv_gamma: f64,
    pub rtn: Option<RTNParams>,
    pub drift: Option<DriftSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarConfig {
    pub scheme: MappingScheme,
    pub device: DeviceModel,
    pub nonidealities: NonidealityConfig,
    pub interconnect: LineResistanceParams,
    pub tiles: Option<TileSpec>,
}

impl CrossbarConfig {
    /// Differential-pair mapping over the device window with every
    /// nonideality disabled and ideal wires.
    pub fn ideal(device: DeviceModel, k_v: f64, w_max_abs: f64) -> Result<Self> {
        let scheme = MappingScheme::differential_pair(device.window(), k_v, w_max_abs)?;
        Ok(CrossbarConfig {
            scheme,
            device,
            nonidealities: NonidealityConfig::default(),
            interconnect: LineResistanceParams::ideal(),
            tiles: None,
        })
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = (self.scheme.window, self.device.window());
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * y.abs();
        if !close(a.g_off(), b.g_off()) || !close(a.g_on(), b.g_on()) {
            return Err(Error::param(MODULE, "mapping window differs from the device conductance window"));
        }
        if !(self.nonidealities.iv_gamma >= 0.0 && self.nonidealities.iv_gamma.is_finite()) {
            return Err(Error::param(MODULE, "I-V curvature must be non-negative"));
        }
        if let Some(d) = self.nonidealities.drift {
            if !(d.time_s >= devices::DRIFT_T0) {
                return Err(Error::param(MODULE, format!("drift time {} s is before the reference time", d.time_s)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputEncoding {
    /// Inputs become read voltages `k_V·x`.
    Amplitude,
    /// Inputs become pulse durations at fixed `V_read`; `bits` sets the
    /// duration resolution (`None` = continuous).
    PulseWidth { bits: Option<u32> },
}

impl InputEncoding {
    pub const DEFAULT_PULSE_BITS: u32 = 8;

    pub fn pulse_width() -> Self {
        InputEncoding::PulseWidth { bits: Some(Self::DEFAULT_PULSE_BITS) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadConfig {
    pub v_read: f64,
    /// Number of reads averaged per product.
    pub n_avg: usize,
    pub encoding: InputEncoding,
}

impl ReadConfig {
    pub fn new(v_read: f64, n_avg: usize, encoding: InputEncoding) -> Result<Self> {
        if !(v_read > 0.0 && v_read.is_finite()) || n_avg < 1 {
            return Err(Error::param(MODULE, format!("need V_read > 0 and n_avg >= 1, got {v_read}, {n_avg}")));
        }
        if let InputEncoding::PulseWidth { bits: Some(b) } = encoding {
            if !(1..=52).contains(&b) {
                return Err(Error::param(MODULE, format!("pulse resolution must be 1..=52 bits, got {b}")));
            }
        }
        Ok(ReadConfig { v_read, n_avg, encoding })
    }

    pub fn amplitude(v_read: f64) -> Self {
        ReadConfig { v_read, n_avg: 1, encoding: InputEncoding::Amplitude }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub seed: u64,
    pub stream_id: u64,
}

impl Lineage {
    pub fn stream(&self) -> RandomStream {
        RandomStream::new(self.seed, self.stream_id)
    }
}

/// A programmed crossbar. For differential pairs `g_minus` has the same shape
/// as `g_plus`; for single-device schemes it is the `m × 1` reference column.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawCrossbar")]
pub struct Crossbar {
    g_plus: Matrix,
    g_minus: Matrix,
    mask_plus: StuckMask,
    mask_minus: StuckMask,
    config: CrossbarConfig,
    lineage: Lineage,
    #[serde(skip)]
    circuits: OnceLock<Vec<TiledCircuit>>,
}

#[derive(Deserialize)]
struct RawCrossbar {
    g_plus: Matrix,
    g_minus: Matrix,
    mask_plus: StuckMask,
    mask_minus: StuckMask,
    config: CrossbarConfig,
    lineage: Lineage,
}

impl TryFrom<RawCrossbar> for Crossbar {
    type Error = Error;

    fn try_from(r: RawCrossbar) -> Result<Self> {
        Crossbar::from_parts(r.g_plus, r.g_minus, r.mask_plus, r.mask_minus, r.config, r.lineage)
    }
}

impl PartialEq for Crossbar {
    fn eq(&self, other: &Self) -> bool {
        self.g_plus == other.g_plus
            && self.g_minus == other.g_minus
            && self.mask_plus == other.mask_plus
            && self.mask_minus == other.mask_minus
            && self.config == other.config
            && self.lineage == other.lineage
    }
}

fn program_array(
    target: Matrix,
    config: &CrossbarConfig,
    stream: &RandomStream,
    side: u64,
) -> Result<(Matrix, StuckMask)> {
    let ni = &config.nonidealities;
    let window = config.scheme.window;
    let mut g = target;
    if ni.quantize {
        g = devices::quantize(&g, &window, config.device.bits)?;
    }
    if let Some(prog) = ni.programming {
        let (rows, cols) = g.shape();
        let device = &config.device;
        let achieved = par::try_map_indexed(rows, |i| {
            (0..cols)
                .map(|j| {
                    devices::program_pulses(window.g_off(), g[(i, j)], device, prog.max_pulses)
                        .map(|o| o.conductance)
                        .map_err(|e| e.at(format!("cell ({i}, {j})")))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        g = Matrix::from_vec(rows, cols, achieved.concat())?;
    }
    if let Some(d2d) = ni.d2d {
        g = nonidealities::apply_d2d(&g, &d2d, &window, &stream.fork_path(&[KEY_D2D, side]));
    }
    let (mut g, mask) = match ni.stuck {
        Some(spec) => nonidealities::apply_stuck(&g, &spec, &window, &stream.fork_path(&[KEY_STUCK, side])),
        None => {
            let (r, c) = g.shape();
            (g, StuckMask::empty(r, c))
        }
    };
    if let Some(d) = ni.drift {
        for ((i, j), v) in g.clone().iter_indexed() {
            if !mask.is_stuck(i, j) {
                g[(i, j)] = devices::drift(v, d.time_s, &config.device)?;
            }
        }
    }
    Ok((g, mask))
}

/// Program `w` onto a new crossbar. All random draws come from `lineage`.
pub fn program(w: &Matrix, config: &CrossbarConfig, lineage: Lineage) -> Result<Crossbar> {
    config.validate()?;
    let (plus_target, minus_target) = match config.scheme.variant {
        MappingVariant::DifferentialPair => mapping::weights_to_diff_pair(w, &config.scheme)?,
        MappingVariant::Naive | MappingVariant::NonlinearPower { .. } => {
            let (g, g_ref) = mapping::weights_to_naive(w, &config.scheme)?;
            (g, Matrix::filled(w.rows(), 1, g_ref))
        }
    };
    let stream = lineage.stream();
    let (g_plus, mask_plus) = program_array(plus_target, config, &stream, 0)?;
    let (g_minus, mask_minus) = program_array(minus_target, config, &stream, 1)?;
    Ok(Crossbar { g_plus, g_minus, mask_plus, mask_minus, config: config.clone(), lineage, circuits: OnceLock::new() })
}

impl Crossbar {
    pub fn rows(&self) -> usize {
        self.g_plus.rows()
    }

    pub fn cols(&self) -> usize {
        self.g_plus.cols()
    }

    pub fn config(&self) -> &CrossbarConfig {
        &self.config
    }

    pub fn scheme(&self) -> &MappingScheme {
        &self.config.scheme
    }

    pub fn lineage(&self) -> Lineage {
        self.lineage
    }

    pub fn is_differential(&self) -> bool {
        self.config.scheme.is_differential()
    }

    pub fn masks(&self) -> (&StuckMask, &StuckMask) {
        (&self.mask_plus, &self.mask_minus)
    }

    pub fn g_plus(&self) -> &Matrix {
        &self.g_plus
    }

    pub fn g_minus(&self) -> &Matrix {
        &self.g_minus
    }

    /// Copy of the programmed state: `(G₊, G₋, mask₊, mask₋)`.
    pub fn read_conductances(&self) -> (Matrix, Matrix, StuckMask, StuckMask) {
        (self.g_plus.clone(), self.g_minus.clone(), self.mask_plus.clone(), self.mask_minus.clone())
    }

    /// Rebuild a crossbar from stored state, checking shapes and the window.
    pub fn from_parts(
        g_plus: Matrix,
        g_minus: Matrix,
        mask_plus: StuckMask,
        mask_minus: StuckMask,
        config: CrossbarConfig,
        lineage: Lineage,
    ) -> Result<Crossbar> {
        config.validate()?;
        let minus_shape = if config.scheme.is_differential() { g_plus.shape() } else { (g_plus.rows(), 1) };
        if g_minus.shape() != minus_shape || mask_plus.shape() != g_plus.shape() || mask_minus.shape() != minus_shape {
            return Err(Error::shape(MODULE, "conductance and mask shapes disagree"));
        }
        let window = config.scheme.window;
        for (label, g) in [("G+", &g_plus), ("G-", &g_minus)] {
            if let Some(((i, j), v)) = g.iter_indexed().find(|(_, v)| !window.contains(*v)) {
                return Err(Error::range(MODULE, format!("{label} ({i}, {j}) = {v} outside the conductance window")));
            }
        }
        Ok(Crossbar { g_plus, g_minus, mask_plus, mask_minus, config, lineage, circuits: OnceLock::new() })
    }

    /// New crossbar with replaced conductances and the same masks and config.
    pub(crate) fn with_conductances(&self, g_plus: Matrix, g_minus: Matrix) -> Crossbar {
        Crossbar {
            g_plus,
            g_minus,
            mask_plus: self.mask_plus.clone(),
            mask_minus: self.mask_minus.clone(),
            config: self.config.clone(),
            lineage: self.lineage,
            circuits: OnceLock::new(),
        }
    }

    /// Weights represented by the stored conductances under the linear decode.
    pub fn effective_weights(&self) -> Matrix {
        let s = &self.config.scheme;
        if self.is_differential() {
            Matrix::from_fn(self.rows(), self.cols(), |i, j| s.effective_weight(self.g_plus[(i, j)], self.g_minus[(i, j)]))
        } else {
            Matrix::from_fn(self.rows(), self.cols(), |i, j| s.effective_weight(self.g_plus[(i, j)], self.g_minus[(i, 0)]))
        }
    }

    /// Per-cell `|w_effective − w|`.
    pub fn weight_error(&self, w: &Matrix) -> Result<Matrix> {
        self.effective_weights().zip_map(w, |a, b| (a - b).abs())
    }

    /// Arrays actually read: `[G₊, G₋]` for pairs, `[G | G_ref]` otherwise.
    fn physical_arrays(&self, g_plus: &Matrix, g_minus: &Matrix) -> Vec<Matrix> {
        if self.is_differential() {
            vec![g_plus.clone(), g_minus.clone()]
        } else {
            let n = g_plus.cols();
            vec![Matrix::from_fn(g_plus.rows(), n + 1, |i, j| if j < n { g_plus[(i, j)] } else { g_minus[(i, 0)] })]
        }
    }

    fn cached_circuits(&self) -> Result<&Vec<TiledCircuit>> {
        if let Some(c) = self.circuits.get() {
            return Ok(c);
        }
        let built = self
            .physical_arrays(&self.g_plus, &self.g_minus)
            .iter()
            .map(|g| TiledCircuit::new(g, &self.config.interconnect, self.config.tiles))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.circuits.get_or_init(|| built))
    }

    /// RTN-perturbed conductances for every read of one call: `reads[r] = (G₊, G₋)`.
    fn rtn_conductances(&self, rtn: &RTNParams, n_reads: usize, read_index: u64) -> Result<Vec<(Matrix, Matrix)>> {
        let base = self.lineage.stream().fork_path(&[KEY_RTN, read_index]);
        let chains = |g: &Matrix, side: u64| -> Result<Vec<Vec<f64>>> {
            let (rows, cols) = g.shape();
            let per_row = par::try_map_indexed(rows, |i| {
                let mut s = base.fork_path(&[side, i as u64]);
                (0..cols).map(|_| nonidealities::rtn_multipliers(rtn, n_reads, &mut s)).collect::<Result<Vec<_>>>()
            })?;
            Ok(per_row.into_iter().flatten().collect())
        };
        let plus = chains(&self.g_plus, 0)?;
        let minus = chains(&self.g_minus, 1)?;
        let scale = |g: &Matrix, m: &[Vec<f64>], r: usize| {
            let mut out = g.clone();
            out.as_mut_slice().iter_mut().zip(m).for_each(|(v, chain)| *v *= chain[r]);
            out
        };
        Ok((0..n_reads).map(|r| (scale(&self.g_plus, &plus, r), scale(&self.g_minus, &minus, r))).collect())
    }

    /// Analogue product `xᵀW` read through the physical model, averaged over
    /// `read.n_avg` reads. `read_index` addresses the random draws of this call.
    pub fn vmm(&self, x: &[f64], read: &ReadConfig, read_index: u64) -> Result<Vec<f64>> {
        if x.len() != self.rows() {
            return Err(Error::shape(MODULE, format!("input length {} vs {} rows", x.len(), self.rows())));
        }
        let read = ReadConfig::new(read.v_read, read.n_avg, read.encoding)?;
        let scaling = self.config.scheme.scaling;
        let tolerance = read.v_read * (1.0 + 1e-12);
        if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !((scaling.k_v * **v).abs() <= tolerance)) {
            return Err(Error::range(
                MODULE,
                format!("input {i} = {v} maps to {} V, beyond V_read = {} V", scaling.k_v * v, read.v_read),
            ));
        }
        let gamma = self.config.nonidealities.iv_gamma;
        let iv = IVNonlinearityParam::new(gamma, read.v_read)?;
        let rtn_reads = match self.config.nonidealities.rtn {
            Some(rtn) => Some(self.rtn_conductances(&rtn, read.n_avg, read_index)?),
            None => None,
        };

        let mut sum = vec![0.0; self.cols()];
        for r in 0..read.n_avg {
            let arrays: ArrayReader<'_> = match &rtn_reads {
                Some(reads) => {
                    let (gp, gm) = &reads[r];
                    ArrayReader::Fresh(self.physical_arrays(gp, gm))
                }
                None if iv.is_ohmic() => ArrayReader::Cached(self.cached_circuits()?),
                None => ArrayReader::Fresh(self.physical_arrays(&self.g_plus, &self.g_minus)),
            };
            let currents = match read.encoding {
                InputEncoding::Amplitude => {
                    let v: Vec<f64> = x.iter().map(|&xi| (scaling.k_v * xi).clamp(-read.v_read, read.v_read)).collect();
                    arrays.read(&v, &self.config, &iv)?
                }
                InputEncoding::PulseWidth { bits } => self.pulse_read(&arrays, x, &read, bits, &iv)?,
            };
            let y = self.decode(&currents)?;
            sum.iter_mut().zip(&y).for_each(|(s, v)| *s += v);
        }
        let n = read.n_avg as f64;
        Ok(sum.into_iter().map(|s| s / n).collect())
    }

    /// Charge-based read: each sign phase drives active rows at `±V_read`
    /// for a duration proportional to `|x|`; the accumulated charge divided by
    /// the full window is returned as an equivalent current.
    fn pulse_read(
        &self,
        arrays: &ArrayReader<'_>,
        x: &[f64],
        read: &ReadConfig,
        bits: Option<u32>,
        iv: &IVNonlinearityParam,
    ) -> Result<Vec<Vec<f64>>> {
        let k_v = self.config.scheme.scaling.k_v;
        let slots = bits.map(|b| ((1u64 << b) - 1) as f64);
        let duration = |xi: f64| {
            let d = ((k_v * xi).abs() / read.v_read).min(1.0);
            match slots {
                Some(s) => (d * s).round() / s,
                None => d,
            }
        };
        let mut total: Option<Vec<Vec<f64>>> = None;
        for sign in [1.0, -1.0] {
            let d: Vec<f64> = x.iter().map(|&xi| if xi * sign > 0.0 { duration(xi) } else { 0.0 }).collect();
            let mut levels: Vec<f64> = d.iter().copied().filter(|&v| v > 0.0).collect();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            let mut prev = 0.0;
            for level in levels {
                let v: Vec<f64> = d.iter().map(|&di| if di >= level { sign * read.v_read } else { 0.0 }).collect();
                let currents = arrays.read(&v, &self.config, iv)?;
                let dt = level - prev;
                prev = level;
                let acc = total.get_or_insert_with(|| currents.iter().map(|c| vec![0.0; c.len()]).collect());
                for (a, c) in acc.iter_mut().zip(&currents) {
                    a.iter_mut().zip(c).for_each(|(s, i)| *s += dt * i);
                }
            }
        }
        Ok(match total {
            Some(t) => t,
            None => {
                let widths: Vec<usize> =
                    if self.is_differential() { vec![self.cols(); 2] } else { vec![self.cols() + 1] };
                widths.into_iter().map(|w| vec![0.0; w]).collect()
            }
        })
    }

    fn decode(&self, currents: &[Vec<f64>]) -> Result<Vec<f64>> {
        let scaling = self.config.scheme.scaling;
        match currents {
            [plus, minus] => mapping::decode_outputs(plus, minus, &scaling),
            [augmented] => {
                let n = self.cols();
                let reference = vec![augmented[n]; n];
                mapping::decode_outputs(&augmented[..n], &reference, &scaling)
            }
            _ => unreachable!("one or two physical arrays"),
        }
    }
}

enum ArrayReader<'a> {
    Cached(&'a Vec<TiledCircuit>),
    Fresh(Vec<Matrix>),
}

impl ArrayReader<'_> {
    fn read(&self, v: &[f64], config: &CrossbarConfig, iv: &IVNonlinearityParam) -> Result<Vec<Vec<f64>>> {
        match self {
            ArrayReader::Cached(circuits) => circuits.iter().map(|c| c.currents(v)).collect(),
            ArrayReader::Fresh(arrays) => arrays
                .iter()
                .map(|g| {
                    if iv.is_ohmic() {
                        TiledCircuit::new(g, &config.interconnect, config.tiles)?.currents(v)
                    } else {
                        interconnect::tile_and_solve_nonlinear(g, v, &config.interconnect, config.tiles, iv)
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::preset;
    use crate::interconnect::Biasing;
    use crate::nonidealities::StuckMode;
    use crate::numeric::{matvec_ref, max_abs_diff, rel_err_inf, seeded_stream};

    fn random_w(m: usize, n: usize, seed: u64) -> Matrix {
        let mut s = seeded_stream(seed, 100);
        Matrix::from_fn(m, n, |_, _| s.uniform_in(-1.0, 1.0))
    }

    fn ideal_config(w: &Matrix) -> CrossbarConfig {
        CrossbarConfig::ideal(preset("RRAM").unwrap(), 0.2, w.max_abs()).unwrap()
    }

    const LIN: Lineage = Lineage { seed: 7, stream_id: 0 };

    #[test]
    fn ideal_program_is_exact_mapping() {
        let w = random_w(5, 4, 1);
        let cfg = ideal_config(&w);
        let xbar = program(&w, &cfg, LIN).unwrap();
        let (gp, gm) = mapping::weights_to_diff_pair(&w, &cfg.scheme).unwrap();
        assert_eq!(xbar.g_plus(), &gp);
        assert_eq!(xbar.g_minus(), &gm);
    }

    #[test]
    fn zero_weights_read_back_as_average() {
        let cfg = CrossbarConfig::ideal(preset("PCM").unwrap(), 0.2, 1.0).unwrap();
        let xbar = program(&Matrix::zeros(3, 3), &cfg, LIN).unwrap();
        let (gp, gm, mp, mm) = xbar.read_conductances();
        let avg = cfg.scheme.window.g_avg();
        assert!(gp.as_slice().iter().chain(gm.as_slice()).all(|&g| g == avg));
        assert!(mp.is_empty() && mm.is_empty());
    }

    #[test]
    fn certain_stuck_overrides_everything() {
        let w = random_w(6, 6, 2);
        let mut cfg = ideal_config(&w);
        cfg.nonidealities.stuck = Some(StuckSpec::new(1.0, StuckMode::AtGOff).unwrap());
        cfg.nonidealities.d2d = Some(D2DSpec::new(0.3).unwrap());
        let xbar = program(&w, &cfg, LIN).unwrap();
        let g_off = cfg.scheme.window.g_off();
        assert!(xbar.g_plus().as_slice().iter().chain(xbar.g_minus().as_slice()).all(|&g| g == g_off));
    }

    #[test]
    fn programming_is_deterministic() {
        let w = random_w(8, 8, 3);
        let mut cfg = ideal_config(&w);
        cfg.nonidealities.d2d = Some(D2DSpec::new(0.1).unwrap());
        cfg.nonidealities.stuck = Some(StuckSpec::new(0.05, StuckMode::AtRandomLevel).unwrap());
        let a = program(&w, &cfg, LIN).unwrap();
        let b = program(&w, &cfg, LIN).unwrap();
        assert_eq!(a, b);
        let c = program(&w, &cfg, Lineage { seed: 8, stream_id: 0 }).unwrap();
        assert_ne!(a, c);
        let win = cfg.scheme.window;
        assert!(a.g_plus().as_slice().iter().all(|&g| win.contains(g)));
    }

    #[test]
    fn ideal_vmm_matches_reference() {
        let mut s = seeded_stream(4, 0);
        for case in 0..20 {
            let (m, n) = (1 + s.index(40), 1 + s.index(40));
            let w = random_w(m, n, case);
            let x: Vec<f64> = (0..m).map(|_| s.uniform_in(-1.0, 1.0)).collect();
            let xbar = program(&w, &ideal_config(&w), LIN).unwrap();
            let y = xbar.vmm(&x, &ReadConfig::amplitude(0.2), 0).unwrap();
            let r = matvec_ref(&x, &w).unwrap();
            let scale = 1.0 + r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(max_abs_diff(&y, &r) <= 1e-9 * scale);
        }
    }

    #[test]
    fn linear_in_input() {
        let w = random_w(10, 6, 5);
        let xbar = program(&w, &ideal_config(&w), LIN).unwrap();
        let x: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 - 0.45).collect();
        let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        let read = ReadConfig::amplitude(0.2);
        let a = xbar.vmm(&x, &read, 0).unwrap();
        let b = xbar.vmm(&half, &read, 0).unwrap();
        let a_half: Vec<f64> = a.iter().map(|v| 0.5 * v).collect();
        assert!(rel_err_inf(&b, &a_half) < 1e-9);
    }

    #[test]
    fn naive_scheme_reference_column_cancels_offset() {
        let w = random_w(7, 5, 6);
        let device = preset("RRAM").unwrap();
        let scheme = MappingScheme::naive(device.window(), 0.2, -1.0, 1.0).unwrap();
        let cfg = CrossbarConfig { scheme, ..ideal_config(&w) };
        let xbar = program(&w, &cfg, LIN).unwrap();
        assert_eq!(xbar.g_minus().shape(), (7, 1));
        let x: Vec<f64> = (0..7).map(|i| 0.1 * i as f64).collect();
        let y = xbar.vmm(&x, &ReadConfig::amplitude(0.2), 0).unwrap();
        assert!(rel_err_inf(&y, &matvec_ref(&x, &w).unwrap()) < 1e-9);
    }

    #[test]
    fn input_range_checked() {
        let w = random_w(3, 3, 7);
        let xbar = program(&w, &ideal_config(&w), LIN).unwrap();
        // k_V = 0.2, V_read = 0.2 → |x| ≤ 1
        assert!(xbar.vmm(&[1.0, -1.0, 0.5], &ReadConfig::amplitude(0.2), 0).is_ok());
        assert!(matches!(xbar.vmm(&[1.5, 0.0, 0.0], &ReadConfig::amplitude(0.2), 0), Err(Error::Range { .. })));
        assert!(matches!(xbar.vmm(&[1.0], &ReadConfig::amplitude(0.2), 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn pulse_width_cancels_iv_curvature() {
        let w = random_w(6, 4, 8);
        let mut cfg = ideal_config(&w);
        let ohmic = program(&w, &cfg, LIN).unwrap();
        cfg.nonidealities.iv_gamma = 2.0;
        let curved = program(&w, &cfg, LIN).unwrap();
        // inputs on the 8-bit duration grid
        let x: Vec<f64> = [255.0, -17.0, 128.0, 0.0, -255.0, 3.0].iter().map(|k| k / 255.0).collect();
        let a = ohmic.vmm(&x, &ReadConfig::amplitude(0.2), 0).unwrap();
        let pw = ReadConfig::new(0.2, 1, InputEncoding::pulse_width()).unwrap();
        let b = curved.vmm(&x, &pw, 0).unwrap();
        assert!(rel_err_inf(&b, &a) < 1e-9);
        // amplitude reads do see the curvature
        let c = curved.vmm(&x, &ReadConfig::amplitude(0.2), 0).unwrap();
        assert!(rel_err_inf(&c, &a) > 1e-3);
    }

    #[test]
    fn pulse_width_with_line_resistance_runs() {
        let w = random_w(6, 5, 9);
        let mut cfg = ideal_config(&w);
        cfg.interconnect = LineResistanceParams::uniform(2.0, Biasing::Single);
        cfg.nonidealities.iv_gamma = 1.5;
        let xbar = program(&w, &cfg, LIN).unwrap();
        let x: Vec<f64> = (0..6).map(|i| 0.15 * i as f64 - 0.3).collect();
        let pw = ReadConfig::new(0.2, 1, InputEncoding::PulseWidth { bits: None }).unwrap();
        let y = xbar.vmm(&x, &pw, 0).unwrap();
        let r = matvec_ref(&x, &w).unwrap();
        assert!(rel_err_inf(&y, &r) < 0.1);
    }

    #[test]
    fn rtn_reads_deterministic_per_index() {
        let w = random_w(8, 4, 10);
        let mut cfg = ideal_config(&w);
        cfg.nonidealities.rtn = Some(RTNParams::new(0.2, 2.0, 2.0).unwrap());
        let xbar = program(&w, &cfg, LIN).unwrap();
        let x = vec![0.5; 8];
        let read = ReadConfig::new(0.2, 4, InputEncoding::Amplitude).unwrap();
        assert_eq!(xbar.vmm(&x, &read, 3).unwrap(), xbar.vmm(&x, &read, 3).unwrap());
        assert_ne!(xbar.vmm(&x, &read, 3).unwrap(), xbar.vmm(&x, &read, 4).unwrap());
    }

    #[test]
    fn stuck_fraction_and_weight_error() {
        let w = random_w(20, 20, 11);
        let mut cfg = ideal_config(&w);
        let exact = program(&w, &cfg, LIN).unwrap();
        assert!(exact.weight_error(&w).unwrap().max_abs() < 1e-12);
        cfg.nonidealities.stuck = Some(StuckSpec::new(0.1, StuckMode::AtRandomLevel).unwrap());
        let faulty = program(&w, &cfg, LIN).unwrap();
        assert!(faulty.masks().0.count() > 0);
        assert!(faulty.weight_error(&w).unwrap().max_abs() > 0.01);
    }

    #[test]
    fn quantize_and_pulses_pipeline() {
        let w = random_w(5, 5, 12);
        let mut cfg = CrossbarConfig::ideal(preset("Li-ion").unwrap(), 0.2, w.max_abs()).unwrap();
        cfg.nonidealities.quantize = true;
        cfg.nonidealities.programming = Some(ProgrammingSpec { max_pulses: 2000 });
        let xbar = program(&w, &cfg, LIN).unwrap();
        let levels = (1u64 << 10) - 1;
        let step = cfg.scheme.window.span() / levels as f64;
        // linear device with one pulse per level lands on the quantised grid
        for &g in xbar.g_plus().as_slice() {
            let k = (g - cfg.scheme.window.g_off()) / step;
            assert!((k - k.round()).abs() < 1e-6, "{k}");
        }
        let mut bad = cfg.clone();
        bad.device = preset("FeRAM").unwrap();
        bad.scheme = MappingScheme::differential_pair(bad.device.window(), 0.2, w.max_abs()).unwrap();
        let err = program(&w, &bad, LIN).unwrap_err().to_string();
        assert!(err.contains("cell (0, 0)"), "{err}");
    }

    #[test]
    fn serde_round_trip() {
        let w = random_w(4, 3, 13);
        let mut cfg = ideal_config(&w);
        cfg.nonidealities.d2d = Some(D2DSpec::new(0.2).unwrap());
        let xbar = program(&w, &cfg, LIN).unwrap();
        let text = serde_json::to_string(&xbar).unwrap();
        let back: Crossbar = serde_json::from_str(&text).unwrap();
        assert_eq!(back, xbar);
    }
}
