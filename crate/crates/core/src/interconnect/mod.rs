//! Crossbar readout with resistive word and bit lines.
//!
//! Every crosspoint `(i, j)` has a word-side node and a bit-side node joined
//! by the device conductance `G[i, j]`. Neighbouring nodes along a line are
//! joined by one wire segment (`R_word` or `R_bit`). Word line `i` is driven
//! by an ideal source `V[i]` through one segment at column 0 (and also at
//! column `n-1` under double biasing); bit line `j` reaches its virtual ground
//! through one segment below row `m-1` (and also above row 0 under double
//! biasing). A zero resistance collapses that line to its terminal potential.
//!
//! The unknown node potentials satisfy a sparse SPD system which is ordered
//! to have bandwidth `2·min(m, n)` and factored with a banded Cholesky.

mod banded;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use self::banded::{BandCholesky, BandMatrix};
use crate::error::{Error, Result};
use crate::nonidealities::{iv_current_unchecked, secant_conductance, IVNonlinearityParam};
use crate::numeric::Matrix;
use crate::par;

const MAX_REFINEMENTS: usize = 4;
/// Secant iterations for nonlinear devices on resistive lines.
pub const MAX_SECANT_ITERATIONS: usize = 50;
/// Relative KCL residual accepted by every solve.
pub const RESIDUAL_REL_TOL: f64 = 1e-10;
/// Absolute residual floor used when all output currents vanish.
pub const RESIDUAL_ABS_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Biasing {
    #[default]
    Single,
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineResistanceParams {
    /// Ohms per word-line segment.
    pub r_word: f64,
    /// Ohms per bit-line segment.
    pub r_bit: f64,
    pub biasing: Biasing,
}

impl Default for LineResistanceParams {
    fn default() -> Self {
        Self::ideal()
    }
}

impl LineResistanceParams {
    pub fn ideal() -> Self {
        LineResistanceParams { r_word: 0.0, r_bit: 0.0, biasing: Biasing::Single }
    }

    pub fn uniform(r: f64, biasing: Biasing) -> Self {
        LineResistanceParams { r_word: r, r_bit: r, biasing }
    }

    pub fn is_ideal(&self) -> bool {
        self.r_word == 0.0 && self.r_bit == 0.0
    }

    fn validate(&self) -> Result<()> {
        for (name, r) in [("R_word", self.r_word), ("R_bit", self.r_bit)] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::param("interconnect", format!("{name} must be a finite non-negative resistance, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub max_rows: usize,
    pub max_cols: usize,
}

impl TileSpec {
    pub fn new(max_rows: usize, max_cols: usize) -> Result<Self> {
        if max_rows == 0 || max_cols == 0 {
            return Err(Error::param("interconnect", "tile dimensions must be at least 1"));
        }
        Ok(TileSpec { max_rows, max_cols })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Current flowing into each bit-line termination (amps).
    pub i_out: Vec<f64>,
    /// Word-side crosspoint potentials (volts).
    pub word_potentials: Matrix,
    /// Bit-side crosspoint potentials (volts).
    pub bit_potentials: Matrix,
    /// Largest KCL violation over all free nodes (amps).
    pub solver_residual: f64,
}

fn residual_bound(i_out: &[f64]) -> f64 {
    let scale = i_out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale > 0.0 {
        RESIDUAL_REL_TOL * scale
    } else {
        RESIDUAL_ABS_FLOOR
    }
}

/// Position of each crosspoint node in the unknown vector.
#[derive(Debug, Clone)]
struct NodeLayout {
    rows: usize,
    cols: usize,
    word: Vec<Option<usize>>,
    bit: Vec<Option<usize>>,
    unknowns: usize,
    bandwidth: usize,
}

impl NodeLayout {
    fn new(rows: usize, cols: usize, free_word: bool, free_bit: bool) -> Self {
        let cells = rows * cols;
        let mut word = vec![None; cells];
        let mut bit = vec![None; cells];
        // choose the traversal whose minor dimension is shortest, so that
        // neighbours along the major direction stay within the band
        let row_major = match (free_word, free_bit) {
            (true, false) => true,
            (false, true) => false,
            _ => cols <= rows,
        };
        let mut next = 0;
        let mut visit = |i: usize, j: usize| {
            let c = i * cols + j;
            if free_word {
                word[c] = Some(next);
                next += 1;
            }
            if free_bit {
                bit[c] = Some(next);
                next += 1;
            }
        };
        if row_major {
            (0..rows).for_each(|i| (0..cols).for_each(|j| visit(i, j)));
        } else {
            (0..cols).for_each(|j| (0..rows).for_each(|i| visit(i, j)));
        }
        let per = free_word as usize + free_bit as usize;
        let minor = if row_major { cols } else { rows };
        let bandwidth = match (free_word, free_bit) {
            (false, false) => 0,
            (true, true) => per * minor,
            _ => {
                if (row_major && free_word) || (!row_major && free_bit) {
                    1
                } else {
                    minor
                }
            }
        };
        NodeLayout { rows, cols, word, bit, unknowns: next, bandwidth }
    }
}

/// A crossbar with fixed conductances, factored once and reusable for any
/// number of input vectors.
#[derive(Debug, Clone)]
pub struct CrossbarCircuit {
    g: Matrix,
    params: LineResistanceParams,
    layout: NodeLayout,
    system: Option<(BandMatrix, BandCholesky)>,
}

impl CrossbarCircuit {
    pub fn new(g: &Matrix, params: &LineResistanceParams) -> Result<Self> {
        params.validate()?;
        if let Some(((i, j), v)) = g.iter_indexed().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::param("interconnect", format!("conductance ({i}, {j}) = {v} is not a valid non-negative value")));
        }
        let (rows, cols) = g.shape();
        let layout = NodeLayout::new(rows, cols, params.r_word > 0.0, params.r_bit > 0.0);
        let system = if layout.unknowns == 0 {
            None
        } else {
            let a = assemble(g, params, &layout);
            let factor = a.clone().cholesky().map_err(|e| match e {
                Error::Solver { detail, residual } => {
                    Error::Solver { detail: format!("singular crossbar network: {detail}"), residual }
                }
                other => other,
            })?;
            Some((a, factor))
        };
        Ok(CrossbarCircuit { g: g.clone(), params: *params, layout, system })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.g.shape()
    }

    pub fn conductances(&self) -> &Matrix {
        &self.g
    }

    pub fn solve(&self, v_applied: &[f64]) -> Result<SolveResult> {
        let rows = self.g.rows();
        if v_applied.len() != rows {
            return Err(Error::shape("interconnect", format!("{} voltages for {rows} word lines", v_applied.len())));
        }
        let Some((a, factor)) = &self.system else {
            return Ok(self.ideal_solve(v_applied));
        };
        let b = rhs(&self.g, &self.params, &self.layout, v_applied);
        let mut x = factor.solve(&b);
        let mut result = self.expand(&x, v_applied);
        let mut bound = residual_bound(&result.i_out);
        let mut refinements = 0;
        while result.solver_residual > bound && refinements < MAX_REFINEMENTS {
            let ax = a.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let dx = factor.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
            result = self.expand(&x, v_applied);
            bound = residual_bound(&result.i_out);
            refinements += 1;
        }
        if result.solver_residual > bound {
            return Err(Error::Solver {
                detail: format!("KCL residual above bound {bound:e} after refinement"),
                residual: result.solver_residual,
            });
        }
        Ok(result)
    }

    fn ideal_solve(&self, v: &[f64]) -> SolveResult {
        let (rows, cols) = self.g.shape();
        let mut i_out = vec![0.0; cols];
        for (i, &vi) in v.iter().enumerate() {
            for (acc, &g) in i_out.iter_mut().zip(self.g.row(i)) {
                *acc += vi * g;
            }
        }
        SolveResult {
            i_out,
            word_potentials: Matrix::from_fn(rows, cols, |i, _| v[i]),
            bit_potentials: Matrix::zeros(rows, cols),
            solver_residual: 0.0,
        }
    }

    fn expand(&self, x: &[f64], v: &[f64]) -> SolveResult {
        let (rows, cols) = self.g.shape();
        let lay = &self.layout;
        let word = Matrix::from_fn(rows, cols, |i, j| lay.word[i * cols + j].map_or(v[i], |k| x[k]));
        let bit = Matrix::from_fn(rows, cols, |i, j| lay.bit[i * cols + j].map_or(0.0, |k| x[k]));
        let i_out = termination_currents(&word, &bit, &self.params, |i, j, dv| self.g[(i, j)] * dv);
        let solver_residual = kcl_residual(&word, &bit, v, &self.params, lay, |i, j, dv| self.g[(i, j)] * dv);
        SolveResult { i_out, word_potentials: word, bit_potentials: bit, solver_residual }
    }
}

fn assemble(g: &Matrix, params: &LineResistanceParams, lay: &NodeLayout) -> BandMatrix {
    let (rows, cols) = (lay.rows, lay.cols);
    let double = params.biasing == Biasing::Double;
    let gw = if params.r_word > 0.0 { 1.0 / params.r_word } else { 0.0 };
    let gb = if params.r_bit > 0.0 { 1.0 / params.r_bit } else { 0.0 };
    let mut a = BandMatrix::zeros(lay.unknowns, lay.bandwidth);
    for i in 0..rows {
        for j in 0..cols {
            let c = i * cols + j;
            let gd = g[(i, j)];
            if let Some(w) = lay.word[c] {
                let mut diag = gd;
                diag += gw; // towards j-1 or the source at column 0
                if j + 1 < cols || double {
                    diag += gw;
                }
                a.add(w, w, diag);
                if j + 1 < cols {
                    a.add(lay.word[c + 1].expect("word nodes are all free"), w, -gw);
                }
                if let Some(b) = lay.bit[c] {
                    a.add(w.max(b), w.min(b), -gd);
                }
            }
            if let Some(b) = lay.bit[c] {
                let mut diag = gd;
                diag += gb; // towards i+1 or the ground below row m-1
                if i > 0 || double {
                    diag += gb;
                }
                a.add(b, b, diag);
                if i + 1 < rows {
                    a.add(lay.bit[c + cols].expect("bit nodes are all free"), b, -gb);
                }
            }
        }
    }
    a
}

fn rhs(g: &Matrix, params: &LineResistanceParams, lay: &NodeLayout, v: &[f64]) -> Vec<f64> {
    let (rows, cols) = (lay.rows, lay.cols);
    let double = params.biasing == Biasing::Double;
    let gw = if params.r_word > 0.0 { 1.0 / params.r_word } else { 0.0 };
    let mut b = vec![0.0; lay.unknowns];
    for i in 0..rows {
        for j in 0..cols {
            let c = i * cols + j;
            if let Some(w) = lay.word[c] {
                if j == 0 {
                    b[w] += gw * v[i];
                }
                if double && j + 1 == cols {
                    b[w] += gw * v[i];
                }
            } else if let Some(bn) = lay.bit[c] {
                // word line held at the source potential
                b[bn] += g[(i, j)] * v[i];
            }
        }
    }
    b
}

/// Currents into the bit-line grounds. `device(i, j, ΔV)` gives the current
/// through crosspoint `(i, j)` for a word-to-bit potential difference.
fn termination_currents(
    word: &Matrix,
    bit: &Matrix,
    params: &LineResistanceParams,
    device: impl Fn(usize, usize, f64) -> f64,
) -> Vec<f64> {
    let (rows, cols) = word.shape();
    if params.r_bit > 0.0 {
        let gb = 1.0 / params.r_bit;
        (0..cols)
            .map(|j| {
                let mut i_j = gb * bit[(rows - 1, j)];
                if params.biasing == Biasing::Double {
                    i_j += gb * bit[(0, j)];
                }
                i_j
            })
            .collect()
    } else {
        (0..cols).map(|j| (0..rows).map(|i| device(i, j, word[(i, j)])).sum()).collect()
    }
}

/// Largest net current leaving any free node.
fn kcl_residual(
    word: &Matrix,
    bit: &Matrix,
    v: &[f64],
    params: &LineResistanceParams,
    lay: &NodeLayout,
    device: impl Fn(usize, usize, f64) -> f64,
) -> f64 {
    let (rows, cols) = word.shape();
    let double = params.biasing == Biasing::Double;
    let mut worst = 0.0f64;
    for i in 0..rows {
        for j in 0..cols {
            let c = i * cols + j;
            let cell = device(i, j, word[(i, j)] - bit[(i, j)]);
            if lay.word[c].is_some() {
                let gw = 1.0 / params.r_word;
                let w = word[(i, j)];
                let left = if j == 0 { v[i] } else { word[(i, j - 1)] };
                let mut net = gw * (w - left) + cell;
                if j + 1 < cols {
                    net += gw * (w - word[(i, j + 1)]);
                } else if double {
                    net += gw * (w - v[i]);
                }
                worst = worst.max(net.abs());
            }
            if lay.bit[c].is_some() {
                let gb = 1.0 / params.r_bit;
                let b = bit[(i, j)];
                let below = if i + 1 == rows { 0.0 } else { bit[(i + 1, j)] };
                let mut net = gb * (b - below) - cell;
                if i > 0 {
                    net += gb * (b - bit[(i - 1, j)]);
                } else if double {
                    net += gb * b;
                }
                worst = worst.max(net.abs());
            }
        }
    }
    worst
}

/// Solve one crossbar with linear devices.
pub fn solve_crossbar(g: &Matrix, v_applied: &[f64], params: &LineResistanceParams) -> Result<SolveResult> {
    CrossbarCircuit::new(g, params)?.solve(v_applied)
}

/// Solve a crossbar whose devices follow the sinh I-V law, by secant
/// fixed-point iteration: each device is replaced by its secant conductance
/// at the previous iterate's cell voltage until the nonlinear KCL residual
/// meets the bound.
pub fn solve_crossbar_nonlinear(
    g: &Matrix,
    v_applied: &[f64],
    params: &LineResistanceParams,
    iv: &IVNonlinearityParam,
) -> Result<SolveResult> {
    if iv.is_ohmic() {
        return solve_crossbar(g, v_applied, params);
    }
    if let Some((i, v)) = v_applied.iter().enumerate().find(|(_, v)| v.abs() > iv.v_read) {
        return Err(Error::range("interconnect", format!("word line {i}: |V| = {} exceeds V_read = {}", v.abs(), iv.v_read)));
    }
    let (rows, cols) = g.shape();
    let device = |i: usize, j: usize, dv: f64| iv_current_unchecked(g[(i, j)], dv, iv);
    if params.is_ideal() {
        let word = Matrix::from_fn(rows, cols, |i, _| v_applied[i]);
        let bit = Matrix::zeros(rows, cols);
        let i_out = termination_currents(&word, &bit, params, device);
        return Ok(SolveResult { i_out, word_potentials: word, bit_potentials: bit, solver_residual: 0.0 });
    }
    let mut g_eff = g.clone();
    let mut last_residual = f64::INFINITY;
    for _ in 0..MAX_SECANT_ITERATIONS {
        let circuit = CrossbarCircuit::new(&g_eff, params)?;
        let lin = circuit.solve(v_applied)?;
        let (word, bit) = (lin.word_potentials, lin.bit_potentials);
        let i_out = termination_currents(&word, &bit, params, device);
        let residual = kcl_residual(&word, &bit, v_applied, params, &circuit.layout, device);
        if residual <= residual_bound(&i_out) {
            return Ok(SolveResult { i_out, word_potentials: word, bit_potentials: bit, solver_residual: residual });
        }
        last_residual = residual;
        g_eff = Matrix::from_fn(rows, cols, |i, j| secant_conductance(g[(i, j)], word[(i, j)] - bit[(i, j)], iv));
    }
    Err(Error::Solver {
        detail: format!("secant iteration did not converge in {MAX_SECANT_ITERATIONS} steps"),
        residual: last_residual,
    })
}

fn blocks(len: usize, max: usize) -> Vec<Range<usize>> {
    (0..len).step_by(max.max(1)).map(|s| s..(s + max).min(len)).collect()
}

/// A crossbar split into independently read tiles whose partial bit-line
/// currents are summed per output column.
#[derive(Debug, Clone)]
pub struct TiledCircuit {
    cols: usize,
    tiles: Vec<(Range<usize>, Range<usize>, CrossbarCircuit)>,
}

impl TiledCircuit {
    pub fn new(g: &Matrix, params: &LineResistanceParams, tiles: Option<TileSpec>) -> Result<Self> {
        let (rows, cols) = g.shape();
        let spec = tiles.unwrap_or(TileSpec { max_rows: rows.max(1), max_cols: cols.max(1) });
        let mut ranges = Vec::new();
        for r in blocks(rows, spec.max_rows) {
            for c in blocks(cols, spec.max_cols) {
                ranges.push((r.clone(), c));
            }
        }
        let circuits = par::try_map_indexed(ranges.len(), |k| {
            let (r, c) = &ranges[k];
            CrossbarCircuit::new(&g.block(r.clone(), c.clone()), params)
        })?;
        let tiles = ranges.into_iter().zip(circuits).map(|((r, c), circ)| (r, c, circ)).collect();
        Ok(TiledCircuit { cols, tiles })
    }

    pub fn currents(&self, v_applied: &[f64]) -> Result<Vec<f64>> {
        if let [(_, _, only)] = self.tiles.as_slice() {
            return Ok(only.solve(v_applied)?.i_out);
        }
        let partials = par::try_map_indexed(self.tiles.len(), |k| {
            let (r, _, circuit) = &self.tiles[k];
            circuit.solve(&v_applied[r.clone()]).map(|s| s.i_out)
        })?;
        let mut out = vec![0.0; self.cols];
        for ((_, c, _), part) in self.tiles.iter().zip(partials) {
            for (o, p) in out[c.clone()].iter_mut().zip(part) {
                *o += p;
            }
        }
        Ok(out)
    }
}

/// Tile `G` into blocks of at most `tiles.max_rows × tiles.max_cols`, read each
/// block independently and sum partial currents per output column.
pub fn tile_and_solve(g: &Matrix, v_applied: &[f64], params: &LineResistanceParams, tiles: TileSpec) -> Result<Vec<f64>> {
    if v_applied.len() != g.rows() {
        return Err(Error::shape("interconnect", format!("{} voltages for {} word lines", v_applied.len(), g.rows())));
    }
    TiledCircuit::new(g, params, Some(tiles))?.currents(v_applied)
}

/// Nonlinear-device counterpart of [`tile_and_solve`]; `tiles = None` reads the whole array.
pub fn tile_and_solve_nonlinear(
    g: &Matrix,
    v_applied: &[f64],
    params: &LineResistanceParams,
    tiles: Option<TileSpec>,
    iv: &IVNonlinearityParam,
) -> Result<Vec<f64>> {
    let (rows, cols) = g.shape();
    let spec = tiles.unwrap_or(TileSpec { max_rows: rows.max(1), max_cols: cols.max(1) });
    let mut ranges = Vec::new();
    for r in blocks(rows, spec.max_rows) {
        for c in blocks(cols, spec.max_cols) {
            ranges.push((r.clone(), c));
        }
    }
    let partials = par::try_map_indexed(ranges.len(), |k| {
        let (r, c) = &ranges[k];
        solve_crossbar_nonlinear(&g.block(r.clone(), c.clone()), &v_applied[r.clone()], params, iv).map(|s| s.i_out)
    })?;
    let mut out = vec![0.0; cols];
    for ((_, c), part) in ranges.iter().zip(partials) {
        for (o, p) in out[c.clone()].iter_mut().zip(part) {
            *o += p;
        }
    }
    Ok(out)
}
