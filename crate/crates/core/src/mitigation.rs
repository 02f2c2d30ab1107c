//! Algorithmic countermeasures: stuck-device compensation through the
//! differential partner, importance- and intensity-ordered row placement, and
//! calibration of the nonlinear weight-to-conductance map.

use serde::{Deserialize, Serialize};

use crate::crossbar::{self, Crossbar, Lineage};
use crate::error::{Error, Result};
use crate::mapping::{MappingScheme, MappingVariant};
use crate::nn::{HardwareSpec, SensitivityMap};
use crate::numeric::{matvec_ref, Matrix};
use crate::par;

const MODULE: &str = "mitigation";

/// A reordering of `n` items. `forward()[p]` is the original index placed at
/// position `p`; `inverse()[i]` is the position of original index `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPermutation")]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

#[derive(Deserialize)]
struct RawPermutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl TryFrom<RawPermutation> for Permutation {
    type Error = Error;

    fn try_from(raw: RawPermutation) -> Result<Self> {
        let p = Permutation::new(raw.forward)?;
        if p.inverse != raw.inverse {
            return Err(Error::param(MODULE, "stored inverse does not match the permutation"));
        }
        Ok(p)
    }
}

impl Permutation {
    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (p, &i) in forward.iter().enumerate() {
            if i >= n || inverse[i] != usize::MAX {
                return Err(Error::param(MODULE, format!("{forward:?} is not a permutation of 0..{n}")));
            }
            inverse[i] = p;
        }
        Ok(Permutation { forward, inverse })
    }

    pub fn identity(n: usize) -> Self {
        Permutation { forward: (0..n).collect(), inverse: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(p, &i)| p == i)
    }

    fn check(&self, n: usize, what: &str) -> Result<()> {
        if n != self.len() {
            return Err(Error::shape(MODULE, format!("permutation of {} applied to {n} {what}", self.len())));
        }
        Ok(())
    }

    /// `out[p] = x[forward[p]]`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len(), "values")?;
        Ok(self.forward.iter().map(|&i| x[i]).collect())
    }

    /// Inverse of [`apply`](Self::apply).
    pub fn unapply(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check(y.len(), "values")?;
        Ok(self.inverse.iter().map(|&p| y[p]).collect())
    }

    pub fn permute_rows(&self, w: &Matrix) -> Result<Matrix> {
        self.check(w.rows(), "rows")?;
        Ok(Matrix::from_fn(w.rows(), w.cols(), |p, j| w[(self.forward[p], j)]))
    }

    pub fn permute_cols(&self, w: &Matrix) -> Result<Matrix> {
        self.check(w.cols(), "columns")?;
        Ok(Matrix::from_fn(w.rows(), w.cols(), |i, p| w[(i, self.forward[p])]))
    }
}

/// Which pair member was adjusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSide {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedCell {
    pub row: usize,
    pub col: usize,
    pub side: PairSide,
    /// New conductance of the free partner.
    pub value: f64,
    /// `|(G₊ − G₋)/k_G − w|` after adjustment.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BothStuckCell {
    pub row: usize,
    pub col: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompensationReport {
    pub adjusted: Vec<AdjustedCell>,
    /// Pairs where neither member can be changed.
    pub both_stuck: Vec<BothStuckCell>,
}

impl CompensationReport {
    pub fn is_empty(&self) -> bool {
        self.adjusted.is_empty() && self.both_stuck.is_empty()
    }

    /// Comma-separated table `row,col,side,value,residual`; both-stuck pairs
    /// have side `both` and an empty value.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::io(MODULE, e);
        w.write_record(["row", "col", "side", "value", "residual"]).map_err(io)?;
        for c in &self.adjusted {
            let side = match c.side {
                PairSide::Plus => "plus",
                PairSide::Minus => "minus",
            };
            w.write_record([c.row.to_string(), c.col.to_string(), side.into(), format!("{:e}", c.value), format!("{:e}", c.residual)])
                .map_err(io)?;
        }
        for c in &self.both_stuck {
            w.write_record([c.row.to_string(), c.col.to_string(), "both".into(), String::new(), format!("{:e}", c.residual)])
                .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(MODULE, e))?;
        String::from_utf8(bytes).map_err(|e| Error::io(MODULE, e))
    }
}

/// Re-program the free member of every pair with exactly one stuck device so
/// that `G₊ − G₋ = k_G·w` as closely as the window allows.
pub fn compensate_stuck(xbar: &Crossbar, w_target: &Matrix) -> Result<(Crossbar, CompensationReport)> {
    let scheme = xbar.scheme();
    if !scheme.is_differential() {
        return Err(Error::UnsupportedScheme(format!("{:?}; compensation needs a differential pair", scheme.variant)));
    }
    if w_target.shape() != (xbar.rows(), xbar.cols()) {
        return Err(Error::shape(
            MODULE,
            format!("target {:?} vs crossbar {:?}", w_target.shape(), (xbar.rows(), xbar.cols())),
        ));
    }
    let (k_g, window) = (scheme.k_g(), scheme.window);
    let (mut g_plus, mut g_minus, mask_plus, mask_minus) = xbar.read_conductances();
    let mut report = CompensationReport::default();
    for i in 0..xbar.rows() {
        for j in 0..xbar.cols() {
            let target = k_g * w_target[(i, j)];
            let residual = |gp: f64, gm: f64| ((gp - gm) / k_g - w_target[(i, j)]).abs();
            match (mask_plus.get(i, j), mask_minus.get(i, j)) {
                (Some(s), None) => {
                    let v = window.clip(s - target);
                    g_minus[(i, j)] = v;
                    report.adjusted.push(AdjustedCell { row: i, col: j, side: PairSide::Minus, value: v, residual: residual(s, v) });
                }
                (None, Some(s)) => {
                    let v = window.clip(s + target);
                    g_plus[(i, j)] = v;
                    report.adjusted.push(AdjustedCell { row: i, col: j, side: PairSide::Plus, value: v, residual: residual(v, s) });
                }
                (Some(p), Some(m)) => report.both_stuck.push(BothStuckCell { row: i, col: j, residual: residual(p, m) }),
                (None, None) => {}
            }
        }
    }
    if report.is_empty() {
        return Ok((xbar.clone(), report));
    }
    Ok((xbar.with_conductances(g_plus, g_minus), report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderCriterion<'a> {
    /// Mean `|Δw|` per row of one layer of a sensitivity map.
    Sensitivity { map: &'a SensitivityMap, layer: usize },
    /// Expected mean input per row.
    Intensity(&'a [f64]),
}

/// Where the highest-scoring rows go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Physical row 0 onwards.
    TowardDrive,
    /// Physical row `m − 1` backwards, next to the bit-line terminations.
    TowardOutput,
}

impl OrderCriterion<'_> {
    pub fn default_placement(&self) -> Placement {
        match self {
            OrderCriterion::Sensitivity { .. } => Placement::TowardDrive,
            OrderCriterion::Intensity(_) => Placement::TowardOutput,
        }
    }

    fn scores(&self) -> Result<Vec<f64>> {
        match self {
            OrderCriterion::Sensitivity { map, layer } => map.row_importance(*layer),
            OrderCriterion::Intensity(s) => Ok(s.to_vec()),
        }
    }
}

/// Physical row order sorted by descending score, ties by ascending index.
pub fn order_rows(criterion: OrderCriterion<'_>, placement: Placement, rows: usize) -> Result<Permutation> {
    let scores = criterion.scores()?;
    if scores.len() != rows {
        return Err(Error::shape(MODULE, format!("{} scores for {rows} rows", scores.len())));
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(MODULE, format!("score {i} is {}", scores[i])));
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    if placement == Placement::TowardOutput {
        order.reverse();
    }
    Permutation::new(order)
}

/// Restores logical output order after a column-permuted read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputUnpermuter {
    cols: Permutation,
}

impl OutputUnpermuter {
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.cols.unapply(y)
    }
}

/// Relabel rows and columns: `W′ = P_r·W·P_cᵀ`, `x′ = P_r·x`.
pub fn apply_permuted_mapping(
    w: &Matrix,
    x: &[f64],
    rows: &Permutation,
    cols: &Permutation,
) -> Result<(Matrix, Vec<f64>, OutputUnpermuter)> {
    if x.len() != w.rows() {
        return Err(Error::shape(MODULE, format!("input length {} vs {} rows", x.len(), w.rows())));
    }
    let w2 = cols.permute_cols(&rows.permute_rows(w)?)?;
    Ok((w2, rows.apply(x)?, OutputUnpermuter { cols: cols.clone() }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub best_exponent: f64,
    /// `(exponent, mean |y − y_ideal|)` for every grid point in input order.
    pub errors: Vec<(f64, f64)>,
}

/// Mean absolute deviation of crossbar reads from the exact product when `w`
/// is stored with the power-law map of the given exponent.
pub fn nonlinear_mapping_error(
    w: &Matrix,
    x_calibration: &Matrix,
    exponent: f64,
    hardware: &HardwareSpec,
    lineage: Lineage,
) -> Result<f64> {
    if x_calibration.cols() != w.rows() || x_calibration.rows() == 0 {
        return Err(Error::shape(
            MODULE,
            format!("calibration batch {:?} for {} weight rows", x_calibration.shape(), w.rows()),
        ));
    }
    let mut config = hardware.layer_config(w)?;
    config.scheme = MappingScheme::nonlinear_power(
        config.scheme.window,
        config.scheme.k_v(),
        config.scheme.w_min(),
        config.scheme.w_max(),
        exponent,
    )?;
    let xbar = crossbar::program(w, &config, lineage)?;
    let deviations = par::try_map_indexed(x_calibration.rows(), |r| {
        let x = x_calibration.row(r);
        let y = xbar.vmm(x, &hardware.read, r as u64)?;
        let ideal = matvec_ref(x, w)?;
        Ok::<_, Error>(y.iter().zip(&ideal).map(|(a, b)| (a - b).abs()).sum::<f64>())
    })?;
    Ok(deviations.iter().sum::<f64>() / (x_calibration.rows() * w.cols()) as f64)
}

/// Grid search for the power-law exponent with the smallest mean read
/// deviation; ties go to the smallest exponent.
pub fn calibrate_nonlinear_mapping(
    w: &Matrix,
    x_calibration: &Matrix,
    p_grid: &[f64],
    hardware: &HardwareSpec,
    lineage: Lineage,
) -> Result<Calibration> {
    if p_grid.is_empty() {
        return Err(Error::param(MODULE, "exponent grid is empty"));
    }
    if let MappingVariant::DifferentialPair = hardware.mapping {
        return Err(Error::UnsupportedScheme("calibration searches single-device power-law maps".into()));
    }
    let errors = par::try_map_slice(p_grid, |&p| {
        nonlinear_mapping_error(w, x_calibration, p, hardware, lineage).map(|e| (p, e))
    })?;
    let (best_exponent, _) = errors
        .iter()
        .copied()
        .reduce(|best, c| if c.1 < best.1 || (c.1 == best.1 && c.0 < best.0) { c } else { best })
        .expect("non-empty grid");
    Ok(Calibration { best_exponent, errors })
}
