//! Conversion between software values and physical quantities.
//!
//! Inputs become word-line voltages `V = k_V·x`, weights become conductances,
//! and bit-line currents are decoded back with `y = (I₊ − I₋)/(k_V·k_G)`.
//! Signed weights are stored either as a differential pair symmetric around
//! the window midpoint, or as a single conductance whose offset is cancelled
//! by a reference column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

const MODULE: &str = "mapping";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearScaling {
    /// Volts per input unit.
    pub k_v: f64,
    /// Siemens per weight unit.
    pub k_g: f64,
}

impl LinearScaling {
    pub fn new(k_v: f64, k_g: f64) -> Result<Self> {
        if !(k_v > 0.0 && k_v.is_finite()) || !(k_g > 0.0 && k_g.is_finite()) {
            return Err(Error::param(MODULE, format!("k_V and k_G must be positive (got {k_v}, {k_g})")));
        }
        Ok(LinearScaling { k_v, k_g })
    }
}

/// Achievable conductance range `[G_off, G_on]` in siemens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductanceWindow {
    g_off: f64,
    g_on: f64,
    g_avg: f64,
}

impl ConductanceWindow {
    pub fn new(g_off: f64, g_on: f64) -> Result<Self> {
        if !(g_off > 0.0 && g_off < g_on && g_on.is_finite()) {
            return Err(Error::param(MODULE, format!("need 0 < G_off < G_on, got [{g_off}, {g_on}]")));
        }
        Ok(ConductanceWindow { g_off, g_on, g_avg: (g_off + g_on) / 2.0 })
    }

    pub fn from_ratio(g_off: f64, on_off_ratio: f64) -> Result<Self> {
        Self::new(g_off, g_off * on_off_ratio)
    }

    #[inline]
    pub fn g_off(&self) -> f64 {
        self.g_off
    }

    #[inline]
    pub fn g_on(&self) -> f64 {
        self.g_on
    }

    #[inline]
    pub fn g_avg(&self) -> f64 {
        self.g_avg
    }

    #[inline]
    pub fn span(&self) -> f64 {
        self.g_on - self.g_off
    }

    #[inline]
    pub fn clip(&self, g: f64) -> f64 {
        g.clamp(self.g_off, self.g_on)
    }

    #[inline]
    pub fn contains(&self, g: f64) -> bool {
        (self.g_off..=self.g_on).contains(&g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MappingVariant {
    DifferentialPair,
    Naive,
    NonlinearPower { exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingScheme {
    pub variant: MappingVariant,
    pub window: ConductanceWindow,
    pub scaling: LinearScaling,
    w_min: f64,
    w_max: f64,
}

impl MappingScheme {
    /// Differential pair using the full window: `k_G = (G_on − G_off)/w_max_abs`.
    pub fn differential_pair(window: ConductanceWindow, k_v: f64, w_max_abs: f64) -> Result<Self> {
        if !(w_max_abs > 0.0 && w_max_abs.is_finite()) {
            return Err(Error::param(MODULE, format!("w_max_abs must be positive, got {w_max_abs}")));
        }
        Ok(MappingScheme {
            variant: MappingVariant::DifferentialPair,
            window,
            scaling: LinearScaling::new(k_v, window.span() / w_max_abs)?,
            w_min: -w_max_abs,
            w_max: w_max_abs,
        })
    }

    /// Single-conductance linear map of `[w_min, w_max]` onto the window.
    pub fn naive(window: ConductanceWindow, k_v: f64, w_min: f64, w_max: f64) -> Result<Self> {
        Self::single(MappingVariant::Naive, window, k_v, w_min, w_max)
    }

    /// Like [`naive`](Self::naive) but the normalised weight is raised to `exponent`.
    pub fn nonlinear_power(
        window: ConductanceWindow,
        k_v: f64,
        w_min: f64,
        w_max: f64,
        exponent: f64,
    ) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::param(MODULE, format!("power-law exponent must be positive, got {exponent}")));
        }
        Self::single(MappingVariant::NonlinearPower { exponent }, window, k_v, w_min, w_max)
    }

    fn single(variant: MappingVariant, window: ConductanceWindow, k_v: f64, w_min: f64, w_max: f64) -> Result<Self> {
        // w = 0 must be representable so the reference column can encode it
        if !(w_min < w_max && w_min <= 0.0 && w_max >= 0.0 && w_min.is_finite() && w_max.is_finite()) {
            return Err(Error::param(MODULE, format!("need w_min <= 0 <= w_max, w_min < w_max; got [{w_min}, {w_max}]")));
        }
        Ok(MappingScheme {
            variant,
            window,
            scaling: LinearScaling::new(k_v, window.span() / (w_max - w_min))?,
            w_min,
            w_max,
        })
    }

    /// Override `k_G` for a differential pair; must satisfy `k_G·w_max_abs ≤ G_on − G_off`.
    pub fn with_k_g(mut self, k_g: f64) -> Result<Self> {
        if self.variant != MappingVariant::DifferentialPair {
            return Err(Error::param(MODULE, "k_G is derived from the weight range for single-device schemes"));
        }
        self.scaling = LinearScaling::new(self.scaling.k_v, k_g)?;
        if k_g * self.w_max_abs() > self.window.span() * (1.0 + 1e-12) {
            return Err(Error::param(
                MODULE,
                format!("k_G·w_max_abs = {} exceeds G_on − G_off = {}", k_g * self.w_max_abs(), self.window.span()),
            ));
        }
        Ok(self)
    }

    pub fn with_k_v(mut self, k_v: f64) -> Result<Self> {
        self.scaling = LinearScaling::new(k_v, self.scaling.k_g)?;
        Ok(self)
    }

    pub fn w_min(&self) -> f64 {
        self.w_min
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    pub fn w_max_abs(&self) -> f64 {
        self.w_min.abs().max(self.w_max.abs())
    }

    pub fn k_g(&self) -> f64 {
        self.scaling.k_g
    }

    pub fn k_v(&self) -> f64 {
        self.scaling.k_v
    }

    pub fn is_differential(&self) -> bool {
        self.variant == MappingVariant::DifferentialPair
    }

    /// Weight a pair of stored conductances represents under the linear decode.
    #[inline]
    pub fn effective_weight(&self, g_signal: f64, g_reference: f64) -> f64 {
        (g_signal - g_reference) / self.scaling.k_g
    }
}

pub fn encode_inputs(x: &[f64], scaling: &LinearScaling) -> Vec<f64> {
    x.iter().map(|&v| scaling.k_v * v).collect()
}

/// `G± = G_avg ± k_G·w/2`.
///
/// The larger member is computed first and the smaller one as `2·G_avg` minus
/// it, which makes `G₊ + G₋ == 2·G_avg` hold exactly in floating point.
pub fn weights_to_diff_pair(w: &Matrix, scheme: &MappingScheme) -> Result<(Matrix, Matrix)> {
    if scheme.variant != MappingVariant::DifferentialPair {
        return Err(Error::param(MODULE, "weights_to_diff_pair requires the differential-pair scheme"));
    }
    let win = scheme.window;
    let two_avg = 2.0 * win.g_avg();
    let w_max_abs = scheme.w_max_abs();
    let mut g_plus = Matrix::zeros(w.rows(), w.cols());
    let mut g_minus = Matrix::zeros(w.rows(), w.cols());
    for ((i, j), wij) in w.iter_indexed() {
        if !(wij.abs() <= w_max_abs) {
            return Err(Error::range(
                MODULE,
                format!("weight ({i}, {j}) = {wij} outside ±{w_max_abs}"),
            ));
        }
        let half = scheme.k_g() * wij.abs() / 2.0;
        let high = win.clip(win.g_avg() + half);
        let low = win.clip(two_avg - high);
        let (gp, gm) = if wij >= 0.0 { (high, low) } else { (low, high) };
        g_plus[(i, j)] = gp;
        g_minus[(i, j)] = gm;
    }
    Ok((g_plus, g_minus))
}

/// Single-device mapping; returns the conductances and the reference
/// conductance that encodes `w = 0`.
pub fn weights_to_naive(w: &Matrix, scheme: &MappingScheme) -> Result<(Matrix, f64)> {
    let exponent = match scheme.variant {
        MappingVariant::Naive => 1.0,
        MappingVariant::NonlinearPower { exponent } => exponent,
        MappingVariant::DifferentialPair => {
            return Err(Error::param(MODULE, "weights_to_naive requires a single-device scheme"))
        }
    };
    let win = scheme.window;
    let (lo, hi) = (scheme.w_min, scheme.w_max);
    let to_g = |v: f64| {
        let u = (v - lo) / (hi - lo);
        let u = if exponent == 1.0 { u } else { u.powf(exponent) };
        win.clip(win.g_off() + win.span() * u)
    };
    let mut g = Matrix::zeros(w.rows(), w.cols());
    for ((i, j), wij) in w.iter_indexed() {
        if !(lo..=hi).contains(&wij) {
            return Err(Error::range(MODULE, format!("weight ({i}, {j}) = {wij} outside [{lo}, {hi}]")));
        }
        g[(i, j)] = to_g(wij);
    }
    Ok((g, to_g(0.0)))
}

/// `y = (I₊ − I₋)/(k_V·k_G)`.
pub fn decode_outputs(i_plus: &[f64], i_minus: &[f64], scaling: &LinearScaling) -> Result<Vec<f64>> {
    if i_plus.len() != i_minus.len() {
        return Err(Error::shape(MODULE, format!("current vectors of length {} and {}", i_plus.len(), i_minus.len())));
    }
    let denom = scaling.k_v * scaling.k_g;
    Ok(i_plus.iter().zip(i_minus).map(|(p, m)| (p - m) / denom).collect())
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pair_sum_is_exact(g_off in 1e-6f64..1e-3, ratio in 1.5f64..1e4, w_max in 0.01f64..10.0,
                             frac in prop::collection::vec(-1.0f64..=1.0, 1..40)) {
            let win = ConductanceWindow::from_ratio(g_off, ratio).unwrap();
            let scheme = MappingScheme::differential_pair(win, 0.1, w_max).unwrap();
            let w = Matrix::from_vec(1, frac.len(), frac.iter().map(|f| f * w_max * 0.999).collect()).unwrap();
            let (gp, gm) = weights_to_diff_pair(&w, &scheme).unwrap();
            for (a, b) in gp.as_slice().iter().zip(gm.as_slice()) {
                prop_assert_eq!(a + b, 2.0 * win.g_avg());
                prop_assert!(win.contains(*a) && win.contains(*b));
            }
        }
    }
}
