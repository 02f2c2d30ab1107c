//! Memory-technology presets, multilevel quantisation, pulse programming and
//! conductance drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::ConductanceWindow;
use crate::numeric::Matrix;

const MODULE: &str = "devices";

/// Reference `G_off` shared by all presets (10 µS).
pub const REFERENCE_G_OFF: f64 = 10e-6;

/// Reference time for the drift law, in seconds.
pub const DRIFT_T0: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suitability {
    No,
    Moderate,
    Yes,
}

/// How a device responds to programming pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProgrammingResponse {
    /// Step `α·(G_on − G)` up, `α·(G − G_off)` down.
    Saturating { alpha: f64 },
    /// Constant step `α·(G_on − G_off)` in either direction.
    Linear { alpha: f64 },
    /// Conductance cannot be tuned by pulses.
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub name: String,
    pub on_off_ratio: f64,
    /// Published on/off range the ratio was taken from.
    pub on_off_range: (f64, f64),
    pub g_off: f64,
    pub bits: u32,
    pub programming: ProgrammingResponse,
    pub drift_nu: f64,
    pub suitable_for_inference: Suitability,
    pub suitable_for_training: Suitability,
}

pub const PRESET_NAMES: [&str; 9] =
    ["NOR-flash", "NAND-flash", "RRAM", "PCM", "STT-MRAM", "FeRAM", "FeFET", "SOT-MRAM", "Li-ion"];

const LOW_LINEARITY_ALPHA: f64 = 0.1;

#[derive(Clone, Copy)]
enum Linearity {
    Low,
    None,
    High,
}

impl DeviceModel {
    pub fn g_on(&self) -> f64 {
        self.g_off * self.on_off_ratio
    }

    pub fn window(&self) -> ConductanceWindow {
        ConductanceWindow::from_ratio(self.g_off, self.on_off_ratio)
            .expect("device models keep on_off_ratio > 1 and g_off > 0")
    }

    /// Copy with a different on/off ratio, keeping `G_off`.
    pub fn with_on_off_ratio(mut self, ratio: f64) -> Result<Self> {
        if !(ratio > 1.0 && ratio.is_finite()) {
            return Err(Error::param(MODULE, format!("on/off ratio must exceed 1, got {ratio}")));
        }
        self.on_off_ratio = ratio;
        Ok(self)
    }

    pub fn with_g_off(mut self, g_off: f64) -> Result<Self> {
        if !(g_off > 0.0 && g_off.is_finite()) {
            return Err(Error::param(MODULE, format!("G_off must be positive, got {g_off}")));
        }
        self.g_off = g_off;
        Ok(self)
    }

    pub fn with_bits(mut self, bits: u32) -> Result<Self> {
        if bits < 1 {
            return Err(Error::param(MODULE, "bits must be at least 1"));
        }
        self.bits = bits;
        Ok(self)
    }

    pub fn linear_programming(&self) -> bool {
        matches!(self.programming, ProgrammingResponse::Linear { .. })
    }
}

fn build(
    name: &str,
    range: (f64, f64),
    bits: u32,
    linearity: Linearity,
    drift_nu: f64,
    training: Suitability,
    inference: Suitability,
) -> DeviceModel {
    let programming = match linearity {
        Linearity::Low => ProgrammingResponse::Saturating { alpha: LOW_LINEARITY_ALPHA },
        // one pulse moves exactly one multilevel step
        Linearity::High => ProgrammingResponse::Linear { alpha: 1.0 / ((1u64 << bits) - 1) as f64 },
        Linearity::None => ProgrammingResponse::Unsupported,
    };
    DeviceModel {
        name: name.to_string(),
        on_off_ratio: (range.0 * range.1).sqrt(),
        on_off_range: range,
        g_off: REFERENCE_G_OFF,
        bits,
        programming,
        drift_nu,
        suitable_for_inference: inference,
        suitable_for_training: training,
    }
}

/// Look up a technology preset by name (case-insensitive).
pub fn preset(name: &str) -> Result<DeviceModel> {
    use Linearity::*;
    use Suitability::{Moderate, No, Yes};
    let key = name.to_ascii_lowercase().replace(['_', ' '], "-");
    let model = match key.as_str() {
        "nor-flash" => build("NOR-flash", (1e4, 1e4), 2, Low, 0.0, No, Yes),
        "nand-flash" => build("NAND-flash", (1e4, 1e4), 4, Low, 0.0, No, Yes),
        "rram" => build("RRAM", (10.0, 1e2), 2, Low, 0.005, No, Moderate),
        "pcm" => build("PCM", (1e2, 1e4), 2, Low, 0.1, No, Yes),
        "stt-mram" => build("STT-MRAM", (1.5, 2.0), 1, None, 0.0, No, No),
        "feram" => build("FeRAM", (1e2, 1e3), 1, None, 0.0, No, No),
        "fefet" => build("FeFET", (5.0, 50.0), 5, Low, 0.0, Moderate, Yes),
        "sot-mram" => build("SOT-MRAM", (1.5, 2.0), 1, None, 0.0, No, No),
        "li-ion" => build("Li-ion", (40.0, 1e3), 10, High, 0.0, Yes, Yes),
        _ => {
            return Err(Error::UnknownPreset { name: name.to_string(), valid: PRESET_NAMES.join(", ") })
        }
    };
    Ok(model)
}

pub fn all_presets() -> Vec<DeviceModel> {
    PRESET_NAMES.iter().map(|n| preset(n).expect("preset table is complete")).collect()
}

/// Snap every entry to the nearest of `2^bits` evenly spaced levels spanning
/// the window. Ties go to the upper level.
pub fn quantize(g: &Matrix, window: &ConductanceWindow, bits: u32) -> Result<Matrix> {
    if bits < 1 {
        return Err(Error::param(MODULE, "quantisation needs at least 1 bit"));
    }
    if let Some(((i, j), v)) = g.iter_indexed().find(|(_, v)| !window.contains(*v)) {
        return Err(Error::range(MODULE, format!("conductance ({i}, {j}) = {v} outside window")));
    }
    if bits >= 52 {
        return Ok(g.clone());
    }
    let top = ((1u64 << bits) - 1) as f64;
    let step = window.span() / top;
    Ok(g.map(|v| {
        let level = ((v - window.g_off()) / step + 0.5).floor().min(top);
        if level == top {
            window.g_on()
        } else {
            window.g_off() + level * step
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgramOutcome {
    pub conductance: f64,
    pub pulses: u32,
}

/// Apply write pulses from `g_start` towards `g_target` until another pulse
/// would not bring the device closer (distance ≤ half the next step) or the
/// pulse budget runs out.
pub fn program_pulses(g_start: f64, g_target: f64, model: &DeviceModel, max_pulses: u32) -> Result<ProgramOutcome> {
    let win = model.window();
    for (label, v) in [("start", g_start), ("target", g_target)] {
        if !win.contains(v) {
            return Err(Error::range(
                MODULE,
                format!("{label} conductance {v} outside [{}, {}]", win.g_off(), win.g_on()),
            ));
        }
    }
    let step_for = |g: f64, up: bool| -> f64 {
        match model.programming {
            ProgrammingResponse::Saturating { alpha } => {
                if up {
                    alpha * (win.g_on() - g)
                } else {
                    alpha * (g - win.g_off())
                }
            }
            ProgrammingResponse::Linear { alpha } => alpha * win.span(),
            ProgrammingResponse::Unsupported => 0.0,
        }
    };
    if model.programming == ProgrammingResponse::Unsupported {
        return Err(Error::param(MODULE, format!("{} does not support pulse programming", model.name)));
    }
    let mut g = g_start;
    let mut pulses = 0;
    while pulses < max_pulses {
        let up = g_target > g;
        let step = step_for(g, up);
        if (g - g_target).abs() <= step / 2.0 || step == 0.0 {
            break;
        }
        g = win.clip(if up { g + step } else { g - step });
        pulses += 1;
    }
    Ok(ProgramOutcome { conductance: g, pulses })
}

/// Power-law drift `G·(t/t0)^(−ν)`, floored at `G_off`.
pub fn drift(g: f64, t: f64, model: &DeviceModel) -> Result<f64> {
    if !(t >= DRIFT_T0) {
        return Err(Error::param(MODULE, format!("drift time {t} s is before the reference time {DRIFT_T0} s")));
    }
    if model.drift_nu == 0.0 {
        return Ok(g);
    }
    Ok((g * (t / DRIFT_T0).powf(-model.drift_nu)).max(model.g_off))
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn quantize_idempotent_and_bounded(fracs in prop::collection::vec(0.0f64..=1.0, 1..32), bits in 1u32..12) {
            let win = ConductanceWindow::new(10e-6, 316e-6).unwrap();
            let g = Matrix::from_vec(1, fracs.len(), fracs.iter().map(|f| win.clip(win.g_off() + f * win.span())).collect()).unwrap();
            let q = quantize(&g, &win, bits).unwrap();
            prop_assert_eq!(&quantize(&q, &win, bits).unwrap(), &q);
            let bound = win.span() / (2.0 * ((1u64 << bits) - 1) as f64);
            for (a, b) in q.as_slice().iter().zip(g.as_slice()) {
                prop_assert!((a - b).abs() <= bound * (1.0 + 1e-9));
            }
        }

        #[test]
        fn pulses_stay_in_window(start in 0.0f64..=1.0, target in 0.0f64..=1.0, budget in 0u32..200, linear in any::<bool>()) {
            let m = if linear { preset("Li-ion").unwrap() } else { preset("PCM").unwrap() };
            let win = m.window();
            let s = win.g_off() + start * win.span();
            let t = win.g_off() + target * win.span();
            let out = program_pulses(s.min(win.g_on()), t.min(win.g_on()), &m, budget).unwrap();
            prop_assert!(win.contains(out.conductance));
            prop_assert!(out.pulses <= budget);
        }
    }
}
