//! Experiment configuration: TOML schema, validation diagnostics and sweep
//! path resolution.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::de::{DeTable, DeValue};
use toml::{Table, Value};

use crate::crossbar::{DriftSpec, InputEncoding, NonidealityConfig, ProgrammingSpec, ReadConfig};
use crate::devices::{self, DeviceModel};
use crate::error::{Error, Result};
use crate::interconnect::{Biasing, LineResistanceParams, TileSpec};
use crate::mapping::MappingVariant;
use crate::mitigation::Placement;
use crate::nn::{Activation, HardwareSpec, Loss, NoiseMode, NoiseScale, TrainConfig, DIGIT_CLASSES, DIGIT_SIDE};
use crate::nonidealities::{D2DSpec, RTNParams, StuckMode, StuckSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub dataset: DatasetSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub device: DeviceSection,
    pub mapping: MappingSection,
    pub nonidealities: NonidealitySection,
    pub interconnect: InterconnectSection,
    pub read: ReadSection,
    pub mitigation: MitigationSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    /// `"builtin"` or a path to a comma-separated file, relative to the
    /// config file.
    pub source: String,
    /// Generator seed of the built-in digit set.
    pub builtin_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    /// Share of a file dataset held out as the test set (taken from the end).
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    /// Hidden layer widths; input and output widths come from the dataset.
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Agnostic,
    Aware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub noise: NoiseKind,
    pub sigma_w: f64,
    pub noise_scale: NoiseScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceSection {
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub on_off_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_off: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    DifferentialPair,
    Naive,
    NonlinearPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingSection {
    pub scheme: SchemeKind,
    /// Power-law exponent of `nonlinear_power`.
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NonidealitySection {
    pub quantization: Toggle,
    pub programming: ProgrammingSection,
    pub d2d: D2DSection,
    pub stuck: StuckSection,
    pub iv: IvSection,
    pub rtn: RtnSection,
    pub drift: DriftSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggle {
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgrammingSection {
    pub enabled: bool,
    pub max_pulses: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct D2DSection {
    pub enabled: bool,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StuckSection {
    pub enabled: bool,
    pub probability: f64,
    pub mode: StuckMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvSection {
    pub enabled: bool,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RtnSection {
    pub enabled: bool,
    pub delta: f64,
    pub tau_high: f64,
    pub tau_low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftSection {
    pub enabled: bool,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InterconnectSection {
    pub r_word: f64,
    pub r_bit: f64,
    /// Sets both `r_word` and `r_bit` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_line: Option<f64>,
    pub biasing: Biasing,
    /// Largest tile; 0 leaves that dimension untiled.
    pub tile_rows: usize,
    pub tile_cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    Amplitude,
    PulseWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadSection {
    pub v_read: f64,
    pub n_avg: usize,
    pub encoding: EncodingKind,
    /// Pulse duration resolution; 0 is continuous.
    pub pulse_bits: u32,
    pub input_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingKind {
    None,
    Sensitivity,
    Intensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MitigationSection {
    pub compensate_stuck: bool,
    pub row_ordering: OrderingKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
    /// Independently programmed copies averaged at read time.
    pub ensemble_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    /// Dotted path of a numeric field, e.g. `"nonidealities.d2d.sigma"`.
    pub parameter: String,
    pub values: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            repetitions: 1,
            dataset: DatasetSection::default(),
            network: NetworkSection::default(),
            training: TrainingSection::default(),
            device: DeviceSection::default(),
            mapping: MappingSection::default(),
            nonidealities: NonidealitySection::default(),
            interconnect: InterconnectSection::default(),
            read: ReadSection::default(),
            mitigation: MitigationSection::default(),
            sweep: None,
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { source: "builtin".into(), builtin_seed: 0, classes: None, test_fraction: 0.25 }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection { hidden: vec![16], hidden_activation: Activation::Logistic, output_activation: Activation::Softmax }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            eta: 0.5,
            epochs: 30,
            batch_size: 20,
            loss: Loss::CrossEntropy,
            noise: NoiseKind::None,
            sigma_w: 0.1,
            noise_scale: NoiseScale::Absolute,
        }
    }
}

impl Default for DeviceSection {
    fn default() -> Self {
        DeviceSection { preset: "RRAM".into(), on_off_ratio: None, g_off: None, bits: None }
    }
}

impl Default for MappingSection {
    fn default() -> Self {
        MappingSection { scheme: SchemeKind::DifferentialPair, exponent: 1.0 }
    }
}

impl Default for ProgrammingSection {
    fn default() -> Self {
        ProgrammingSection { enabled: false, max_pulses: 100 }
    }
}

impl Default for D2DSection {
    fn default() -> Self {
        D2DSection { enabled: false, sigma: 0.1 }
    }
}

impl Default for StuckSection {
    fn default() -> Self {
        StuckSection { enabled: false, probability: 0.01, mode: StuckMode::AtRandomLevel }
    }
}

impl Default for IvSection {
    fn default() -> Self {
        IvSection { enabled: false, gamma: 2.0 }
    }
}

impl Default for RtnSection {
    fn default() -> Self {
        RtnSection { enabled: false, delta: 0.05, tau_high: 2.0, tau_low: 2.0 }
    }
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection { enabled: false, time_s: 3600.0 }
    }
}

impl Default for ReadSection {
    fn default() -> Self {
        ReadSection {
            v_read: 0.2,
            n_avg: 1,
            encoding: EncodingKind::Amplitude,
            pulse_bits: InputEncoding::DEFAULT_PULSE_BITS,
            input_max: 1.0,
        }
    }
}

impl Default for MitigationSection {
    fn default() -> Self {
        MitigationSection { compensate_stuck: false, row_ordering: OrderingKind::None, placement: None, ensemble_size: 1 }
    }
}

/// One validation finding. `line` is 1-based when the offending key appears
/// in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Every key the schema accepts, with a representative value of the right type.
fn schema() -> Table {
    let mut full = ExperimentConfig::default();
    full.dataset.classes = Some(DIGIT_CLASSES);
    full.device.on_off_ratio = Some(10.0);
    full.device.g_off = Some(devices::REFERENCE_G_OFF);
    full.device.bits = Some(1);
    full.interconnect.r_line = Some(0.0);
    full.mitigation.placement = Some(Placement::TowardDrive);
    full.sweep = Some(SweepSection { parameter: String::new(), values: vec![0.0] });
    match Value::try_from(&full) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("config serializes to a table"),
    }
}

fn lookup<'a>(table: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut v = table.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line of every key in the document, by dotted path.
fn key_lines(text: &str, table: &DeTable<'_>, prefix: &str, out: &mut Vec<(String, usize)>) {
    for (k, v) in table.iter() {
        let path = if prefix.is_empty() { k.get_ref().to_string() } else { format!("{prefix}.{}", k.get_ref()) };
        out.push((path.clone(), line_of(text, k.span().start)));
        if let DeValue::Table(t) = v.get_ref() {
            key_lines(text, t, &path, out);
        }
    }
}

fn unknown_keys(doc: &Table, schema: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in doc {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (schema.get(k), v) {
            (None, _) => out.push(path),
            (Some(Value::Table(s)), Value::Table(d)) => unknown_keys(d, s, &path, out),
            _ => {}
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate. Fails with every diagnostic joined when any is found.
    pub fn from_toml(text: &str) -> Result<Self> {
        let (config, diags) = Self::check_text(text, None);
        match config {
            Some(c) if diags.is_empty() => Ok(c),
            _ => Err(Error::Config(diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_config(path)?;
        let (config, diags) = Self::check_text(&text, path.parent());
        match config {
            Some(c) if diags.is_empty() => Ok(c),
            _ => Err(Error::Config(format!(
                "{}: {}",
                path.display(),
                diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
            ))),
        }
    }

    /// Canonical TOML text; parsing it yields an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serialization failed: {e}")))
    }

    /// Hex SHA-256 of the canonical text.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Parse `text` and collect every schema violation. `base` resolves a
    /// relative dataset path; without it the file is not checked.
    pub fn check_text(text: &str, base: Option<&Path>) -> (Option<Self>, Vec<Diagnostic>) {
        let mut diags = Vec::new();
        let spanned = match DeTable::parse(text) {
            Ok(t) => t,
            Err(e) => {
                let line = e.span().map(|s| line_of(text, s.start));
                diags.push(Diagnostic { line, field: "document".into(), message: e.message().trim().to_string() });
                return (None, diags);
            }
        };
        let mut lines = Vec::new();
        key_lines(text, spanned.get_ref(), "", &mut lines);
        let line_for = |path: &str| lines.iter().find(|(p, _)| p == path).map(|&(_, l)| l);

        let doc: Table = match toml::from_str(text) {
            Ok(t) => t,
            Err(e) => {
                diags.push(Diagnostic { line: None, field: "document".into(), message: e.message().to_string() });
                return (None, diags);
            }
        };
        let mut unknown = Vec::new();
        unknown_keys(&doc, &schema(), "", &mut unknown);
        for path in unknown {
            diags.push(Diagnostic { line: line_for(&path), field: path, message: "unknown field".into() });
        }

        let config: Self = match toml::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                let line = e.span().map(|s| line_of(text, s.start));
                diags.push(Diagnostic { line, field: "document".into(), message: e.message().trim().to_string() });
                return (None, diags);
            }
        };
        for (field, message) in config.range_violations(base) {
            diags.push(Diagnostic { line: line_for(&field), field, message });
        }
        if let Some(sweep) = &config.sweep {
            for (field, message) in config.sweep_violations(sweep) {
                diags.push(Diagnostic { line: line_for(&field), field, message });
            }
        }
        (Some(config), diags)
    }

    fn range_violations(&self, base: Option<&Path>) -> Vec<(String, String)> {
        let mut v = Vec::new();
        let mut need = |ok: bool, field: &str, msg: String| {
            if !ok {
                v.push((field.to_string(), msg));
            }
        };
        let pos = |x: f64| x > 0.0 && x.is_finite();
        let nonneg = |x: f64| x >= 0.0 && x.is_finite();

        if self.seed > i64::MAX as u64 {
            need(false, "seed", format!("must fit a signed 64-bit integer, got {}", self.seed));
        }
        need(self.repetitions >= 1, "repetitions", format!("must be at least 1, got {}", self.repetitions));

        let d = &self.dataset;
        need(!d.source.is_empty(), "dataset.source", "must be \"builtin\" or a file path".into());
        if d.source != "builtin" {
            if let Some(base) = base {
                let p = resolve(base, &d.source);
                need(p.is_file(), "dataset.source", format!("{} is not a readable file", p.display()));
            }
        }
        if let Some(c) = d.classes {
            need(c >= 2, "dataset.classes", format!("must be at least 2, got {c}"));
        }
        need(
            d.test_fraction > 0.0 && d.test_fraction < 1.0,
            "dataset.test_fraction",
            format!("must be in (0, 1), got {}", d.test_fraction),
        );

        let n = &self.network;
        need(n.hidden.iter().all(|&h| h >= 1), "network.hidden", "layer widths must be at least 1".into());
        need(
            n.hidden_activation != Activation::Softmax,
            "network.hidden_activation",
            "softmax is only supported on the output layer".into(),
        );
        need(
            !(self.training.loss == Loss::CrossEntropy
                && !matches!(n.output_activation, Activation::Softmax | Activation::Logistic)),
            "network.output_activation",
            "cross-entropy needs a softmax or logistic output".into(),
        );
        need(
            n.output_activation != Activation::Step && n.hidden_activation != Activation::Step,
            "network",
            "step activations are not differentiable and cannot be trained".into(),
        );

        let t = &self.training;
        need(nonneg(t.eta), "training.eta", format!("must be non-negative, got {}", t.eta));
        need(t.epochs >= 1, "training.epochs", format!("must be at least 1, got {}", t.epochs));
        need(t.batch_size >= 1, "training.batch_size", format!("must be at least 1, got {}", t.batch_size));
        need(nonneg(t.sigma_w), "training.sigma_w", format!("must be non-negative, got {}", t.sigma_w));

        match self.device_model() {
            Err(Error::UnknownPreset { valid, .. }) => {
                need(false, "device.preset", format!("unknown preset {:?}; valid presets: {valid}", self.device.preset))
            }
            Err(e) => {
                let field = if self.device.g_off.is_some_and(|g| !pos(g)) {
                    "device.g_off"
                } else if self.device.bits == Some(0) {
                    "device.bits"
                } else {
                    "device.on_off_ratio"
                };
                need(false, field, e.to_string())
            }
            Ok(_) => {}
        }

        let m = &self.mapping;
        need(pos(m.exponent), "mapping.exponent", format!("must be positive, got {}", m.exponent));

        let ni = &self.nonidealities;
        need(ni.programming.max_pulses >= 1, "nonidealities.programming.max_pulses", "must be at least 1".into());
        need(nonneg(ni.d2d.sigma), "nonidealities.d2d.sigma", format!("must be non-negative, got {}", ni.d2d.sigma));
        need(
            (0.0..=1.0).contains(&ni.stuck.probability),
            "nonidealities.stuck.probability",
            format!("must be in [0, 1], got {}", ni.stuck.probability),
        );
        need(nonneg(ni.iv.gamma), "nonidealities.iv.gamma", format!("must be non-negative, got {}", ni.iv.gamma));
        need(nonneg(ni.rtn.delta), "nonidealities.rtn.delta", format!("must be non-negative, got {}", ni.rtn.delta));
        need(pos(ni.rtn.tau_high), "nonidealities.rtn.tau_high", format!("must be positive, got {}", ni.rtn.tau_high));
        need(pos(ni.rtn.tau_low), "nonidealities.rtn.tau_low", format!("must be positive, got {}", ni.rtn.tau_low));
        need(
            ni.drift.time_s >= devices::DRIFT_T0 && ni.drift.time_s.is_finite(),
            "nonidealities.drift.time_s",
            format!("must be at least {} s, got {}", devices::DRIFT_T0, ni.drift.time_s),
        );

        let ic = &self.interconnect;
        need(nonneg(ic.r_word), "interconnect.r_word", format!("must be non-negative, got {}", ic.r_word));
        need(nonneg(ic.r_bit), "interconnect.r_bit", format!("must be non-negative, got {}", ic.r_bit));
        if let Some(r) = ic.r_line {
            need(nonneg(r), "interconnect.r_line", format!("must be non-negative, got {r}"));
        }

        let r = &self.read;
        need(pos(r.v_read), "read.v_read", format!("must be positive, got {}", r.v_read));
        need(r.n_avg >= 1, "read.n_avg", format!("must be at least 1, got {}", r.n_avg));
        need(r.pulse_bits <= 52, "read.pulse_bits", format!("must be at most 52, got {}", r.pulse_bits));
        need(pos(r.input_max), "read.input_max", format!("must be positive, got {}", r.input_max));

        let mi = &self.mitigation;
        need(mi.ensemble_size >= 1, "mitigation.ensemble_size", format!("must be at least 1, got {}", mi.ensemble_size));
        need(
            !(mi.compensate_stuck && m.scheme != SchemeKind::DifferentialPair),
            "mitigation.compensate_stuck",
            "needs the differential_pair mapping scheme".into(),
        );
        v
    }

    fn sweep_violations(&self, sweep: &SweepSection) -> Vec<(String, String)> {
        let mut v = Vec::new();
        let schema = schema();
        match lookup(&schema, &sweep.parameter) {
            Some(Value::Integer(_) | Value::Float(_)) if !sweep.parameter.starts_with("sweep.") => {}
            Some(_) => v.push(("sweep.parameter".into(), format!("{:?} is not a numeric parameter", sweep.parameter))),
            None => v.push(("sweep.parameter".into(), format!("{:?} does not name a parameter", sweep.parameter))),
        }
        if sweep.values.is_empty() {
            v.push(("sweep.values".into(), "must list at least one value".into()));
        }
        if !v.is_empty() {
            return v;
        }
        let mut sorted = sweep.values.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            v.push(("sweep.values".into(), "values must be distinct".into()));
        }
        for (i, &x) in sweep.values.iter().enumerate() {
            match self.with_parameter(&sweep.parameter, x) {
                Ok(point) => {
                    for (field, msg) in point.range_violations(None) {
                        v.push((format!("sweep.values[{i}]"), format!("sets {field} which {msg}")));
                    }
                }
                Err(e) => v.push((format!("sweep.values[{i}]"), e.to_string())),
            }
        }
        v
    }

    /// Copy with the numeric field at `path` set to `value`. The sweep
    /// section is dropped from the result.
    pub fn with_parameter(&self, path: &str, value: f64) -> Result<Self> {
        let schema = schema();
        let leaf = match lookup(&schema, path) {
            Some(Value::Integer(_)) => {
                if !(value.fract() == 0.0 && value >= 0.0 && value <= i64::MAX as f64) {
                    return Err(Error::Config(format!("{path} takes a non-negative integer, got {value}")));
                }
                Value::Integer(value as i64)
            }
            Some(Value::Float(_)) => Value::Float(value),
            _ => return Err(Error::Config(format!("{path:?} is not a numeric parameter"))),
        };
        let mut base = self.clone();
        base.sweep = None;
        let mut doc = match Value::try_from(&base) {
            Ok(Value::Table(t)) => t,
            _ => return Err(Error::Config("config does not serialize to a table".into())),
        };
        let mut parts: Vec<&str> = path.split('.').collect();
        let last = parts.pop().unwrap_or_default();
        let mut table = &mut doc;
        for p in parts {
            table = table
                .entry(p)
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{path}: {p} is not a section")))?;
        }
        table.insert(last.to_string(), leaf);
        Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(format!("{path}: {}", e.message())))
    }

    /// Base config followed by one config per sweep value, in listed order.
    pub fn sweep_points(&self) -> Result<Vec<(f64, ExperimentConfig)>> {
        let Some(sweep) = &self.sweep else {
            return Err(Error::Config("no [sweep] section".into()));
        };
        sweep.values.iter().map(|&x| Ok((x, self.with_parameter(&sweep.parameter, x)?))).collect()
    }

    pub fn device_model(&self) -> Result<DeviceModel> {
        let mut d = devices::preset(&self.device.preset)?;
        if let Some(g) = self.device.g_off {
            d = d.with_g_off(g)?;
        }
        if let Some(r) = self.device.on_off_ratio {
            d = d.with_on_off_ratio(r)?;
        }
        if let Some(b) = self.device.bits {
            d = d.with_bits(b)?;
        }
        Ok(d)
    }

    pub fn nonideality_config(&self) -> Result<NonidealityConfig> {
        let ni = &self.nonidealities;
        Ok(NonidealityConfig {
            quantize: ni.quantization.enabled,
            programming: ni.programming.enabled.then_some(ProgrammingSpec { max_pulses: ni.programming.max_pulses }),
            d2d: if ni.d2d.enabled { Some(D2DSpec::new(ni.d2d.sigma)?) } else { None },
            stuck: if ni.stuck.enabled { Some(StuckSpec::new(ni.stuck.probability, ni.stuck.mode)?) } else { None },
            iv_gamma: if ni.iv.enabled { ni.iv.gamma } else { 0.0 },
            rtn: if ni.rtn.enabled { Some(RTNParams::new(ni.rtn.delta, ni.rtn.tau_high, ni.rtn.tau_low)?) } else { None },
            drift: ni.drift.enabled.then_some(DriftSpec { time_s: ni.drift.time_s }),
        })
    }

    pub fn hardware(&self) -> Result<HardwareSpec> {
        let ic = &self.interconnect;
        let (r_word, r_bit) = ic.r_line.map_or((ic.r_word, ic.r_bit), |r| (r, r));
        let tiles = match (ic.tile_rows, ic.tile_cols) {
            (0, 0) => None,
            (r, c) => Some(TileSpec::new(if r == 0 { usize::MAX } else { r }, if c == 0 { usize::MAX } else { c })?),
        };
        let encoding = match self.read.encoding {
            EncodingKind::Amplitude => InputEncoding::Amplitude,
            EncodingKind::PulseWidth => {
                InputEncoding::PulseWidth { bits: (self.read.pulse_bits > 0).then_some(self.read.pulse_bits) }
            }
        };
        Ok(HardwareSpec {
            device: self.device_model()?,
            mapping: match self.mapping.scheme {
                SchemeKind::DifferentialPair => MappingVariant::DifferentialPair,
                SchemeKind::Naive => MappingVariant::Naive,
                SchemeKind::NonlinearPower => MappingVariant::NonlinearPower { exponent: self.mapping.exponent },
            },
            nonidealities: self.nonideality_config()?,
            interconnect: LineResistanceParams { r_word, r_bit, biasing: ic.biasing },
            tiles,
            read: ReadConfig::new(self.read.v_read, self.read.n_avg, encoding)?,
            input_max: self.read.input_max,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.training;
        let noise = match t.noise {
            NoiseKind::None => NoiseMode::None,
            NoiseKind::Agnostic => NoiseMode::Agnostic { sigma_w: t.sigma_w, scale: t.noise_scale },
            NoiseKind::Aware => NoiseMode::Aware { hardware: Box::new(self.hardware()?) },
        };
        Ok(TrainConfig { eta: t.eta, epochs: t.epochs, batch_size: t.batch_size, loss: t.loss, noise, seed: self.seed })
    }

    /// Layer widths for a dataset with the given input and output sizes.
    pub fn layer_sizes(&self, inputs: usize, outputs: usize) -> Vec<usize> {
        let mut sizes = vec![inputs];
        sizes.extend(&self.network.hidden);
        sizes.push(outputs);
        sizes
    }

    pub fn dataset_path(&self, base: &Path) -> Option<PathBuf> {
        (self.dataset.source != "builtin").then(|| resolve(base, &self.dataset.source))
    }
}

fn resolve(base: &Path, source: &str) -> PathBuf {
    let p = Path::new(source);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub(crate) fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { module: "cli", detail: format!("{}: {e}", path.display()) })
}

/// Validate the file at `path`. An empty list means the config is runnable.
pub fn validate(path: &Path) -> Result<Vec<Diagnostic>> {
    let text = read_config(path)?;
    Ok(ExperimentConfig::check_text(&text, Some(path.parent().unwrap_or(Path::new(".")))).1)
}

/// Input and output widths of the built-in digit set.
pub const BUILTIN_SHAPE: (usize, usize) = (DIGIT_SIDE * DIGIT_SIDE, DIGIT_CLASSES);
