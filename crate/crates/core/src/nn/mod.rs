//! Perceptron and multilayer-perceptron engine with exact and
//! crossbar-backed forward passes.

mod data;
mod train;

pub use data::{builtin_digits, Dataset, DIGIT_CLASSES, DIGIT_SIDE};
pub use train::{gradients, loss_value, sensitivity, train_sgd, Loss, NoiseMode, NoiseScale, SensitivityMap, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::crossbar::{self, Crossbar, CrossbarConfig, Lineage, NonidealityConfig, ReadConfig};
use crate::devices::DeviceModel;
use crate::error::{Error, Result};
use crate::interconnect::{LineResistanceParams, TileSpec};
use crate::mapping::{MappingScheme, MappingVariant};
use crate::mitigation::Permutation;
use crate::numeric::{matvec_ref, Matrix, RandomStream};
use crate::par;

const MODULE: &str = "nn";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Logistic,
    Relu,
    Softmax,
    Identity,
    Step,
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

impl Activation {
    pub fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Logistic => z.iter().map(|&v| logistic(v)).collect(),
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Softmax => softmax(z),
            Activation::Identity => z.to_vec(),
            Activation::Step => z.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Pull `dL/dy` back to `dL/dz` given the pre-activation `z` and output `y`.
    /// The step function has zero derivative almost everywhere.
    pub fn backward(self, z: &[f64], y: &[f64], grad_y: &[f64]) -> Vec<f64> {
        match self {
            Activation::Logistic => y.iter().zip(grad_y).map(|(y, g)| g * y * (1.0 - y)).collect(),
            Activation::Relu => z.iter().zip(grad_y).map(|(z, g)| if *z > 0.0 { *g } else { 0.0 }).collect(),
            Activation::Softmax => {
                let dot: f64 = y.iter().zip(grad_y).map(|(a, b)| a * b).sum();
                y.iter().zip(grad_y).map(|(y, g)| y * (g - dot)).collect()
            }
            Activation::Identity => grad_y.to_vec(),
            Activation::Step => vec![0.0; z.len()],
        }
    }
}

/// Single-layer threshold unit: 1 when `w·x + b > 0`.
pub fn perceptron(x: &[f64], w: &[f64], b: f64) -> Result<u8> {
    if x.len() != w.len() {
        return Err(Error::shape(MODULE, format!("{} inputs vs {} weights", x.len(), w.len())));
    }
    let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
    Ok(u8::from(z > 0.0))
}

/// Fully connected layer. `weights` is `(inputs + 1) × outputs`; the last row
/// holds the biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, activation: Activation) -> Result<Self> {
        if weights.rows() < 2 || weights.cols() < 1 {
            return Err(Error::shape(MODULE, "a layer needs at least one input row plus the bias row"));
        }
        Ok(DenseLayer { weights, activation })
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows() - 1
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }
}

/// Input vector with the constant bias neuron appended.
pub fn with_bias(x: &[f64]) -> Vec<f64> {
    let mut a = Vec::with_capacity(x.len() + 1);
    a.extend_from_slice(x);
    a.push(1.0);
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlp")]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

#[derive(Deserialize)]
struct RawMlp {
    layers: Vec<DenseLayer>,
}

impl TryFrom<RawMlp> for Mlp {
    type Error = Error;

    fn try_from(raw: RawMlp) -> Result<Self> {
        Mlp::from_layers(raw.layers)
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape(MODULE, "network has no layers"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape(
                    MODULE,
                    format!("layer {k} emits {} values but layer {} takes {}", pair[0].outputs(), k + 1, pair[1].inputs()),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    /// Glorot-uniform weights `U(±√(6/(fan_in + fan_out)))`, zero biases.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, stream: &RandomStream) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::shape(MODULE, format!("invalid layer sizes {sizes:?}")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, pair)| {
                let (m, n) = (pair[0], pair[1]);
                let limit = (6.0 / (m + n) as f64).sqrt();
                let mut s = stream.fork(k as u64);
                let w = Matrix::from_fn(m + 1, n, |i, _| if i < m { s.uniform_in(-limit, limit) } else { 0.0 });
                DenseLayer::new(w, if k == last { output } else { hidden })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers)
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_size()).chain(self.layers.iter().map(|l| l.outputs())).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.rows() * l.weights.cols()).sum()
    }

    /// All weights flattened layer by layer, row-major.
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.as_slice().iter().copied()).collect()
    }

    pub fn set_flat_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::shape(MODULE, format!("{} values for {} parameters", values.len(), self.parameter_count())));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::shape(MODULE, format!("input length {} vs network input {}", x.len(), self.input_size())));
        }
        Ok(())
    }

    /// Exact forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in &self.layers {
            let z = matvec_ref(&with_bias(&a), &l.weights)?;
            a = l.activation.apply(&z);
        }
        Ok(a)
    }

    pub fn predict_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        let rows = par::try_map_indexed(inputs.rows(), |i| self.forward(inputs.row(i)))?;
        Matrix::from_vec(inputs.rows(), self.output_size(), rows.concat())
    }
}

/// Anything that maps an input vector to an output vector. `read_index`
/// addresses the random draws of stochastic backends and is ignored by
/// deterministic ones.
pub trait Model: Sync {
    fn predict(&self, x: &[f64], read_index: u64) -> Result<Vec<f64>>;
    fn output_size(&self) -> usize;
}

impl Model for Mlp {
    fn predict(&self, x: &[f64], _read_index: u64) -> Result<Vec<f64>> {
        self.forward(x)
    }

    fn output_size(&self) -> usize {
        Mlp::output_size(self)
    }
}

/// Hardware used to deploy every layer of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub device: DeviceModel,
    pub mapping: MappingVariant,
    pub nonidealities: NonidealityConfig,
    pub interconnect: LineResistanceParams,
    pub tiles: Option<TileSpec>,
    pub read: ReadConfig,
    /// Largest input magnitude the drivers represent; it maps to `V_read`.
    /// Larger activations saturate.
    pub input_max: f64,
}

impl HardwareSpec {
    /// Differential pairs, every nonideality off, ideal wires, `V_read` 0.2 V.
    pub fn ideal(device: DeviceModel) -> Self {
        HardwareSpec {
            device,
            mapping: MappingVariant::DifferentialPair,
            nonidealities: NonidealityConfig::default(),
            interconnect: LineResistanceParams::ideal(),
            tiles: None,
            read: ReadConfig::amplitude(0.2),
            input_max: 1.0,
        }
    }

    pub fn k_v(&self) -> f64 {
        self.read.v_read / self.input_max
    }

    /// Crossbar configuration for one weight matrix; the weight range is
    /// fitted to the matrix's largest magnitude.
    pub fn layer_config(&self, w: &Matrix) -> Result<CrossbarConfig> {
        if !(self.input_max > 0.0 && self.input_max.is_finite()) {
            return Err(Error::param(MODULE, format!("input_max must be positive, got {}", self.input_max)));
        }
        let w_max = match w.max_abs() {
            m if m > 0.0 => m,
            _ => 1.0,
        };
        let window = self.device.window();
        let k_v = self.k_v();
        let scheme = match self.mapping {
            MappingVariant::DifferentialPair => MappingScheme::differential_pair(window, k_v, w_max)?,
            MappingVariant::Naive => MappingScheme::naive(window, k_v, -w_max, w_max)?,
            MappingVariant::NonlinearPower { exponent } => {
                MappingScheme::nonlinear_power(window, k_v, -w_max, w_max, exponent)?
            }
        };
        Ok(CrossbarConfig {
            scheme,
            device: self.device.clone(),
            nonidealities: self.nonidealities,
            interconnect: self.interconnect,
            tiles: self.tiles,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProgrammedLayer {
    pub crossbar: Crossbar,
    /// `row_order.forward()[p]` is the logical input placed on physical row `p`.
    pub row_order: Option<Permutation>,
    pub activation: Activation,
}

/// Network whose layers are read through programmed crossbars.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawCrossbarMlp")]
pub struct CrossbarMlp {
    pub layers: Vec<ProgrammedLayer>,
    pub read: ReadConfig,
    pub input_max: f64,
}

#[derive(Deserialize)]
struct RawCrossbarMlp {
    layers: Vec<ProgrammedLayer>,
    read: ReadConfig,
    input_max: f64,
}

impl TryFrom<RawCrossbarMlp> for CrossbarMlp {
    type Error = Error;

    fn try_from(raw: RawCrossbarMlp) -> Result<Self> {
        if raw.layers.is_empty() {
            return Err(Error::shape(MODULE, "network has no layers"));
        }
        for (k, pair) in raw.layers.windows(2).enumerate() {
            if pair[0].crossbar.cols() + 1 != pair[1].crossbar.rows() {
                return Err(Error::shape(MODULE, format!("layer {k} feeds {} rows to layer {}", pair[0].crossbar.cols(), k + 1)));
            }
        }
        if let Some(k) = raw.layers.iter().position(|l| l.row_order.as_ref().is_some_and(|p| p.len() != l.crossbar.rows())) {
            return Err(Error::shape(MODULE, format!("row order of layer {k} does not match its rows")));
        }
        if !(raw.input_max > 0.0 && raw.input_max.is_finite()) {
            return Err(Error::param(MODULE, format!("input_max must be positive, got {}", raw.input_max)));
        }
        let read = ReadConfig::new(raw.read.v_read, raw.read.n_avg, raw.read.encoding)?;
        Ok(CrossbarMlp { layers: raw.layers, read, input_max: raw.input_max })
    }
}

impl CrossbarMlp {
    /// Program one crossbar per layer. Layer `k` draws from stream
    /// `(lineage.seed, fork(lineage.stream_id, k))`.
    pub fn program(net: &Mlp, spec: &HardwareSpec, lineage: Lineage) -> Result<Self> {
        Self::program_ordered(net, spec, lineage, &vec![None; net.layers.len()])
    }

    /// Like [`program`](Self::program) with an optional physical row order per layer.
    pub fn program_ordered(
        net: &Mlp,
        spec: &HardwareSpec,
        lineage: Lineage,
        row_orders: &[Option<Permutation>],
    ) -> Result<Self> {
        if row_orders.len() != net.layers.len() {
            return Err(Error::shape(MODULE, format!("{} row orders for {} layers", row_orders.len(), net.layers.len())));
        }
        let base = lineage.stream();
        let layers = net
            .layers
            .iter()
            .zip(row_orders)
            .enumerate()
            .map(|(k, (layer, order))| {
                let w = match order {
                    Some(p) => {
                        if p.len() != layer.weights.rows() {
                            return Err(Error::shape(
                                MODULE,
                                format!("row order of length {} for {} rows", p.len(), layer.weights.rows()),
                            ));
                        }
                        p.permute_rows(&layer.weights)?
                    }
                    None => layer.weights.clone(),
                };
                let config = spec.layer_config(&w)?;
                let sub = Lineage { seed: lineage.seed, stream_id: base.fork(k as u64).stream_id() };
                let crossbar = crossbar::program(&w, &config, sub).map_err(|e| e.at(format!("layer {k}")))?;
                Ok(ProgrammedLayer { crossbar, row_order: order.clone(), activation: layer.activation })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CrossbarMlp { layers, read: spec.read, input_max: spec.input_max })
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].crossbar.rows() - 1
    }

    pub fn forward(&self, x: &[f64], read_index: u64) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(Error::shape(MODULE, format!("input length {} vs network input {}", x.len(), self.input_size())));
        }
        let n_layers = self.layers.len() as u64;
        let mut a = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let aug: Vec<f64> =
                with_bias(&a).into_iter().map(|v| v.clamp(-self.input_max, self.input_max)).collect();
            let physical = match &layer.row_order {
                Some(p) => p.apply(&aug)?,
                None => aug,
            };
            let index = read_index.wrapping_mul(n_layers).wrapping_add(k as u64);
            let z = layer.crossbar.vmm(&physical, &self.read, index).map_err(|e| e.at(format!("layer {k}")))?;
            a = layer.activation.apply(&z);
        }
        Ok(a)
    }

    /// Outputs for every row of `inputs`; sample `i` uses read index `offset + i`.
    pub fn predict_batch(&self, inputs: &Matrix, offset: u64) -> Result<Matrix> {
        let rows = par::try_map_indexed(inputs.rows(), |i| self.forward(inputs.row(i), offset + i as u64))?;
        Matrix::from_vec(inputs.rows(), self.output_size(), rows.concat())
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].crossbar.cols()
    }
}

impl Model for CrossbarMlp {
    fn predict(&self, x: &[f64], read_index: u64) -> Result<Vec<f64>> {
        self.forward(x, read_index)
    }

    fn output_size(&self) -> usize {
        CrossbarMlp::output_size(self)
    }
}

/// Mean of the members' outputs.
pub fn ensemble_predict(members: &[&dyn Model], x: &[f64], read_index: u64) -> Result<Vec<f64>> {
    let Some(first) = members.first() else {
        return Err(Error::shape(MODULE, "ensemble has no members"));
    };
    let n = first.output_size();
    if let Some(k) = members.iter().position(|m| m.output_size() != n) {
        return Err(Error::shape(MODULE, format!("member {k} emits {} outputs, member 0 emits {n}", members[k].output_size())));
    }
    let outputs = par::try_map_indexed(members.len(), |k| members[k].predict(x, read_index))?;
    let mut mean = vec![0.0; n];
    for out in &outputs {
        mean.iter_mut().zip(out).for_each(|(m, v)| *m += v);
    }
    let k = members.len() as f64;
    Ok(mean.into_iter().map(|v| v / k).collect())
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best }).0
}

/// Fraction of rows of `outputs` whose argmax equals the label.
pub fn accuracy(outputs: &Matrix, labels: &[usize]) -> Result<f64> {
    if outputs.rows() != labels.len() || labels.is_empty() {
        return Err(Error::shape(MODULE, format!("{} outputs for {} labels", outputs.rows(), labels.len())));
    }
    let hits = (0..outputs.rows()).filter(|&i| argmax(outputs.row(i)) == labels[i]).count();
    Ok(hits as f64 / labels.len() as f64)
}
