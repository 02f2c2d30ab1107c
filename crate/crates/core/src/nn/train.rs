//! Backpropagation, mini-batch SGD with optional noise injection, and
//! weight-sensitivity maps.

use serde::{Deserialize, Serialize};

use super::{with_bias, Activation, CrossbarMlp, Dataset, HardwareSpec, Mlp, MODULE};
use crate::crossbar::Lineage;
use crate::error::{Error, Result};
use crate::numeric::{matvec_ref, Matrix, RandomStream};
use crate::par;

const KEY_SHUFFLE: u64 = 1;
const KEY_NOISE: u64 = 2;
const KEY_AWARE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `½·Σ(t − y)²` per sample.
    Mse,
    /// `−Σ t·ln y` per sample.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseMode {
    None,
    /// Fresh zero-mean Gaussian noise added to every weight on each sample's
    /// forward pass; the clean weights are updated.
    Agnostic {
        sigma_w: f64,
        #[serde(default)]
        scale: NoiseScale,
    },
    /// Forward pass through crossbars freshly programmed from the clean
    /// weights each mini-batch; gradients use the clean weights.
    Aware { hardware: Box<HardwareSpec> },
}

/// Unit of the agnostic noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// `sigma_w` is a standard deviation in weight units.
    #[default]
    Absolute,
    /// `sigma_w` is a fraction of the layer's current `max |W|`, the scale
    /// that sets a crossbar's conductance-per-weight factor.
    LayerMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub noise: NoiseMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::param(MODULE, format!("learning rate must be non-negative, got {}", self.eta)));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::param(MODULE, "epochs and batch_size must be at least 1"));
        }
        if let NoiseMode::Agnostic { sigma_w, .. } = self.noise {
            if !(sigma_w >= 0.0 && sigma_w.is_finite()) {
                return Err(Error::param(MODULE, format!("sigma_w must be non-negative, got {sigma_w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: Mlp,
    /// Mean training loss of the clean network after each epoch.
    pub loss_history: Vec<f64>,
}

/// Per-layer `Δw = −η·∂E/∂w`, shaped like the network's weight matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMap {
    pub layers: Vec<Matrix>,
}

impl SensitivityMap {
    /// Mean `|Δw|` of every row of layer `k` (bias row last).
    pub fn row_importance(&self, k: usize) -> Result<Vec<f64>> {
        let m = self
            .layers
            .get(k)
            .ok_or_else(|| Error::shape(MODULE, format!("layer {k} of {}", self.layers.len())))?;
        Ok((0..m.rows()).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>() / m.cols() as f64).collect())
    }
}

/// Values recorded by a forward pass: bias-augmented input and
/// pre-activation of every layer, plus the final output.
struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    posts: Vec<Vec<f64>>,
}

fn trace_exact(weights: &[&Matrix], acts: &[Activation], x: &[f64]) -> Result<Trace> {
    let mut t = Trace { inputs: vec![], pre: vec![], posts: vec![] };
    let mut a = x.to_vec();
    for (w, act) in weights.iter().zip(acts) {
        let aug = with_bias(&a);
        let z = matvec_ref(&aug, w)?;
        a = act.apply(&z);
        t.inputs.push(aug);
        t.pre.push(z);
        t.posts.push(a.clone());
    }
    Ok(t)
}

fn trace_crossbar(net: &CrossbarMlp, x: &[f64], read_index: u64) -> Result<Trace> {
    let mut t = Trace { inputs: vec![], pre: vec![], posts: vec![] };
    let n_layers = net.layers.len() as u64;
    let mut a = x.to_vec();
    for (k, layer) in net.layers.iter().enumerate() {
        let aug: Vec<f64> = with_bias(&a).into_iter().map(|v| v.clamp(-net.input_max, net.input_max)).collect();
        let physical = match &layer.row_order {
            Some(p) => p.apply(&aug)?,
            None => aug.clone(),
        };
        let index = read_index.wrapping_mul(n_layers).wrapping_add(k as u64);
        let z = layer.crossbar.vmm(&physical, &net.read, index)?;
        a = layer.activation.apply(&z);
        t.inputs.push(aug);
        t.pre.push(z);
        t.posts.push(a.clone());
    }
    Ok(t)
}

fn sample_loss(output: &[f64], pre: &[f64], act: Activation, target: &[f64], loss: Loss) -> f64 {
    match loss {
        Loss::Mse => 0.5 * output.iter().zip(target).map(|(y, t)| (t - y) * (t - y)).sum::<f64>(),
        Loss::CrossEntropy if act == Activation::Softmax => {
            let max = pre.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + pre.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            target.iter().zip(pre).map(|(t, z)| if *t == 0.0 { 0.0 } else { -t * (z - lse) }).sum()
        }
        Loss::CrossEntropy => {
            target.iter().zip(output).map(|(t, y)| if *t == 0.0 { 0.0 } else { -t * y.max(f64::MIN_POSITIVE).ln() }).sum()
        }
    }
}

/// Per-layer gradient of one sample's loss, propagating errors back through
/// `backward_weights`.
fn sample_gradient(
    trace: &Trace,
    backward_weights: &[&Matrix],
    acts: &[Activation],
    target: &[f64],
    loss: Loss,
) -> Vec<Matrix> {
    let last = acts.len() - 1;
    let y = &trace.posts[last];
    let mut delta = match (loss, acts[last]) {
        (Loss::CrossEntropy, Activation::Softmax) => y.iter().zip(target).map(|(y, t)| y - t).collect(),
        (Loss::Mse, act) => {
            let dy: Vec<f64> = y.iter().zip(target).map(|(y, t)| y - t).collect();
            act.backward(&trace.pre[last], y, &dy)
        }
        (Loss::CrossEntropy, act) => {
            let dy: Vec<f64> = y.iter().zip(target).map(|(y, t)| -t / y.max(f64::MIN_POSITIVE)).collect();
            act.backward(&trace.pre[last], y, &dy)
        }
    };
    let mut grads = vec![Matrix::zeros(0, 0); acts.len()];
    for k in (0..acts.len()).rev() {
        let input = &trace.inputs[k];
        grads[k] = Matrix::from_fn(input.len(), delta.len(), |i, j| input[i] * delta[j]);
        if k > 0 {
            let w = backward_weights[k];
            let m = w.rows() - 1;
            let dy: Vec<f64> = (0..m).map(|i| w.row(i).iter().zip(&delta).map(|(a, b)| a * b).sum()).collect();
            delta = acts[k - 1].backward(&trace.pre[k - 1], &trace.posts[k - 1], &dy);
        }
    }
    grads
}

fn mean_gradient(per_sample: Vec<Vec<Matrix>>) -> Vec<Matrix> {
    let n = per_sample.len() as f64;
    let mut iter = per_sample.into_iter();
    let mut total = iter.next().expect("non-empty batch");
    for g in iter {
        for (t, s) in total.iter_mut().zip(g) {
            t.as_mut_slice().iter_mut().zip(s.as_slice()).for_each(|(a, b)| *a += b);
        }
    }
    for t in &mut total {
        t.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    }
    total
}

fn check_data(net: &Mlp, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::shape(MODULE, "dataset is empty"));
    }
    if data.input_size() != net.input_size() || data.output_size() != net.output_size() {
        return Err(Error::shape(
            MODULE,
            format!(
                "dataset is {}→{}, network is {}→{}",
                data.input_size(),
                data.output_size(),
                net.input_size(),
                net.output_size()
            ),
        ));
    }
    Ok(())
}

fn layer_refs(net: &Mlp) -> (Vec<&Matrix>, Vec<Activation>) {
    (net.layers.iter().map(|l| &l.weights).collect(), net.layers.iter().map(|l| l.activation).collect())
}

/// Gradient of the mean loss over `data` with respect to every weight.
pub fn gradients(net: &Mlp, data: &Dataset, loss: Loss) -> Result<Vec<Matrix>> {
    check_data(net, data)?;
    let (weights, acts) = layer_refs(net);
    let per_sample = par::try_map_indexed(data.len(), |i| {
        let (x, t) = data.sample(i);
        let trace = trace_exact(&weights, &acts, x)?;
        Ok::<_, Error>(sample_gradient(&trace, &weights, &acts, t, loss))
    })?;
    Ok(mean_gradient(per_sample))
}

/// Mean loss of the exact network over `data`.
pub fn loss_value(net: &Mlp, data: &Dataset, loss: Loss) -> Result<f64> {
    check_data(net, data)?;
    let (weights, acts) = layer_refs(net);
    let last = acts.len() - 1;
    let losses = par::try_map_indexed(data.len(), |i| {
        let (x, t) = data.sample(i);
        let trace = trace_exact(&weights, &acts, x)?;
        Ok::<_, Error>(sample_loss(&trace.posts[last], &trace.pre[last], acts[last], t, loss))
    })?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// `Δw = −η·∂E/∂w` with `E` the mean loss over `batch`.
pub fn sensitivity(net: &Mlp, batch: &Dataset, loss: Loss, eta: f64) -> Result<SensitivityMap> {
    let grads = gradients(net, batch, loss)?;
    Ok(SensitivityMap { layers: grads.into_iter().map(|g| g.map(|v| -eta * v)).collect() })
}

/// Mini-batch stochastic gradient descent.
pub fn train_sgd(net: &Mlp, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(net, data)?;
    if cfg.loss == Loss::CrossEntropy {
        let last = net.layers[net.layers.len() - 1].activation;
        if !matches!(last, Activation::Softmax | Activation::Logistic) {
            return Err(Error::param(MODULE, "cross-entropy needs a softmax or logistic output layer"));
        }
    }
    let root = RandomStream::new(cfg.seed, 0);
    let mut net = net.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let acts: Vec<Activation> = net.layers.iter().map(|l| l.activation).collect();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        root.fork_path(&[KEY_SHUFFLE, epoch as u64]).shuffle(&mut order);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let key = [epoch as u64, b as u64];
            let clean: Vec<&Matrix> = net.layers.iter().map(|l| &l.weights).collect();
            let per_sample = match &cfg.noise {
                NoiseMode::None => par::try_map_slice(batch, |&i| {
                    let (x, t) = data.sample(i);
                    Ok::<_, Error>(sample_gradient(&trace_exact(&clean, &acts, x)?, &clean, &acts, t, cfg.loss))
                })?,
                NoiseMode::Agnostic { sigma_w, scale } => {
                    let noise = root.fork_path(&[KEY_NOISE, key[0], key[1]]);
                    par::try_map_indexed(batch.len(), |r| {
                        let noisy: Vec<Matrix> = clean
                            .iter()
                            .enumerate()
                            .map(|(k, w)| {
                                let mut s = noise.fork_path(&[r as u64, k as u64]);
                                let sd = match scale {
                                    NoiseScale::Absolute => *sigma_w,
                                    NoiseScale::LayerMax => *sigma_w * w.max_abs(),
                                };
                                Matrix::from_fn(w.rows(), w.cols(), |i, j| w[(i, j)] + sd * s.normal())
                            })
                            .collect();
                        let noisy: Vec<&Matrix> = noisy.iter().collect();
                        let (x, t) = data.sample(batch[r]);
                        Ok::<_, Error>(sample_gradient(&trace_exact(&noisy, &acts, x)?, &noisy, &acts, t, cfg.loss))
                    })?
                }
                NoiseMode::Aware { hardware } => {
                    let stream_id = root.fork_path(&[KEY_AWARE, key[0], key[1]]).stream_id();
                    let xnet = CrossbarMlp::program(&net, hardware, Lineage { seed: cfg.seed, stream_id })?;
                    par::try_map_indexed(batch.len(), |r| {
                        let (x, t) = data.sample(batch[r]);
                        let trace = trace_crossbar(&xnet, x, r as u64)?;
                        Ok::<_, Error>(sample_gradient(&trace, &clean, &acts, t, cfg.loss))
                    })?
                }
            };
            let grads = mean_gradient(per_sample);
            for (layer, g) in net.layers.iter_mut().zip(&grads) {
                layer.weights.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(w, d)| *w -= cfg.eta * d);
            }
        }
        let loss = loss_value(&net, data, cfg.loss)?;
        if !loss.is_finite() || net.flat_parameters().iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
    }
    Ok(TrainOutcome { net, loss_history: history })
}
