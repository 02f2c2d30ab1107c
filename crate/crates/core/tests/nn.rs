mod common;

use common::{random_matrix, rel_err};
use xbar_sim::crossbar::Lineage;
use xbar_sim::devices::preset;
use xbar_sim::nn::{
    accuracy, builtin_digits, ensemble_predict, gradients, loss_value, sensitivity, train_sgd, Activation, CrossbarMlp,
    Dataset, DenseLayer, HardwareSpec, Loss, Mlp, Model, NoiseMode, NoiseScale, TrainConfig,
};
use xbar_sim::numeric::{seeded_stream, Matrix};

/// Independent forward pass and mean loss for logistic hidden layers.
fn oracle_loss(layers: &[Matrix], out: Activation, data: &Dataset, loss: Loss) -> f64 {
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut total = 0.0;
    for s in 0..data.len() {
        let (x, t) = data.sample(s);
        let mut a = x.to_vec();
        for (k, w) in layers.iter().enumerate() {
            let z: Vec<f64> = (0..w.cols())
                .map(|j| (0..a.len()).map(|i| a[i] * w[(i, j)]).sum::<f64>() + w[(w.rows() - 1, j)])
                .collect();
            a = if k + 1 < layers.len() || out == Activation::Logistic {
                z.iter().map(|&v| sig(v)).collect()
            } else {
                let m = z.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let sum: f64 = e.iter().sum();
                e.iter().map(|v| v / sum).collect()
            };
        }
        total += match loss {
            Loss::Mse => 0.5 * a.iter().zip(t).map(|(y, t)| (t - y).powi(2)).sum::<f64>(),
            Loss::CrossEntropy => -a.iter().zip(t).map(|(y, t)| t * y.ln()).sum::<f64>(),
        };
    }
    total / data.len() as f64
}

fn small_problem(seed: u64) -> (Mlp, Dataset) {
    let net = Mlp::new(&[4, 5, 3], Activation::Logistic, Activation::Softmax, &seeded_stream(seed, 0)).unwrap();
    let x = random_matrix(12, 4, -1.0, 1.0, seed);
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    (net, Dataset::classification(x, &labels, 3).unwrap())
}

#[test]
fn loss_matches_oracle() {
    let (net, data) = small_problem(1);
    let ws: Vec<Matrix> = net.layers.iter().map(|l| l.weights.clone()).collect();
    let ours = loss_value(&net, &data, Loss::CrossEntropy).unwrap();
    assert!((ours - oracle_loss(&ws, Activation::Softmax, &data, Loss::CrossEntropy)).abs() < 1e-12);
}

#[test]
fn backprop_matches_central_differences() {
    for (out, loss) in [(Activation::Softmax, Loss::CrossEntropy), (Activation::Logistic, Loss::Mse)] {
        let (mut net, data) = small_problem(2);
        let last = net.layers.len() - 1;
        net.layers[last].activation = out;
        let grads = gradients(&net, &data, loss).unwrap();
        let flat_grad: Vec<f64> = grads.iter().flat_map(|g| g.as_slice().to_vec()).collect();
        let base = net.flat_parameters();
        let h = 1e-5;
        for p in 0..base.len() {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[p] += delta;
                let mut n = net.clone();
                n.set_flat_parameters(&v).unwrap();
                let ws: Vec<Matrix> = n.layers.iter().map(|l| l.weights.clone()).collect();
                oracle_loss(&ws, out, &data, loss)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let g = flat_grad[p];
            assert!((g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()).max(1e-6), "param {p}: {g} vs {fd}");
        }
    }
}

#[test]
fn sensitivity_is_scaled_gradient_bitwise() {
    let (net, data) = small_problem(3);
    let eta = 0.37;
    let map = sensitivity(&net, &data, Loss::CrossEntropy, eta).unwrap();
    let grads = gradients(&net, &data, Loss::CrossEntropy).unwrap();
    for (s, g) in map.layers.iter().zip(&grads) {
        assert!(s.as_slice().iter().zip(g.as_slice()).all(|(a, b)| a.to_bits() == (-eta * b).to_bits()));
    }
}

#[test]
fn digits_train_well() {
    let (train, test) = builtin_digits(0).unwrap();
    let net = Mlp::new(&[64, 16, 10], Activation::Logistic, Activation::Softmax, &seeded_stream(0, 0)).unwrap();
    let cfg = TrainConfig { eta: 0.5, epochs: 30, batch_size: 20, loss: Loss::CrossEntropy, noise: NoiseMode::None, seed: 0 };
    let out = train_sgd(&net, &train, &cfg).unwrap();
    assert!(out.loss_history.first() > out.loss_history.last());
    assert!(accuracy(&out.net.predict_batch(train.inputs()).unwrap(), train.labels()).unwrap() >= 0.9);
    assert!(accuracy(&out.net.predict_batch(test.inputs()).unwrap(), test.labels()).unwrap() >= 0.8);
}

#[test]
fn ideal_crossbar_network_matches_exact() {
    let (net, data) = small_problem(4);
    let hw = HardwareSpec::ideal(preset("RRAM").unwrap());
    let xnet = CrossbarMlp::program(&net, &hw, Lineage { seed: 4, stream_id: 0 }).unwrap();
    let a = net.predict_batch(data.inputs()).unwrap();
    let b = xnet.predict_batch(data.inputs(), 0).unwrap();
    assert!(rel_err(b.as_slice(), a.as_slice()) <= 1e-9);
}

#[test]
fn ensemble_of_copies_is_the_copy() {
    let (net, data) = small_problem(5);
    let members: [&dyn Model; 3] = [&net, &net, &net];
    let x = data.inputs().row(0);
    let e = ensemble_predict(&members, x, 0).unwrap();
    assert!(rel_err(&e, &net.forward(x).unwrap()) < 1e-15);
}

#[test]
fn noisy_training_is_reproducible() {
    let (net, data) = small_problem(6);
    let cfg = TrainConfig {
        eta: 0.3,
        epochs: 3,
        batch_size: 4,
        loss: Loss::CrossEntropy,
        noise: NoiseMode::Agnostic { sigma_w: 0.1, scale: NoiseScale::LayerMax },
        seed: 9,
    };
    let a = train_sgd(&net, &data, &cfg).unwrap();
    assert_eq!(a, train_sgd(&net, &data, &cfg).unwrap());
    let other = TrainConfig { seed: 10, ..cfg };
    assert_ne!(a.net, train_sgd(&net, &data, &other).unwrap().net);
}

#[test]
fn weights_json_round_trip_and_validation() {
    let (net, _) = small_problem(7);
    let text = serde_json::to_string(&net).unwrap();
    assert_eq!(serde_json::from_str::<Mlp>(&text).unwrap(), net);
    // a chain whose widths disagree is rejected
    let broken = Mlp { layers: vec![net.layers[1].clone(), net.layers[1].clone()] };
    let text = serde_json::to_string(&broken).unwrap();
    assert!(serde_json::from_str::<Mlp>(&text).is_err());
}

#[test]
fn dataset_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "a,b,label\n0.1,0.2,0\n0.3,0.4,2\n0.5,0.6,1\n").unwrap();
    let d = Dataset::from_csv(&path, None).unwrap();
    assert_eq!((d.len(), d.input_size(), d.output_size()), (3, 2, 3));
    assert_eq!(d.labels(), &[0, 2, 1]);
    std::fs::write(&path, "0.1,0.2,0\n0.3,oops,1\n").unwrap();
    let err = Dataset::from_csv(&path, None).unwrap_err().to_string();
    assert!(err.contains("line 2") && err.contains("d.csv"), "{err}");
}

#[test]
fn perceptron_layer_via_step() {
    let w = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![-1.5]]).unwrap();
    let net = Mlp::from_layers(vec![DenseLayer::new(w, Activation::Step).unwrap()]).unwrap();
    let and: Vec<f64> = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]].iter().map(|x| net.forward(x).unwrap()[0]).collect();
    assert_eq!(and, [0.0, 0.0, 0.0, 1.0]);
}
