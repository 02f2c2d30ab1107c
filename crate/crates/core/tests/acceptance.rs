//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines are always printed.

mod common;

use std::time::Instant;

use common::{dense_kcl, random_matrix, random_vec, rel_err};
use xbar_sim::cli::{run, Command, ExperimentConfig, RunOptions};
use xbar_sim::crossbar::{program, CrossbarConfig, InputEncoding, Lineage, ReadConfig};
use xbar_sim::devices::preset;
use xbar_sim::interconnect::{solve_crossbar, Biasing, LineResistanceParams};
use xbar_sim::mapping::{decode_outputs, weights_to_diff_pair, MappingScheme};
use xbar_sim::mitigation::compensate_stuck;
use xbar_sim::nn::{
    accuracy, builtin_digits, gradients, sensitivity, train_sgd, Activation, CrossbarMlp, Dataset, HardwareSpec, Loss,
    Mlp, NoiseMode, NoiseScale, TrainConfig,
};
use xbar_sim::nonidealities::{rtn_multipliers, D2DSpec, RTNParams, StuckMode, StuckSpec};
use xbar_sim::numeric::{matvec_ref, seeded_stream, Matrix};
use xbar_sim::Error;

const V_READ: f64 = 0.2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(w: &Matrix) -> CrossbarConfig {
    CrossbarConfig::ideal(preset("RRAM").unwrap(), V_READ, w.max_abs().max(1e-3)).unwrap()
}

fn lin(seed: u64) -> Lineage {
    Lineage { seed, stream_id: 0 }
}

fn ideal_limit() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut s = seeded_stream(1, 0);
    for case in 0..100u64 {
        let (m, n) = if case == 0 { (64, 64) } else { (1 + s.index(64), 1 + s.index(64)) };
        let w = random_matrix(m, n, -1.0, 1.0, case);
        let x = random_vec(m, -1.0, 1.0, case);
        let y = program(&w, &config(&w), lin(case)).unwrap().vmm(&x, &ReadConfig::amplitude(V_READ), 0).unwrap();
        worst = worst.max(rel_err(&y, &matvec_ref(&x, &w).unwrap()));
    }
    outcome(worst <= 1e-9, format!("max relative error {worst:.2e} over 100 cases"))
}

fn interconnect_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for case in 0..20u64 {
        let m = 2 + (case % 2) as usize;
        let n = 2 + ((case / 2) % 2) as usize;
        let double = case % 3 == 0;
        let g = random_matrix(m, n, 1e-4, 5e-3, case);
        let v = random_vec(m, -0.2, 0.2, case);
        let rs = random_vec(2, 0.5, 20.0, case + 500);
        let p = LineResistanceParams {
            r_word: rs[0],
            r_bit: rs[1],
            biasing: if double { Biasing::Double } else { Biasing::Single },
        };
        let got = solve_crossbar(&g, &v, &p).unwrap().i_out;
        worst = worst.max(rel_err(&got, &dense_kcl(&g, &v, rs[0], rs[1], double)));
    }
    let (g, r_w, r_b, v) = (7e-4, 3.0, 4.5, 0.2);
    let p = LineResistanceParams { r_word: r_w, r_bit: r_b, biasing: Biasing::Single };
    let one = solve_crossbar(&Matrix::filled(1, 1, g), &[v], &p).unwrap().i_out[0];
    let want = v / (1.0 / g + r_w + r_b);
    let series = ((one - want) / want).abs();
    outcome(worst <= 1e-9 && series <= 1e-12, format!("dense KCL {worst:.2e}, 1x1 series {series:.2e}"))
}

fn ir_drop_monotone() -> Outcome {
    let rs = [0.0, 1.0, 2.0, 5.0, 10.0];
    let mut err = [0.0; 5];
    for seed in 0..10u64 {
        let w = random_matrix(16, 16, -1.0, 1.0, seed);
        for (k, &r) in rs.iter().enumerate() {
            let mut cfg = config(&w);
            cfg.interconnect = LineResistanceParams::uniform(r, Biasing::Single);
            let xbar = program(&w, &cfg, lin(seed)).unwrap();
            for t in 0..10u64 {
                let x = random_vec(16, 0.0, 1.0, 1000 * seed + t);
                let y = xbar.vmm(&x, &ReadConfig::amplitude(V_READ), 0).unwrap();
                let ideal = matvec_ref(&x, &w).unwrap();
                err[k] += y.iter().zip(&ideal).map(|(a, b)| (a - b).abs()).sum::<f64>() / (16.0 * 100.0);
            }
        }
    }
    let pass = err.windows(2).all(|p| p[1] >= p[0]);
    outcome(pass, format!("mean |y - y_ideal| {}", err.map(|e| format!("{e:.4}")).join(" ")))
}

fn pair_algebra() -> Outcome {
    let scheme = MappingScheme::differential_pair(preset("PCM").unwrap().window(), V_READ, 2.0).unwrap();
    let mut exact = true;
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let w = random_matrix(8, 8, -2.0, 2.0, seed);
        let (gp, gm) = weights_to_diff_pair(&w, &scheme).unwrap();
        let two_avg = 2.0 * scheme.window.g_avg();
        exact &= gp.as_slice().iter().zip(gm.as_slice()).all(|(a, b)| a + b == two_avg);
        // decoding the per-cell currents of a unit input recovers the weights
        let s = scheme.scaling;
        for i in 0..8 {
            let ip: Vec<f64> = gp.row(i).iter().map(|g| g * s.k_v).collect();
            let im: Vec<f64> = gm.row(i).iter().map(|g| g * s.k_v).collect();
            worst = worst.max(rel_err(&decode_outputs(&ip, &im, &s).unwrap(), w.row(i)));
        }
    }
    let mut w = Matrix::zeros(3, 3);
    w[(1, 2)] = 2.5;
    let err = weights_to_diff_pair(&w, &scheme).unwrap_err();
    let indexed = matches!(err, Error::Range { .. }) && err.to_string().contains("(1, 2)");
    outcome(
        exact && worst <= 1e-12 && indexed,
        format!("sum exact {exact}, round trip {worst:.2e}, rejection names cell {indexed}"),
    )
}

/// Mean loss by an independent forward pass with logistic hidden units and a
/// softmax output.
fn oracle_ce(net: &Mlp, data: &Dataset) -> f64 {
    let mut total = 0.0;
    for s in 0..data.len() {
        let (x, t) = data.sample(s);
        let mut a = x.to_vec();
        for (k, l) in net.layers.iter().enumerate() {
            let w = &l.weights;
            let z: Vec<f64> = (0..w.cols())
                .map(|j| (0..a.len()).map(|i| a[i] * w[(i, j)]).sum::<f64>() + w[(w.rows() - 1, j)])
                .collect();
            a = if k + 1 < net.layers.len() {
                z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
            } else {
                let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
                let sum: f64 = e.iter().sum();
                e.iter().map(|v| v / sum).collect()
            };
        }
        total -= a.iter().zip(t).map(|(y, t)| t * y.ln()).sum::<f64>();
    }
    total / data.len() as f64
}

fn gradient_check() -> Outcome {
    let net = Mlp::new(&[5, 6, 3], Activation::Logistic, Activation::Softmax, &seeded_stream(11, 0)).unwrap();
    let labels: Vec<usize> = (0..15).map(|i| i % 3).collect();
    let data = Dataset::classification(random_matrix(15, 5, -1.0, 1.0, 11), &labels, 3).unwrap();
    let grads = gradients(&net, &data, Loss::CrossEntropy).unwrap();
    let flat: Vec<f64> = grads.iter().flat_map(|g| g.as_slice().to_vec()).collect();
    let base = net.flat_parameters();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for p in 0..base.len() {
        let eval = |d: f64| {
            let mut v = base.clone();
            v[p] += d;
            let mut n = net.clone();
            n.set_flat_parameters(&v).unwrap();
            oracle_ce(&n, &data)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max((flat[p] - fd).abs() / flat[p].abs().max(fd.abs()).max(1e-6));
    }
    let eta = 0.25;
    let map = sensitivity(&net, &data, Loss::CrossEntropy, eta).unwrap();
    let bitwise = map
        .layers
        .iter()
        .zip(&grads)
        .all(|(s, g)| s.as_slice().iter().zip(g.as_slice()).all(|(a, b)| a.to_bits() == (-eta * b).to_bits()));
    outcome(
        worst <= 1e-4 && bitwise,
        format!("max relative gradient error {worst:.2e} over {} parameters, sensitivity bitwise {bitwise}", base.len()),
    )
}

fn rtn_stationarity() -> Outcome {
    let p = RTNParams::new(0.1, 3.0, 5.0).unwrap();
    let chain = rtn_multipliers(&p, 100_000, &mut seeded_stream(6, 0)).unwrap();
    let high = chain.iter().filter(|&&v| v > 1.0).count() as f64 / chain.len() as f64;
    let frac_ok = (high - 3.0 / 8.0).abs() <= 0.02;

    let w = random_matrix(8, 3, -1.0, 1.0, 6);
    let mut cfg = config(&w);
    cfg.nonidealities.rtn = Some(RTNParams::new(0.3, 2.0, 2.0).unwrap());
    let xbar = program(&w, &cfg, lin(6)).unwrap();
    let x = vec![0.8; 8];
    let variance = |read: &ReadConfig| {
        let v: Vec<f64> = (0..200).map(|r| xbar.vmm(&x, read, r).unwrap()[0]).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let ratio = variance(&ReadConfig::new(V_READ, 16, InputEncoding::Amplitude).unwrap())
        / variance(&ReadConfig::amplitude(V_READ));
    outcome(
        frac_ok && ratio <= 1.5 / 16.0,
        format!("high fraction {high:.4} (target 0.375), variance ratio {ratio:.4} (bound {:.4})", 1.5 / 16.0),
    )
}

fn stuck_compensation() -> Outcome {
    let mut never_worse = true;
    let (mut before, mut after) = (0.0, 0.0);
    for seed in 0..10u64 {
        let w = random_matrix(32, 32, -1.0, 1.0, seed);
        let mut cfg = config(&w);
        cfg.nonidealities.stuck = Some(StuckSpec::new(0.05, StuckMode::AtRandomLevel).unwrap());
        let xbar = program(&w, &cfg, lin(seed)).unwrap();
        let (fixed, _) = compensate_stuck(&xbar, &w).unwrap();
        let (a, b) = (xbar.weight_error(&w).unwrap(), fixed.weight_error(&w).unwrap());
        never_worse &= b.as_slice().iter().zip(a.as_slice()).all(|(x, y)| x <= y);
        before += a.as_slice().iter().sum::<f64>() / a.as_slice().len() as f64 / 10.0;
        after += b.as_slice().iter().sum::<f64>() / b.as_slice().len() as f64 / 10.0;
    }
    outcome(
        never_worse && after < before,
        format!("per-cell never worse {never_worse}, mean error {before:.5} -> {after:.5}"),
    )
}

fn pulse_width() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let w = random_matrix(12, 8, -1.0, 1.0, seed);
        let mut cfg = config(&w);
        let ohmic = program(&w, &cfg, lin(seed)).unwrap();
        cfg.nonidealities.iv_gamma = 2.0;
        let curved = program(&w, &cfg, lin(seed)).unwrap();
        let x = random_vec(12, -1.0, 1.0, seed);
        let pw = ReadConfig::new(V_READ, 1, InputEncoding::PulseWidth { bits: None }).unwrap();
        let a = ohmic.vmm(&x, &ReadConfig::amplitude(V_READ), 0).unwrap();
        worst = worst.max(rel_err(&curved.vmm(&x, &pw, 0).unwrap(), &a));
    }
    outcome(worst <= 1e-9, format!("max relative difference {worst:.2e}"))
}

fn digits_accuracy(net: &Mlp, test: &Dataset, hw: Option<&HardwareSpec>, seed: u64) -> f64 {
    let out = match hw {
        None => net.predict_batch(test.inputs()).unwrap(),
        Some(hw) => CrossbarMlp::program(net, hw, Lineage { seed, stream_id: 2 })
            .unwrap()
            .predict_batch(test.inputs(), 0)
            .unwrap(),
    };
    accuracy(&out, test.labels()).unwrap()
}

fn train_digits(sizes: &[usize], epochs: usize, noise: NoiseMode, seed: u64, train: &Dataset) -> Mlp {
    let net = Mlp::new(sizes, Activation::Logistic, Activation::Softmax, &seeded_stream(seed, 0)).unwrap();
    let cfg = TrainConfig { eta: 0.5, epochs, batch_size: 20, loss: Loss::CrossEntropy, noise, seed };
    train_sgd(&net, train, &cfg).unwrap().net
}

fn low_on_off_ratio() -> Outcome {
    let hw = HardwareSpec::ideal(preset("RRAM").unwrap().with_on_off_ratio(3.0).unwrap());
    let (mut gap, mut min_train) = (0.0, 1.0f64);
    for seed in 0..10u64 {
        let (train, test) = builtin_digits(seed).unwrap();
        let net = train_digits(&[64, 16, 10], 30, NoiseMode::None, seed, &train);
        min_train = min_train.min(digits_accuracy(&net, &train, None, seed));
        gap += (digits_accuracy(&net, &test, None, seed) - digits_accuracy(&net, &test, Some(&hw), seed)) / 10.0;
    }
    outcome(
        min_train >= 0.9 && gap.abs() <= 0.02,
        format!("lowest train accuracy {:.1}%, mean exact - crossbar {:+.2} pp", 100.0 * min_train, 100.0 * gap),
    )
}

fn noise_injection() -> Outcome {
    let mut hw = HardwareSpec::ideal(preset("RRAM").unwrap());
    hw.nonidealities.d2d = Some(D2DSpec::new(0.25).unwrap());
    hw.nonidealities.stuck = Some(StuckSpec::new(0.02, StuckMode::AtRandomLevel).unwrap());
    let noise = NoiseMode::Agnostic { sigma_w: 0.1, scale: NoiseScale::LayerMax };
    let (mut clean, mut noisy) = (0.0, 0.0);
    for seed in 0..10u64 {
        let (train, test) = builtin_digits(seed).unwrap();
        let a = train_digits(&[64, 64, 10], 60, NoiseMode::None, seed, &train);
        let b = train_digits(&[64, 64, 10], 60, noise.clone(), seed, &train);
        clean += digits_accuracy(&a, &test, Some(&hw), seed) / 10.0;
        noisy += digits_accuracy(&b, &test, Some(&hw), seed) / 10.0;
    }
    outcome(
        noisy >= clean,
        format!(
            "crossbar accuracy clean {:.2}%, noise-trained {:.2}%, margin {:+.2} pp",
            100.0 * clean,
            100.0 * noisy,
            100.0 * (noisy - clean)
        ),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = "seed = 4\nrepetitions = 2\n[network]\nhidden = [8]\n[training]\nepochs = 3\n\
                [nonidealities.d2d]\nenabled = true\n[nonidealities.rtn]\nenabled = true\n";
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(&cfg_path, text).unwrap();
    let bytes: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("run{i}"));
            let opts = RunOptions { config: cfg_path.clone(), out: out.clone(), ..Default::default() };
            run(Command::Infer, &opts).unwrap();
            std::fs::read(out.join("results.csv")).unwrap()
        })
        .collect();
    let identical = bytes[0] == bytes[1];
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let round = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    let round_trip = round == cfg && round.to_toml().unwrap() == cfg.to_toml().unwrap();
    outcome(identical && round_trip, format!("results.csv identical {identical}, config round trip {round_trip}"))
}

type Check = (&'static str, fn() -> Outcome, Option<f64>);

fn main() {
    let checks: [Check; 11] = [
        ("ideal-limit equivalence", ideal_limit, Some(1.0)),
        ("interconnect oracle", interconnect_oracle, Some(1.0)),
        ("monotone IR-drop degradation", ir_drop_monotone, Some(10.0)),
        ("differential-pair algebra", pair_algebra, None),
        ("gradient correctness", gradient_check, None),
        ("RTN stationarity and averaging", rtn_stationarity, Some(5.0)),
        ("stuck-device compensation", stuck_compensation, None),
        ("pulse-width encoding", pulse_width, None),
        ("on/off ratio 3", low_on_off_ratio, Some(60.0)),
        ("noise-injection benefit", noise_injection, Some(300.0)),
        ("CLI determinism", cli_determinism, None),
    ];
    let mut failed = 0;
    for (k, (name, check, limit)) in checks.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let in_time = limit.is_none_or(|l| secs < l);
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        let budget = limit.map(|l| format!(" (limit {l} s)")).unwrap_or_default();
        println!(
            "{} criterion {:2} {name}: {}; {secs:.2} s{budget}",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            o.detail
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
