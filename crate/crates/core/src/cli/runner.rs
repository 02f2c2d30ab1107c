//! Subcommand execution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, NoiseKind, OrderingKind, BUILTIN_SHAPE};
use super::output::{self, Provenance, ResultRow, StateFile};
use crate::crossbar::Lineage;
use crate::devices;
use crate::error::{Error, Result};
use crate::mapping::MappingVariant;
use crate::mitigation::{compensate_stuck, order_rows, CompensationReport, OrderCriterion, Permutation};
use crate::nn::{
    accuracy, builtin_digits, ensemble_predict, loss_value, sensitivity, train_sgd, with_bias, CrossbarMlp,
    Dataset, Mlp, Model,
};
use crate::numeric::{matvec_ref, Matrix, RandomStream};
use crate::par;

const KEY_INIT: u64 = 1;
const KEY_PROGRAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Program crossbars for the trained network and save them.
    Program,
    /// Accuracy and deviation metrics of crossbar-backed inference.
    Infer,
    /// `infer` at every value of the sweep axis.
    Sweep,
    /// Train and save weights.
    Train,
    /// Device preset table and stuck-cell compensation records.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Program => "program",
            Command::Infer => "infer",
            Command::Sweep => "sweep",
            Command::Train => "train",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Replaces the config seed.
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Use saved weights instead of training.
    pub weights: Option<PathBuf>,
    /// `infer` only: read a saved crossbar instead of programming one.
    pub crossbar: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub rows: Vec<ResultRow>,
    pub provenance: Provenance,
}

struct Trained {
    train: Dataset,
    test: Dataset,
    net: Mlp,
    loss_history: Vec<f64>,
}

pub fn run(cmd: Command, opts: &RunOptions) -> Result<RunSummary> {
    let mut config = ExperimentConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
        if seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed {seed} does not fit a signed 64-bit integer")));
        }
    }
    if opts.crossbar.is_some() && cmd != Command::Infer {
        return Err(Error::Config("--crossbar is only accepted by infer".into()));
    }
    let base = opts.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let prov = Provenance { config_digest: config.digest()?, seed: config.seed };
    std::fs::create_dir_all(&opts.out)
        .map_err(|e| Error::Io { module: "cli", detail: format!("{}: {e}", opts.out.display()) })?;
    let weights = match &opts.weights {
        Some(p) => Some(output::read_state::<Mlp>(p, output::WEIGHTS_FORMAT)?.network),
        None => None,
    };
    let crossbar = match &opts.crossbar {
        Some(p) => Some(output::read_state::<CrossbarMlp>(p, output::CROSSBAR_FORMAT)?.network),
        None => None,
    };
    let ctx = Context { config, base, prov, out: opts.out.clone(), weights, crossbar };
    par::with_threads(opts.jobs, || ctx.execute(cmd))
}

struct Context {
    config: ExperimentConfig,
    base: PathBuf,
    prov: Provenance,
    out: PathBuf,
    weights: Option<Mlp>,
    crossbar: Option<CrossbarMlp>,
}

impl Context {
    fn execute(&self, cmd: Command) -> Result<RunSummary> {
        let mut files = Vec::new();
        let rows = match cmd {
            Command::Train => self.train(&mut files)?,
            Command::Program => self.program(&mut files)?,
            Command::Infer => self.infer(&mut files, false)?,
            Command::Sweep => self.infer(&mut files, true)?,
            Command::Report => self.report(&mut files)?,
        };
        let path = self.out.join("config.toml");
        let text = format!("{}\n{}", self.prov.comment_line(), self.config.to_toml()?);
        output::write_csv(&path, text.as_bytes())?;
        files.push(path);
        let path = self.out.join("run.meta");
        output::write_meta(&path, &self.prov, cmd.name())?;
        files.push(path);
        Ok(RunSummary { files, rows, provenance: self.prov.clone() })
    }

    fn results(&self, files: &mut Vec<PathBuf>, rows: &[ResultRow]) -> Result<()> {
        let path = self.out.join("results.csv");
        output::write_results(&path, &self.prov, rows)?;
        files.push(path);
        Ok(())
    }

    fn row(&self, sweep_value: Option<f64>, repetition: usize, metric: impl Into<String>, value: f64) -> ResultRow {
        ResultRow { sweep_value, repetition, seed: self.config.seed, metric: metric.into(), value }
    }

    fn trained(&self, config: &ExperimentConfig) -> Result<Trained> {
        let (train, test) = load_data(config, &self.base)?;
        if let Some(net) = &self.weights {
            if net.input_size() != train.input_size() || net.output_size() != train.output_size() {
                return Err(Error::Config(format!(
                    "saved network maps {} inputs to {} outputs, dataset has {} and {}",
                    net.input_size(),
                    net.output_size(),
                    train.input_size(),
                    train.output_size()
                )));
            }
            return Ok(Trained { train, test, net: net.clone(), loss_history: Vec::new() });
        }
        let n = &config.network;
        let sizes = config.layer_sizes(train.input_size(), train.output_size());
        let init = RandomStream::new(config.seed, 0).fork(KEY_INIT);
        let net = Mlp::new(&sizes, n.hidden_activation, n.output_activation, &init)?;
        let outcome = train_sgd(&net, &train, &config.train_config()?)?;
        Ok(Trained { train, test, net: outcome.net, loss_history: outcome.loss_history })
    }

    fn train(&self, files: &mut Vec<PathBuf>) -> Result<Vec<ResultRow>> {
        let t = self.trained(&self.config)?;
        let path = self.out.join("weights.state");
        output::write_state(&path, &StateFile::new(output::WEIGHTS_FORMAT, &self.prov, t.net.clone()))?;
        files.push(path);
        let width = t.loss_history.len().to_string().len();
        let mut rows = vec![
            self.row(None, 0, "train_accuracy", accuracy(&t.net.predict_batch(t.train.inputs())?, t.train.labels())?),
            self.row(None, 0, "test_accuracy", accuracy(&t.net.predict_batch(t.test.inputs())?, t.test.labels())?),
            self.row(None, 0, "final_loss", loss_value(&t.net, &t.train, self.config.training.loss)?),
        ];
        for (e, l) in t.loss_history.iter().enumerate() {
            rows.push(self.row(None, 0, format!("loss_epoch_{:0width$}", e + 1), *l));
        }
        self.results(files, &rows)?;
        Ok(rows)
    }

    fn program(&self, files: &mut Vec<PathBuf>) -> Result<Vec<ResultRow>> {
        let t = self.trained(&self.config)?;
        let orders = row_orders(&self.config, &t)?;
        let (xbar, _) = program_member(&self.config, &t.net, &orders, stream_path(&self.config, 0, 0, 0))?;
        let mut rows = Vec::new();
        for (k, e) in weight_errors(&xbar, &t.net)?.into_iter().enumerate() {
            rows.push(self.row(None, 0, format!("weight_error_l{k}"), e));
        }
        for (k, layer) in xbar.layers.iter().enumerate() {
            let (mp, mm) = layer.crossbar.masks();
            rows.push(self.row(None, 0, format!("stuck_cells_l{k}"), (mp.count() + mm.count()) as f64));
        }
        let path = self.out.join("crossbar.state");
        output::write_state(&path, &StateFile::new(output::CROSSBAR_FORMAT, &self.prov, xbar))?;
        files.push(path);
        let path = self.out.join("weights.state");
        output::write_state(&path, &StateFile::new(output::WEIGHTS_FORMAT, &self.prov, t.net))?;
        files.push(path);
        self.results(files, &rows)?;
        Ok(rows)
    }

    fn infer(&self, files: &mut Vec<PathBuf>, sweep: bool) -> Result<Vec<ResultRow>> {
        let points: Vec<(Option<f64>, ExperimentConfig)> = if sweep {
            if self.crossbar.is_some() {
                return Err(Error::Config("a saved crossbar cannot be swept".into()));
            }
            self.config.sweep_points()?.into_iter().map(|(v, c)| (Some(v), c)).collect()
        } else {
            let mut c = self.config.clone();
            c.sweep = None;
            vec![(None, c)]
        };

        // networks are trained once per distinct training setup
        let keys = points.iter().map(|(_, c)| training_key(c)).collect::<Result<Vec<_>>>()?;
        let mut distinct: BTreeMap<&str, usize> = BTreeMap::new();
        let mut firsts = Vec::new();
        for (i, k) in keys.iter().enumerate() {
            distinct.entry(k.as_str()).or_insert_with(|| {
                firsts.push(i);
                firsts.len() - 1
            });
        }
        let trained = par::try_map_slice(&firsts, |&i| self.trained(&points[i].1))?;
        let orders = par::try_map_indexed(points.len(), |p| row_orders(&points[p].1, &trained[distinct[keys[p].as_str()]]))?;

        let reps = self.config.repetitions;
        let per_task = par::try_map_indexed(points.len() * reps, |task| {
            let (p, rep) = (task / reps, task % reps);
            let (sv, config) = &points[p];
            let t = &trained[distinct[keys[p].as_str()]];
            let metrics = match &self.crossbar {
                Some(x) => evaluate(t, std::slice::from_ref(x), (rep * t.test.len()) as u64)?,
                None => {
                    let members = (0..config.mitigation.ensemble_size)
                        .map(|e| {
                            program_member(config, &t.net, &orders[p], stream_path(config, p, rep, e)).map(|m| m.0)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    evaluate(t, &members, 0)?
                }
            };
            Ok::<_, Error>(metrics.into_iter().map(|(m, v)| self.row(*sv, rep, m, v)).collect::<Vec<_>>())
        })?;
        let rows: Vec<ResultRow> = per_task.into_iter().flatten().collect();
        self.results(files, &rows)?;
        Ok(rows)
    }

    fn report(&self, files: &mut Vec<PathBuf>) -> Result<Vec<ResultRow>> {
        let path = self.out.join("presets.csv");
        output::write_csv(&path, &output::presets_csv(&self.prov, &devices::all_presets())?)?;
        files.push(path);
        let mut rows = Vec::new();
        if self.config.hardware()?.mapping != MappingVariant::DifferentialPair {
            eprintln!("note: compensation report skipped, the mapping scheme has no device pairs");
        } else {
            let t = self.trained(&self.config)?;
            let orders = row_orders(&self.config, &t)?;
            let mut plain = self.config.clone();
            plain.mitigation.compensate_stuck = false;
            let (xbar, _) = program_member(&plain, &t.net, &orders, stream_path(&plain, 0, 0, 0))?;
            let mut reports = Vec::new();
            for (k, (layer, net_layer)) in xbar.layers.iter().zip(&t.net.layers).enumerate() {
                let w = physical_weights(&net_layer.weights, &layer.row_order)?;
                let (fixed, report) = compensate_stuck(&layer.crossbar, &w)?;
                let mean = |m: Matrix| m.as_slice().iter().sum::<f64>() / m.as_slice().len() as f64;
                rows.push(self.row(None, 0, format!("weight_error_l{k}"), mean(layer.crossbar.weight_error(&w)?)));
                rows.push(self.row(None, 0, format!("weight_error_compensated_l{k}"), mean(fixed.weight_error(&w)?)));
                rows.push(self.row(None, 0, format!("adjusted_cells_l{k}"), report.adjusted.len() as f64));
                rows.push(self.row(None, 0, format!("both_stuck_cells_l{k}"), report.both_stuck.len() as f64));
                reports.push(report);
            }
            let path = self.out.join("compensation.csv");
            output::write_csv(&path, &output::compensation_csv(&self.prov, &reports)?)?;
            files.push(path);
        }
        self.results(files, &rows)?;
        Ok(rows)
    }
}

fn load_data(config: &ExperimentConfig, base: &Path) -> Result<(Dataset, Dataset)> {
    let d = &config.dataset;
    let (train, test) = match config.dataset_path(base) {
        None => {
            if d.classes.is_some_and(|c| c != BUILTIN_SHAPE.1) {
                return Err(Error::Config(format!("the built-in set has {} classes", BUILTIN_SHAPE.1)));
            }
            builtin_digits(d.builtin_seed)?
        }
        Some(path) => {
            let all = Dataset::from_csv(&path, d.classes)?;
            let n_test = ((all.len() as f64 * d.test_fraction).round() as usize).max(1);
            if n_test >= all.len() {
                return Err(Error::Config(format!("{} samples leave nothing to train on", all.len())));
            }
            let split = all.len() - n_test;
            (all.subset(&(0..split).collect::<Vec<_>>())?, all.subset(&(split..all.len()).collect::<Vec<_>>())?)
        }
    };
    Ok((train, test))
}

/// Everything that influences the trained network, as canonical text.
fn training_key(config: &ExperimentConfig) -> Result<String> {
    let mut c = ExperimentConfig {
        seed: config.seed,
        dataset: config.dataset.clone(),
        network: config.network.clone(),
        training: config.training.clone(),
        ..Default::default()
    };
    if config.training.noise == NoiseKind::Aware {
        c.device = config.device.clone();
        c.mapping = config.mapping.clone();
        c.nonidealities = config.nonidealities.clone();
        c.interconnect = config.interconnect.clone();
        c.read = config.read.clone();
    }
    c.to_toml()
}

fn stream_path(config: &ExperimentConfig, point: usize, rep: usize, member: usize) -> Lineage {
    let s = RandomStream::new(config.seed, 0).fork_path(&[KEY_PROGRAM, point as u64, rep as u64, member as u64]);
    Lineage { seed: config.seed, stream_id: s.stream_id() }
}

/// Mean `|a|` of every bias-augmented layer input over the training set.
fn input_intensity(net: &Mlp, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut sums: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.weights.rows()]).collect();
    for i in 0..data.len() {
        let mut a = data.inputs().row(i).to_vec();
        for (k, layer) in net.layers.iter().enumerate() {
            let aug = with_bias(&a);
            sums[k].iter_mut().zip(&aug).for_each(|(s, v)| *s += v.abs());
            a = layer.activation.apply(&matvec_ref(&aug, &layer.weights)?);
        }
    }
    let n = data.len().max(1) as f64;
    Ok(sums.into_iter().map(|s| s.into_iter().map(|v| v / n).collect()).collect())
}

fn row_orders(config: &ExperimentConfig, t: &Trained) -> Result<Vec<Option<Permutation>>> {
    let layers = t.net.layers.len();
    let placement = config.mitigation.placement;
    match config.mitigation.row_ordering {
        OrderingKind::None => Ok(vec![None; layers]),
        OrderingKind::Sensitivity => {
            let map = sensitivity(&t.net, &t.train, config.training.loss, 1.0)?;
            (0..layers)
                .map(|k| {
                    let c = OrderCriterion::Sensitivity { map: &map, layer: k };
                    order_rows(c, placement.unwrap_or(c.default_placement()), t.net.layers[k].weights.rows()).map(Some)
                })
                .collect()
        }
        OrderingKind::Intensity => {
            let scores = input_intensity(&t.net, &t.train)?;
            scores
                .iter()
                .map(|s| {
                    let c = OrderCriterion::Intensity(s);
                    order_rows(c, placement.unwrap_or(c.default_placement()), s.len()).map(Some)
                })
                .collect()
        }
    }
}

fn physical_weights(w: &Matrix, order: &Option<Permutation>) -> Result<Matrix> {
    match order {
        Some(p) => p.permute_rows(w),
        None => Ok(w.clone()),
    }
}

/// Program one copy of the network, compensating stuck cells when enabled.
fn program_member(
    config: &ExperimentConfig,
    net: &Mlp,
    orders: &[Option<Permutation>],
    lineage: Lineage,
) -> Result<(CrossbarMlp, Vec<CompensationReport>)> {
    let mut xbar = CrossbarMlp::program_ordered(net, &config.hardware()?, lineage, orders)?;
    let mut reports = Vec::new();
    if config.mitigation.compensate_stuck {
        for (layer, net_layer) in xbar.layers.iter_mut().zip(&net.layers) {
            let w = physical_weights(&net_layer.weights, &layer.row_order)?;
            let (fixed, report) = compensate_stuck(&layer.crossbar, &w)?;
            layer.crossbar = fixed;
            reports.push(report);
        }
    }
    Ok((xbar, reports))
}

/// Mean per-cell `|w_effective − w|` of every layer.
fn weight_errors(xbar: &CrossbarMlp, net: &Mlp) -> Result<Vec<f64>> {
    xbar.layers
        .iter()
        .zip(&net.layers)
        .map(|(layer, net_layer)| {
            let w = physical_weights(&net_layer.weights, &layer.row_order)?;
            let e = layer.crossbar.weight_error(&w)?;
            Ok(e.as_slice().iter().sum::<f64>() / e.as_slice().len() as f64)
        })
        .collect()
}

/// Test-set metrics of an ensemble (one member = plain crossbar inference).
fn evaluate(t: &Trained, members: &[CrossbarMlp], offset: u64) -> Result<Vec<(String, f64)>> {
    let inputs = t.test.inputs();
    if members[0].input_size() != inputs.cols() {
        return Err(Error::Config(format!(
            "crossbar takes {} inputs, dataset has {}",
            members[0].input_size(),
            inputs.cols()
        )));
    }
    let exact = t.net.predict_batch(inputs)?;
    let hw = match members {
        [only] => only.predict_batch(inputs, offset)?,
        _ => {
            let refs: Vec<&dyn Model> = members.iter().map(|m| m as &dyn Model).collect();
            let rows = par::try_map_indexed(inputs.rows(), |i| ensemble_predict(&refs, inputs.row(i), offset + i as u64))?;
            Matrix::from_vec(inputs.rows(), exact.cols(), rows.concat())?
        }
    };
    let dev: Vec<f64> = hw.as_slice().iter().zip(exact.as_slice()).map(|(a, b)| (a - b).abs()).collect();
    let mut metrics = vec![
        ("accuracy".to_string(), accuracy(&hw, t.test.labels())?),
        ("exact_accuracy".to_string(), accuracy(&exact, t.test.labels())?),
        ("mean_abs_dev".to_string(), dev.iter().sum::<f64>() / dev.len() as f64),
        ("max_abs_dev".to_string(), dev.iter().copied().fold(0.0, f64::max)),
    ];
    let same_shape = members[0].layers.len() == t.net.layers.len()
        && members[0].layers.iter().zip(&t.net.layers).all(|(a, b)| {
            (a.crossbar.rows(), a.crossbar.cols()) == b.weights.shape()
        });
    if same_shape {
        for (k, e) in weight_errors(&members[0], &t.net)?.into_iter().enumerate() {
            metrics.push((format!("weight_error_l{k}"), e));
        }
    }
    Ok(metrics)
}
