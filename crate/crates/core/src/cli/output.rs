//! Output files: result tables, state records and run metadata.
//!
//! Every file carries the config digest and seed. CSV files start with a
//! `# xbar-sim config_digest=<hex> seed=<n>` line followed by a one-line
//! header. State files are JSON documents:
//!
//! * `weights.state`: `{format, version, config_digest, seed, network}` where
//!   `network.layers[k]` holds `weights` (`rows`, `cols`, row-major `data`,
//!   bias row last) and `activation`.
//! * `crossbar.state`: `{format, version, config_digest, seed, network}` where
//!   `network.layers[k].crossbar` holds `g_plus`, `g_minus` (siemens),
//!   `mask_plus`, `mask_minus` (`cells`: stuck conductance or null), the
//!   crossbar `config` and its random `lineage`; `row_order` is the physical
//!   row permutation or null.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::devices::{DeviceModel, ProgrammingResponse, Suitability};
use crate::error::{Error, Result};
use crate::nn::{CrossbarMlp, Mlp};

const MODULE: &str = "cli";
pub const WEIGHTS_FORMAT: &str = "xbar-sim/weights";
pub const CROSSBAR_FORMAT: &str = "xbar-sim/crossbar";
pub const STATE_VERSION: u32 = 1;

/// Digest and seed of the run that produced a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_digest: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comment_line(&self) -> String {
        format!("# xbar-sim config_digest={} seed={}", self.config_digest, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    /// `None` outside a sweep.
    pub sweep_value: Option<f64>,
    pub repetition: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Shortest round-trip text, in exponent form for very small or large magnitudes.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn row_order(a: &ResultRow, b: &ResultRow) -> Ordering {
    let sv = match (a.sweep_value, b.sweep_value) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (x, y) => x.is_some().cmp(&y.is_some()),
    };
    sv.then(a.repetition.cmp(&b.repetition)).then_with(|| a.metric.cmp(&b.metric))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io { module: MODULE, detail: format!("{}: {e}", path.display()) }
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    std::fs::write(path, body).map_err(|e| io_err(path, e))
}

fn csv_text(prov: &Provenance, header: &[&str], records: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    writeln!(buf, "{}", prov.comment_line()).map_err(|e| Error::io(MODULE, e))?;
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(header).map_err(|e| Error::io(MODULE, e))?;
    for r in records {
        w.write_record(&r).map_err(|e| Error::io(MODULE, e))?;
    }
    w.into_inner().map_err(|e| Error::io(MODULE, e))
}

/// Rows sorted by sweep value, repetition, then metric name.
pub fn results_csv(prov: &Provenance, rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut rows = rows.to_vec();
    rows.sort_by(row_order);
    csv_text(
        prov,
        &["sweep_value", "repetition", "seed", "metric", "value"],
        rows.into_iter().map(|r| {
            vec![
                r.sweep_value.map(fmt_num).unwrap_or_default(),
                r.repetition.to_string(),
                r.seed.to_string(),
                r.metric,
                fmt_num(r.value),
            ]
        }),
    )
}

pub fn write_results(path: &Path, prov: &Provenance, rows: &[ResultRow]) -> Result<()> {
    write_file(path, &results_csv(prov, rows)?)
}

/// Parse a results file back into rows, skipping the provenance line.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| io_err(path, e))?;
            let field = |i: usize| rec.get(i).unwrap_or_default();
            let num = |i: usize| field(i).parse::<f64>().map_err(|e| io_err(path, e));
            Ok(ResultRow {
                sweep_value: if field(0).is_empty() { None } else { Some(num(0)?) },
                repetition: field(1).parse().map_err(|e| io_err(path, e))?,
                seed: field(2).parse().map_err(|e| io_err(path, e))?,
                metric: field(3).to_string(),
                value: num(4)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFile<T> {
    pub format: String,
    pub version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub network: T,
}

pub type WeightsState = StateFile<Mlp>;
pub type CrossbarState = StateFile<CrossbarMlp>;

impl<T> StateFile<T> {
    pub fn new(format: &str, prov: &Provenance, network: T) -> Self {
        StateFile {
            format: format.into(),
            version: STATE_VERSION,
            config_digest: prov.config_digest.clone(),
            seed: prov.seed,
            network,
        }
    }
}

pub fn write_state<T: Serialize>(path: &Path, state: &StateFile<T>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(state).map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_state<T: DeserializeOwned>(path: &Path, format: &str) -> Result<StateFile<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let state: StateFile<T> = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    if state.format != format || state.version != STATE_VERSION {
        return Err(io_err(
            path,
            format!("expected {format} version {STATE_VERSION}, found {} version {}", state.format, state.version),
        ));
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_digest: String,
    pub seed: u64,
}

pub fn write_meta(path: &Path, prov: &Provenance, subcommand: &str) -> Result<()> {
    let meta = RunMeta {
        tool: "xbar-sim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: subcommand.into(),
        config_digest: prov.config_digest.clone(),
        seed: prov.seed,
    };
    let text = toml::to_string(&meta).map_err(|e| io_err(path, e))?;
    write_file(path, text.as_bytes())
}

fn suitability(s: Suitability) -> &'static str {
    match s {
        Suitability::No => "no",
        Suitability::Moderate => "moderate",
        Suitability::Yes => "yes",
    }
}

/// One record per device technology.
pub fn presets_csv(prov: &Provenance, presets: &[DeviceModel]) -> Result<Vec<u8>> {
    csv_text(
        prov,
        &[
            "name",
            "on_off_min",
            "on_off_max",
            "on_off_ratio",
            "g_off",
            "g_on",
            "bits",
            "programming",
            "drift_nu",
            "inference",
            "training",
        ],
        presets.iter().map(|d| {
            let programming = match d.programming {
                ProgrammingResponse::Saturating { alpha } => format!("saturating:{alpha}"),
                ProgrammingResponse::Linear { alpha } => format!("linear:{alpha}"),
                ProgrammingResponse::Unsupported => "unsupported".into(),
            };
            vec![
                d.name.clone(),
                fmt_num(d.on_off_range.0),
                fmt_num(d.on_off_range.1),
                fmt_num(d.on_off_ratio),
                fmt_num(d.g_off),
                fmt_num(d.g_on()),
                d.bits.to_string(),
                programming,
                fmt_num(d.drift_nu),
                suitability(d.suitable_for_inference).into(),
                suitability(d.suitable_for_training).into(),
            ]
        }),
    )
}

pub fn write_csv(path: &Path, body: &[u8]) -> Result<()> {
    write_file(path, body)
}

/// `layer,row,col,side,value,residual` records for compensated cells, then
/// `layer,row,col,both,,residual` for cells whose pair is fully stuck.
pub fn compensation_csv(prov: &Provenance, reports: &[crate::mitigation::CompensationReport]) -> Result<Vec<u8>> {
    let mut records = Vec::new();
    for (k, rep) in reports.iter().enumerate() {
        for c in &rep.adjusted {
            let side = match c.side {
                crate::mitigation::PairSide::Plus => "plus",
                crate::mitigation::PairSide::Minus => "minus",
            };
            records.push(vec![
                k.to_string(),
                c.row.to_string(),
                c.col.to_string(),
                side.into(),
                fmt_num(c.value),
                fmt_num(c.residual),
            ]);
        }
        for c in &rep.both_stuck {
            records.push(vec![
                k.to_string(),
                c.row.to_string(),
                c.col.to_string(),
                "both".into(),
                String::new(),
                fmt_num(c.residual),
            ]);
        }
    }
    csv_text(prov, &["layer", "row", "col", "side", "value", "residual"], records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sv: Option<f64>, rep: usize, metric: &str) -> ResultRow {
        ResultRow { sweep_value: sv, repetition: rep, seed: 1, metric: metric.into(), value: 0.5 }
    }

    #[test]
    fn rows_sorted_deterministically() {
        let prov = Provenance { config_digest: "ab".into(), seed: 1 };
        let rows = [row(Some(2.0), 0, "b"), row(Some(0.5), 1, "a"), row(Some(0.5), 0, "b"), row(Some(0.5), 0, "a")];
        let text = String::from_utf8(results_csv(&prov, &rows).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# xbar-sim config_digest=ab seed=1");
        assert_eq!(lines[1], "sweep_value,repetition,seed,metric,value");
        assert_eq!(&lines[2..], ["0.5,0,1,a,0.5", "0.5,0,1,b,0.5", "0.5,1,1,a,0.5", "2,0,1,b,0.5"]);
    }

    #[test]
    fn results_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let prov = Provenance { config_digest: "ff".into(), seed: 3 };
        let rows = vec![row(None, 0, "accuracy"), row(None, 1, "accuracy")];
        write_results(&path, &prov, &rows).unwrap();
        assert_eq!(read_results(&path).unwrap(), rows);
    }
}
