//! Configuration, file formats, and the command implementations behind the
//! binary.
//!
//! Formats are chosen for hand-inspection: CSV for data matrices, JSON lines
//! for the trace (one retained sample per line), plain JSON for predictions,
//! truth, metrics, and run metadata, and DOT for graph export. All floats
//! are written with the shortest representation that parses back to the
//! identical bit pattern, so rewriting a file never perturbs values.

use std::collections::HashMap;
use std::fmt::Write as FmtWrite;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::{self, EvaluateError};
use crate::likelihood::LikelihoodError;
use crate::model::{
    chain_rng, validate_dataset, ClusterParams, Dataset, Hyperparams, ModelError, Trace,
    TraceSample,
};
use crate::predict::{self, GraphPrediction};
use crate::sampler::SamplerError;
use crate::simulate::{self, GroundTruth, SimulateError};
use crate::stability;
use crate::tempering;

/// RNG stream offset for prediction so query points never share a stream
/// with sampler chains (streams 0..=W).
const PREDICT_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration, flags, or file contents. Exit code 2.
    #[error("{0}")]
    Config(String),
    /// Filesystem failure. Exit code 3.
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    /// Sampling failure at runtime. Exit code 4.
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Failure(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EvaluateError> for CliError {
    fn from(e: EvaluateError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Config(msg) => CliError::Config(msg),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<LikelihoodError> for CliError {
    fn from(e: LikelihoodError) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        CliError::Failure(e.to_string())
    }
}

/// Everything a run needs, loadable from TOML. Sampler settings live in the
/// `[hyperparams]` table; omitted keys take their defaults, unknown keys are
/// rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub expr_csv: PathBuf,
    pub coords_csv: PathBuf,
    pub out_dir: PathBuf,
    pub hyperparams: Hyperparams,
    /// Explicit query points for prediction, each of covariate length.
    pub predict_points: Vec<Vec<f64>>,
    /// Grid specs such as "x1=0:1:0.1@x2=0.5" (" at " also separates parts).
    pub predict_grids: Vec<String>,
    /// Edge decision threshold on posterior inclusion probability.
    pub threshold: f64,
    pub scenario: u8,
    /// Scenario 1 size parameter: units per cluster.
    pub n_per_cluster: usize,
    /// Scenario 2 size parameter: total units.
    pub n_units: usize,
    /// Worker cap; `BNP_DCGX_THREADS` lowers it further.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            expr_csv: PathBuf::from("expr.csv"),
            coords_csv: PathBuf::from("coords.csv"),
            out_dir: PathBuf::from("."),
            hyperparams: Hyperparams::default(),
            predict_points: Vec::new(),
            predict_grids: Vec::new(),
            threshold: 0.5,
            scenario: 1,
            n_per_cluster: 250,
            n_units: 800,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.hyperparams
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CliError::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.scenario != 1 && self.scenario != 2 {
            return Err(CliError::Config(format!(
                "scenario must be 1 or 2, got {}",
                self.scenario
            )));
        }
        Ok(())
    }
}

/// Read a TOML config, or defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Effective worker count: explicit argument, else config, further capped by
/// the `BNP_DCGX_THREADS` environment variable when set.
pub fn resolve_threads(arg: Option<usize>, config: &RunConfig) -> Result<Option<usize>, CliError> {
    let base = arg.or(config.threads);
    let cap = match std::env::var("BNP_DCGX_THREADS") {
        Err(_) => None,
        Ok(v) => Some(v.parse::<usize>().map_err(|_| {
            CliError::Config(format!("BNP_DCGX_THREADS must be a positive integer, got {v:?}"))
        })?),
    };
    Ok(match (base, cap) {
        (Some(b), Some(c)) => Some(b.min(c)),
        (None, c) => c,
        (b, None) => b,
    })
}

fn fmt_float(v: f64) -> String {
    format!("{v}")
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// CSV data matrices

pub fn default_gene_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("g{j}")).collect()
}

fn matrix_csv(header: &[String], m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_float(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Write expression values (header of gene names) and coordinates (header
/// x1..xq) as two CSV files.
pub fn write_dataset_csv(expr: &Path, coords: &Path, data: &Dataset) -> Result<(), CliError> {
    let names = data
        .gene_names
        .clone()
        .unwrap_or_else(|| default_gene_names(data.p));
    write_text(expr, &matrix_csv(&names, &data.y))?;
    let coord_names: Vec<String> = (1..=data.q).map(|k| format!("x{k}")).collect();
    write_text(coords, &matrix_csv(&coord_names, &data.x))
}

fn parse_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>), CliError> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{}: empty file", path.display())))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(CliError::Config(format!(
                "{}:{}: expected {} fields, found {}",
                path.display(),
                lineno + 2,
                cols,
                fields.len()
            )));
        }
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| {
                CliError::Config(format!(
                    "{}:{}: not a number: {f:?}",
                    path.display(),
                    lineno + 2
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((header, DMatrix::from_row_slice(rows, cols, &values)))
}

/// Read the two CSV files back into a validated dataset.
pub fn read_dataset_csv(expr: &Path, coords: &Path) -> Result<Dataset, CliError> {
    let (names, y) = parse_csv(expr)?;
    let (_, x) = parse_csv(coords)?;
    Ok(validate_dataset(y, x, Some(names))?)
}

// ---------------------------------------------------------------------------
// Trace persistence (JSON lines)

#[derive(Serialize, Deserialize)]
struct ClusterJson {
    b: Vec<Vec<f64>>,
    m: Vec<f64>,
    sigma: Vec<f64>,
    gamma: Vec<Vec<u8>>,
    eta: f64,
    phi: f64,
}

#[derive(Serialize, Deserialize)]
struct SampleJson {
    iteration: usize,
    xi: Vec<usize>,
    clusters: Vec<ClusterJson>,
    loglik: f64,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|j| (0..m.ncols()).map(|k| m[(j, k)]).collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(CliError::Config("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |j, k| rows[j][k]))
}

impl From<&ClusterParams> for ClusterJson {
    fn from(c: &ClusterParams) -> Self {
        ClusterJson {
            b: matrix_rows(&c.b),
            m: c.m.iter().copied().collect(),
            sigma: c.sigma.iter().copied().collect(),
            gamma: (0..c.gamma.nrows())
                .map(|j| (0..c.gamma.ncols()).map(|k| c.gamma[(j, k)]).collect())
                .collect(),
            eta: c.eta,
            phi: c.phi,
        }
    }
}

impl TryFrom<ClusterJson> for ClusterParams {
    type Error = CliError;

    fn try_from(c: ClusterJson) -> Result<Self, CliError> {
        let b = rows_matrix(&c.b)?;
        let p = b.nrows();
        if b.ncols() != p || c.gamma.len() != p || c.gamma.iter().any(|r| r.len() != p) {
            return Err(CliError::Config("cluster matrices must be square".into()));
        }
        Ok(ClusterParams {
            b,
            m: DVector::from_vec(c.m),
            sigma: DVector::from_vec(c.sigma),
            gamma: DMatrix::from_fn(p, p, |j, k| c.gamma[j][k]),
            eta: c.eta,
            phi: c.phi,
        })
    }
}

/// One JSON object per retained sample. Per-unit rescalings are runtime
/// state, not part of the persisted posterior.
pub fn write_trace_jsonl(path: &Path, trace: &Trace) -> Result<(), CliError> {
    let mut out = String::new();
    for s in &trace.samples {
        let line = SampleJson {
            iteration: s.iteration,
            xi: s.xi.clone(),
            clusters: s.clusters.iter().map(ClusterJson::from).collect(),
            loglik: s.loglik,
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable sample"));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Read retained samples back; blank lines (including a trailing newline)
/// are ignored.
pub fn read_trace_jsonl(path: &Path) -> Result<Vec<TraceSample>, CliError> {
    let text = read_text(path)?;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SampleJson = serde_json::from_str(line).map_err(|e| {
            CliError::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let clusters: Result<Vec<ClusterParams>, CliError> = parsed
            .clusters
            .into_iter()
            .map(ClusterParams::try_from)
            .collect();
        samples.push(TraceSample {
            iteration: parsed.iteration,
            xi: parsed.xi,
            clusters: clusters?,
            tau: DMatrix::zeros(0, 0),
            loglik: parsed.loglik,
        });
    }
    Ok(samples)
}

/// Assemble a trace around reloaded samples using the caller's settings
/// (swap bookkeeping lives in meta.json, not in the sample stream).
pub fn trace_from_samples(samples: Vec<TraceSample>, hp: &Hyperparams) -> Trace {
    Trace {
        samples,
        hyperparams: hp.clone(),
        swap_stats: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Run metadata

#[derive(Serialize, Deserialize)]
pub struct SwapRate {
    pub pair: (usize, usize),
    pub proposed: u64,
    pub accepted: u64,
    pub rate: f64,
}

#[derive(Serialize, Deserialize)]
pub struct RunMeta {
    pub config: RunConfig,
    pub swap_acceptance: Vec<SwapRate>,
    pub retained_samples: usize,
    /// Masked out when comparing runs for determinism.
    pub wall_time_secs: f64,
}

// ---------------------------------------------------------------------------
// Ground truth persistence

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthJson {
    Clustered {
        xi: Vec<usize>,
        b: Vec<Vec<Vec<f64>>>,
        m: Vec<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
        skeletons: Vec<Vec<(usize, usize)>>,
        spectral_radius: Vec<f64>,
    },
    Functional {
        b_units: Vec<Vec<Vec<f64>>>,
        m: Vec<f64>,
        sigma: Vec<f64>,
    },
}

impl From<&GroundTruth> for TruthJson {
    fn from(t: &GroundTruth) -> Self {
        match t {
            GroundTruth::Clustered {
                xi,
                b,
                m,
                sigma,
                skeletons,
                spectral_radius,
                ..
            } => TruthJson::Clustered {
                xi: xi.clone(),
                b: b.iter().map(matrix_rows).collect(),
                m: m.iter().map(|v| v.iter().copied().collect()).collect(),
                sigma: sigma.iter().map(|v| v.iter().copied().collect()).collect(),
                skeletons: skeletons.clone(),
                spectral_radius: spectral_radius.clone(),
            },
            GroundTruth::Functional {
                b_units, m, sigma, ..
            } => TruthJson::Functional {
                b_units: b_units.iter().map(matrix_rows).collect(),
                m: m.iter().copied().collect(),
                sigma: sigma.iter().copied().collect(),
            },
        }
    }
}

pub fn read_truth(path: &Path) -> Result<TruthJson, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Prediction records

#[derive(Serialize, Deserialize)]
pub struct PredictionRecord {
    pub x_new: Vec<f64>,
    pub b_mean: Vec<Vec<f64>>,
    pub b_sd: Vec<Vec<f64>>,
    pub edge_prob: Vec<Vec<f64>>,
    pub all_stable: bool,
}

impl PredictionRecord {
    fn new(x_new: &[f64], pred: &GraphPrediction) -> Self {
        PredictionRecord {
            x_new: x_new.to_vec(),
            b_mean: matrix_rows(&pred.b_mean),
            b_sd: matrix_rows(&pred.b_sd()),
            edge_prob: matrix_rows(&pred.edge_prob),
            all_stable: pred.all_stable,
        }
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Grid specs

/// Expand a spec such as "x1=0:1:0.1@x2=0.5" into covariate points. Each
/// part is either a fixed value ("x2=0.5") or an inclusive range
/// ("x1=start:end:step"); parts combine as a Cartesian product with the
/// first coordinate varying slowest. " at " separates parts like "@" does.
pub fn parse_grid(spec: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let normalized = spec.replace(" at ", "@");
    let mut axes: Vec<(usize, Vec<f64>)> = Vec::new();
    for part in normalized.split('@') {
        let part = part.trim();
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("grid part {part:?} lacks '='")))?;
        let name = name.trim();
        let dim: usize = name
            .strip_prefix('x')
            .and_then(|d| d.parse().ok())
            .filter(|&d| d >= 1)
            .ok_or_else(|| {
                CliError::Config(format!("grid axis {name:?} is not of the form xK"))
            })?;
        let pieces: Vec<&str> = value.split(':').map(str::trim).collect();
        let parse_one = |s: &str| -> Result<f64, CliError> {
            s.parse()
                .map_err(|_| CliError::Config(format!("grid value {s:?} is not a number")))
        };
        let values = match pieces.as_slice() {
            [v] => vec![parse_one(v)?],
            [start, end, step] => {
                let (start, end, step) = (parse_one(start)?, parse_one(end)?, parse_one(step)?);
                if !(step > 0.0) || end < start {
                    return Err(CliError::Config(format!(
                        "grid range {value:?} needs end >= start and step > 0"
                    )));
                }
                let count = ((end - start) / step + 1e-9).floor() as usize + 1;
                (0..count).map(|i| start + i as f64 * step).collect()
            }
            _ => {
                return Err(CliError::Config(format!(
                    "grid value {value:?} must be a number or start:end:step"
                )))
            }
        };
        if axes.iter().any(|(d, _)| *d == dim - 1) {
            return Err(CliError::Config(format!("grid axis x{dim} given twice")));
        }
        axes.push((dim - 1, values));
    }
    axes.sort_by_key(|(d, _)| *d);
    for (slot, (d, _)) in axes.iter().enumerate() {
        if *d != slot {
            return Err(CliError::Config(format!(
                "grid axes must cover x1..x{} with no gaps",
                axes.len()
            )));
        }
    }
    let mut points = vec![Vec::new()];
    for (_, values) in &axes {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for stem in &points {
            for &v in values {
                let mut point = stem.clone();
                point.push(v);
                next.push(point);
            }
        }
        points = next;
    }
    Ok(points)
}

/// Parse an explicit point such as "0.3,0.7".
pub fn parse_point(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("point value {s:?} is not a number")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// DOT export

/// Render one graph: nodes always, a directed edge wherever the probability
/// strictly exceeds the threshold, width scaled from 1 at probability 0 to 5
/// at probability 1.
pub fn dot_graph(name: &str, gene_names: &[String], prob: &DMatrix<f64>, threshold: f64) -> String {
    let p = prob.nrows();
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{name}\" {{");
    out.push_str("  rankdir=LR;\n");
    for g in gene_names {
        let _ = writeln!(out, "  \"{g}\";");
    }
    for j in 0..p {
        for k in 0..p {
            if j != k && prob[(j, k)] > threshold {
                let _ = writeln!(
                    out,
                    "  \"{}\" -> \"{}\" [penwidth={:.2}, label=\"{:.3}\"];",
                    gene_names[k],
                    gene_names[j],
                    1.0 + 4.0 * prob[(j, k)],
                    prob[(j, k)]
                );
            }
        }
    }
    out.push_str("}\n");
    out
}

// ---------------------------------------------------------------------------
// Commands

/// Generate a synthetic dataset with stored ground truth.
pub fn cmd_simulate(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let seed = config.hyperparams.seed;
    let (data, truth) = match config.scenario {
        1 => simulate::gen_scenario1(config.n_per_cluster, seed)?,
        2 => simulate::gen_scenario2(config.n_units, seed)?,
        _ => unreachable!("validated above"),
    };
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_dataset_csv(&dir.join("expr.csv"), &dir.join("coords.csv"), &data)?;
    write_text(
        &dir.join("truth.json"),
        &json_pretty(&TruthJson::from(&truth)),
    )
}

/// Run the tempered sampler and persist the retained samples plus metadata.
pub fn cmd_fit(
    config: &RunConfig,
    threads: Option<usize>,
    mut progress: impl FnMut(usize),
) -> Result<(), CliError> {
    config.validate()?;
    let data = read_dataset_csv(&config.expr_csv, &config.coords_csv)?;
    let start = Instant::now();
    let trace = tempering::run_tempered(&data, &config.hyperparams, threads, &mut progress)?;
    let wall_time_secs = start.elapsed().as_secs_f64();
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_trace_jsonl(&dir.join("trace.jsonl"), &trace)?;
    let meta = RunMeta {
        config: config.clone(),
        swap_acceptance: trace
            .swap_stats
            .iter()
            .map(|s| SwapRate {
                pair: s.pair,
                proposed: s.proposed,
                accepted: s.accepted,
                rate: if s.proposed == 0 {
                    0.0
                } else {
                    s.accepted as f64 / s.proposed as f64
                },
            })
            .collect(),
        retained_samples: trace.samples.len(),
        wall_time_secs,
    };
    write_text(&dir.join("meta.json"), &json_pretty(&meta))
}

/// Collect the query points from a config: explicit points first, then
/// expanded grids, in declaration order.
pub fn query_points(config: &RunConfig) -> Result<Vec<Vec<f64>>, CliError> {
    let mut points = config.predict_points.clone();
    for spec in &config.predict_grids {
        points.extend(parse_grid(spec)?);
    }
    Ok(points)
}

/// Predict the graph at each configured query point.
pub fn cmd_predict(config: &RunConfig, trace_path: &Path, out: &Path) -> Result<(), CliError> {
    config.validate()?;
    let data = read_dataset_csv(&config.expr_csv, &config.coords_csv)?;
    let hp = &config.hyperparams;
    let trace = trace_from_samples(read_trace_jsonl(trace_path)?, hp);
    let points = query_points(config)?;
    if points.is_empty() {
        return Err(CliError::Config(
            "no prediction points: give predict_points, predict_grids, --point, or --grid".into(),
        ));
    }
    let mut records = Vec::with_capacity(points.len());
    for (idx, point) in points.iter().enumerate() {
        if point.len() != data.q {
            return Err(CliError::Config(format!(
                "query point {point:?} has {} coordinates, data has {}",
                point.len(),
                data.q
            )));
        }
        let x_new = DVector::from_column_slice(point);
        let mut rng = chain_rng(hp.seed, PREDICT_STREAM_BASE + idx as u64);
        let pred = predict::predict_b(&x_new, &trace, &data, hp, &mut rng)?;
        records.push(PredictionRecord::new(point, &pred));
    }
    write_text(out, &json_pretty(&records))
}

/// DOT export: per-location graphs from a predictions file, or per-unit
/// graphs plus the union graph from a trace. `units` limits the per-unit
/// files; the union graph always covers every unit.
pub fn cmd_export_graph(
    config: &RunConfig,
    predictions: Option<&Path>,
    trace_path: Option<&Path>,
    units: Option<&[usize]>,
) -> Result<(), CliError> {
    config.validate()?;
    if predictions.is_none() && trace_path.is_none() {
        return Err(CliError::Config(
            "export-graph needs --predictions and/or --trace".into(),
        ));
    }
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let threshold = config.threshold;

    if let Some(pred_path) = predictions {
        let records = read_predictions(pred_path)?;
        for (idx, rec) in records.iter().enumerate() {
            let prob = rows_matrix(&rec.edge_prob)?;
            let names = default_gene_names(prob.nrows());
            let name = format!("location_{idx:03}");
            let dot = dot_graph(&name, &names, &prob, threshold);
            write_text(&dir.join(format!("{name}.dot")), &dot)?;
        }
    }

    if let Some(tp) = trace_path {
        let data = read_dataset_csv(&config.expr_csv, &config.coords_csv)?;
        let trace = trace_from_samples(read_trace_jsonl(tp)?, &config.hyperparams);
        if trace.samples.is_empty() {
            return Err(CliError::Config("trace has no retained samples".into()));
        }
        let names = data
            .gene_names
            .clone()
            .unwrap_or_else(|| default_gene_names(data.p));
        let fitted = predict::fitted_graphs(&trace, &data, threshold);
        let selected: Vec<usize> = match units {
            Some(list) => {
                if let Some(&bad) = list.iter().find(|&&u| u >= data.n) {
                    return Err(CliError::Config(format!(
                        "unit {bad} out of range for {} units",
                        data.n
                    )));
                }
                list.to_vec()
            }
            None => (0..data.n).collect(),
        };
        for &u in &selected {
            let name = format!("unit_{u:04}");
            let dot = dot_graph(&name, &names, &fitted.unit_edge_prob[u], threshold);
            write_text(&dir.join(format!("{name}.dot")), &dot)?;
        }
        // Union graph: an edge appears when any unit's graph kept it; width
        // tracks the fraction of units keeping it.
        let union_dot = dot_graph("union", &names, &fitted.union_freq, 0.0);
        write_text(&dir.join("union.dot"), &union_dot)?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub cluster: usize,
    pub tpr: f64,
    pub fdr: f64,
    pub mcc: f64,
}

#[derive(Serialize, Deserialize)]
pub struct EntryMetrics {
    pub target: usize,
    pub source: usize,
    pub rmse: f64,
    pub coverage: f64,
}

#[derive(Serialize, Deserialize)]
pub struct MetricsJson {
    pub threshold: f64,
    /// The bounded square-root-denominator form of the Matthews correlation.
    pub mcc_definition: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<ClusterMetrics>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clustering_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<EntryMetrics>>,
}

fn adjacency_of(b: &DMatrix<f64>) -> DMatrix<u8> {
    DMatrix::from_fn(b.nrows(), b.ncols(), |j, k| u8::from(j != k && b[(j, k)] != 0.0))
}

/// Per-true-cluster structure metrics: average the per-unit edge
/// probabilities over each true cluster's units, threshold, and score
/// against that cluster's true adjacency. Label-free by construction.
pub fn cluster_structure_metrics(
    trace: &Trace,
    data: &Dataset,
    true_xi: &[usize],
    true_b: &[DMatrix<f64>],
    threshold: f64,
) -> Result<Vec<ClusterMetrics>, CliError> {
    if true_xi.len() != data.n {
        return Err(CliError::Config(format!(
            "truth has {} labels, data has {} units",
            true_xi.len(),
            data.n
        )));
    }
    let fitted = predict::fitted_graphs(trace, data, threshold);
    let p = data.p;
    let mut out = Vec::with_capacity(true_b.len());
    for (l, b_true) in true_b.iter().enumerate() {
        let members: Vec<usize> = (0..data.n).filter(|&i| true_xi[i] == l).collect();
        if members.is_empty() {
            return Err(CliError::Config(format!("true cluster {l} has no units")));
        }
        let mut avg = DMatrix::zeros(p, p);
        for &i in &members {
            avg += &fitted.unit_edge_prob[i];
        }
        avg /= members.len() as f64;
        let est = DMatrix::from_fn(p, p, |j, k| u8::from(j != k && avg[(j, k)] > threshold));
        let c = evaluate::confusion(&est, &adjacency_of(b_true))?;
        let (tpr, fdr, mcc) = evaluate::tpr_fdr_mcc(&c);
        out.push(ClusterMetrics {
            cluster: l,
            tpr,
            fdr,
            mcc,
        });
    }
    Ok(out)
}

/// Score a trace against stored ground truth and write metrics.json.
pub fn cmd_evaluate(
    config: &RunConfig,
    trace_path: &Path,
    truth_path: &Path,
    out: &Path,
) -> Result<(), CliError> {
    config.validate()?;
    let data = read_dataset_csv(&config.expr_csv, &config.coords_csv)?;
    let hp = &config.hyperparams;
    let trace = trace_from_samples(read_trace_jsonl(trace_path)?, hp);
    if trace.samples.is_empty() {
        return Err(CliError::Config("trace has no retained samples".into()));
    }
    let truth = read_truth(truth_path)?;
    let threshold = config.threshold;
    let mut metrics = MetricsJson {
        threshold,
        mcc_definition: "(tn*tp - fn*fp) / sqrt((tp+fp)(tp+fn)(tn+fp)(tn+fn))".into(),
        clusters: None,
        clustering_accuracy: None,
        entries: None,
    };
    match truth {
        TruthJson::Clustered { xi, b, .. } => {
            let true_b: Result<Vec<DMatrix<f64>>, CliError> =
                b.iter().map(|rows| rows_matrix(rows)).collect();
            let true_b = true_b?;
            metrics.clusters = Some(cluster_structure_metrics(
                &trace, &data, &xi, &true_b, threshold,
            )?);
            // Clustering quality from the highest-likelihood retained sample.
            let best = trace
                .samples
                .iter()
                .max_by(|a, b| a.loglik.total_cmp(&b.loglik))
                .expect("nonempty trace");
            let (_, accuracy) = evaluate::align_clusters(&best.xi, &xi);
            metrics.clustering_accuracy = Some(accuracy);
        }
        TruthJson::Functional { b_units, .. } => {
            if b_units.len() != data.n {
                return Err(CliError::Config(format!(
                    "truth has {} unit matrices, data has {} units",
                    b_units.len(),
                    data.n
                )));
            }
            let truth_mats: Result<Vec<DMatrix<f64>>, CliError> =
                b_units.iter().map(|rows| rows_matrix(rows)).collect();
            let truth_mats = truth_mats?;
            // Evaluate recovery at the observed covariate points; look the
            // truth up by the exact bit pattern of the coordinates.
            let mut by_bits: HashMap<Vec<u64>, usize> = HashMap::new();
            let mut grid = Vec::with_capacity(data.n);
            for i in 0..data.n {
                let x: DVector<f64> = data.x.row(i).transpose();
                by_bits.insert(x.iter().map(|v| v.to_bits()).collect(), i);
                grid.push(x);
            }
            let truth_fn = move |x: &DVector<f64>| {
                let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                truth_mats[by_bits[&key]].clone()
            };
            let mut rng = chain_rng(hp.seed, PREDICT_STREAM_BASE);
            let rec =
                evaluate::curve_recovery(&trace, &data, hp, truth_fn, &grid, &mut rng)?;
            metrics.entries = Some(
                rec.entries
                    .iter()
                    .zip(rec.rmse.iter().zip(rec.coverage.iter()))
                    .map(|(&(target, source), (&rmse, &coverage))| EntryMetrics {
                        target,
                        source,
                        rmse,
                        coverage,
                    })
                    .collect(),
            );
        }
    }
    write_text(out, &json_pretty(&metrics))
}

/// Reload a trace and confirm every persisted coefficient matrix still
/// satisfies the stability predicate.
pub fn verify_trace_stability(samples: &[TraceSample], eps: f64) -> Result<(), CliError> {
    for s in samples {
        for c in &s.clusters {
            let ok = stability::is_stable(&c.b, eps)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            if !ok {
                return Err(CliError::Failure(format!(
                    "iteration {}: persisted coefficient matrix violates stability",
                    s.iteration
                )));
            }
        }
    }
    Ok(())
}
