//! Dataset ingestion, the synthetic generator, experiment grids, and artifact output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterexample::CEConfig;
use crate::distribution::{certify_sensitivity, EmpiricalBase, SensitivityReport};
use crate::rng::{derive_indexed, rng_from, SeedStreams};
use crate::training::{fmt_f64, prepare_base, rrm, RRMConfig, RRMTrace};
use crate::{Error, Result};

/// Cell tokens read as missing values.
pub const NA_TOKENS: [&str; 4] = ["", "NA", "NaN", "nan"];

/// Credit-scoring columns that applicants can plausibly change.
pub const DEFAULT_STRATEGIC_COLUMNS: [&str; 3] = [
    "RevolvingUtilizationOfUnsecuredLines",
    "NumberOfOpenCreditLinesAndLoans",
    "NumberRealEstateLoansOrLines",
];

pub const DEFAULT_LABEL_COLUMN: &str = "SeriousDlqin2yrs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Impute {
    Median,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Csv { path: PathBuf },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub label_column: String,
    pub strategic_columns: Vec<String>,
    /// Columns dropped before anything else. Columns with an empty header (row ids)
    /// are always dropped.
    pub ignore_columns: Vec<String>,
    pub standardize: bool,
    pub impute: Impute,
    pub subsample: Option<usize>,
    /// Defaults to the `data` stream of the root seed.
    pub rng_seed: Option<u64>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(SyntheticSpec::default()),
            label_column: DEFAULT_LABEL_COLUMN.into(),
            strategic_columns: DEFAULT_STRATEGIC_COLUMNS.map(String::from).to_vec(),
            ignore_columns: Vec::new(),
            standardize: true,
            impute: Impute::Median,
            subsample: None,
            rng_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_strategic: usize,
    pub n_nonstrategic: usize,
    /// Probability of label 1.
    pub class_balance: f64,
    /// Gap between the class means on every non-strategic coordinate.
    pub separation: f64,
    /// Strategic coordinates take this many evenly spaced values in [-1, 1], which keeps
    /// the strategic product support small.
    pub strategic_levels: usize,
    pub rng_seed: Option<u64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_rows: 2000,
            n_strategic: 2,
            n_nonstrategic: 3,
            class_balance: 0.3,
            separation: 1.5,
            strategic_levels: 5,
            rng_seed: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_strategic == 0 || self.n_nonstrategic == 0 {
            return Err(Error::Config("synthetic counts must be at least 1".into()));
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return Err(Error::Config(format!(
                "class_balance must lie in (0, 1), got {}",
                self.class_balance
            )));
        }
        if !self.separation.is_finite() {
            return Err(Error::Config("separation must be finite".into()));
        }
        if self.strategic_levels < 2 {
            return Err(Error::Config("strategic_levels must be at least 2".into()));
        }
        Ok(())
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.n_nonstrategic)
            .map(|i| format!("f{i}"))
            .chain((0..self.n_strategic).map(|i| format!("s{i}")))
            .collect()
    }
}

/// Raw synthetic rows: features `[non-strategic.., strategic..]` and {0, 1} labels.
pub fn synthetic_rows(spec: &SyntheticSpec, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let seed = spec.rng_seed.unwrap_or(seed);
    let mut rng = rng_from(seed);
    let dim = spec.n_nonstrategic + spec.n_strategic;
    let mut features = Vec::with_capacity(spec.n_rows * dim);
    let mut labels = Vec::with_capacity(spec.n_rows);
    let top = (spec.strategic_levels - 1) as f64;
    for _ in 0..spec.n_rows {
        let y = rng.random::<f64>() < spec.class_balance;
        let shift = if y {
            spec.separation / 2.0
        } else {
            -spec.separation / 2.0
        };
        for _ in 0..spec.n_nonstrategic {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(z + shift);
        }
        for _ in 0..spec.n_strategic {
            let k = rng.random_range(0..spec.strategic_levels) as f64;
            features.push(2.0 * k / top - 1.0);
        }
        labels.push(f64::from(u8::from(y)));
    }
    Ok((features, labels))
}

/// Equal-weight base from the synthetic generator. Strategic coordinates are drawn
/// independently of everything else.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<EmpiricalBase> {
    let (features, labels) = synthetic_rows(spec, spec.rng_seed.unwrap_or(0))?;
    let dim = spec.n_nonstrategic + spec.n_strategic;
    EmpiricalBase::from_rows(
        &features,
        dim,
        &labels,
        (spec.n_nonstrategic..dim).collect(),
    )
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get a standard deviation of 1.
    pub fn fit(features: &[f64], dim: usize) -> Self {
        let n = (features.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform(&self, features: &mut [f64]) {
        let dim = self.mean.len();
        for row in features.chunks_exact_mut(dim) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn inverse(&self, features: &[f64]) -> Vec<f64> {
        let dim = self.mean.len();
        features
            .chunks_exact(dim)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| v * s + m)
            })
            .collect()
    }
}

/// Preprocessed rows and the base built from them. Labels are still {0, 1}.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub base: EmpiricalBase,
    pub columns: Vec<String>,
    pub strategic_columns: Vec<String>,
    pub n_rows: usize,
    pub scaler: Option<Standardizer>,
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let t = raw.trim();
    if NA_TOKENS.contains(&t) {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Data {
            row,
            column: column.to_string(),
            message: format!("cannot parse `{raw}` as a number"),
        }),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Feature column names, rows of possibly missing feature values, and labels.
type RawTable = (Vec<String>, Vec<Vec<Option<f64>>>, Vec<f64>);

fn read_csv(path: &Path, spec: &DatasetSpec) -> Result<RawTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let label_ix = headers
        .iter()
        .position(|h| h == &spec.label_column)
        .ok_or_else(|| Error::Config(format!("label column `{}` not found", spec.label_column)))?;
    for c in &spec.ignore_columns {
        if !headers.contains(c) {
            return Err(Error::Config(format!("ignored column `{c}` not found")));
        }
    }
    let feature_ix: Vec<usize> = (0..headers.len())
        .filter(|&i| {
            i != label_ix
                && !headers[i].trim().is_empty()
                && !spec.ignore_columns.contains(&headers[i])
        })
        .collect();
    if feature_ix.is_empty() {
        return Err(Error::Dataset("no feature columns".into()));
    }
    let columns: Vec<String> = feature_ix.iter().map(|&i| headers[i].clone()).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // Data rows are numbered from 1, after the header.
        let row = r + 1;
        let label =
            parse_cell(&record[label_ix], row, &spec.label_column)?.ok_or_else(|| Error::Data {
                row,
                column: spec.label_column.clone(),
                message: "missing label".into(),
            })?;
        if label != 0.0 && label != 1.0 {
            return Err(Error::Data {
                row,
                column: spec.label_column.clone(),
                message: format!("label must be 0 or 1, got {label}"),
            });
        }
        let values = feature_ix
            .iter()
            .map(|&i| parse_cell(&record[i], row, &headers[i]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
        labels.push(label);
    }
    Ok((columns, rows, labels))
}

/// Load, clean, subsample and standardize a dataset. `root_seed` feeds the `data`
/// stream when the spec carries no seed of its own.
pub fn load_dataset(spec: &DatasetSpec, root_seed: u64) -> Result<LoadedDataset> {
    let seed = spec.rng_seed.unwrap_or(SeedStreams::new(root_seed).data());
    let (columns, mut features, mut labels) = match &spec.source {
        DataSource::Csv { path } => {
            let (columns, rows, labels) = read_csv(path, spec)?;
            let dim = columns.len();
            let (rows, labels): (Vec<_>, Vec<_>) = match spec.impute {
                Impute::Drop => rows
                    .into_iter()
                    .zip(labels)
                    .filter(|(r, _)| r.iter().all(Option::is_some))
                    .unzip(),
                Impute::Median => (rows, labels),
            };
            let mut fill = vec![0.0; dim];
            if spec.impute == Impute::Median {
                for (j, f) in fill.iter_mut().enumerate() {
                    let mut present: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
                    if present.is_empty() {
                        if rows.is_empty() {
                            break;
                        }
                        return Err(Error::Dataset(format!(
                            "column `{}` has no values to impute from",
                            columns[j]
                        )));
                    }
                    *f = median(&mut present);
                }
            }
            let features = rows
                .iter()
                .flat_map(|r| r.iter().zip(&fill).map(|(v, f)| v.unwrap_or(*f)))
                .collect();
            (columns, features, labels)
        }
        DataSource::Synthetic(syn) => {
            let (f, l) = synthetic_rows(syn, seed)?;
            (syn.column_names(), f, l)
        }
    };
    let dim = columns.len();
    if labels.is_empty() {
        return Err(Error::Dataset("no rows left after cleaning".into()));
    }
    let strategic_columns = match &spec.source {
        DataSource::Synthetic(syn) => columns[syn.n_nonstrategic..].to_vec(),
        DataSource::Csv { .. } => spec.strategic_columns.clone(),
    };
    let strategic = strategic_columns
        .iter()
        .map(|c| {
            columns
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::Config(format!("strategic column `{c}` not found")))
        })
        .collect::<Result<Vec<_>>>()?;
    if strategic.len() == dim {
        return Err(Error::Config(
            "at least one feature must be non-strategic".into(),
        ));
    }
    if let Some(n) = spec.subsample {
        if n == 0 || n > labels.len() {
            return Err(Error::Config(format!(
                "subsample {n} must lie in [1, {}]",
                labels.len()
            )));
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng_from(derive_indexed(seed, 1)));
        order.truncate(n);
        order.sort_unstable();
        features = order
            .iter()
            .flat_map(|&i| features[i * dim..(i + 1) * dim].to_vec())
            .collect();
        labels = order.iter().map(|&i| labels[i]).collect();
    }
    let scaler = spec.standardize.then(|| {
        let s = Standardizer::fit(&features, dim);
        s.transform(&mut features);
        s
    });
    let base = EmpiricalBase::from_rows(&features, dim, &labels, strategic)?;
    Ok(LoadedDataset {
        base,
        columns,
        strategic_columns,
        n_rows: labels.len(),
        scaler,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub deltas: Vec<f64>,
    pub hidden_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            deltas: vec![0.1, 0.4, 0.7, 0.9],
            hidden_sizes: vec![6],
            seeds: vec![0],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() || self.hidden_sizes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("grid must have at least one cell".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(f64, usize, u64)> {
        let mut out = Vec::new();
        for &d in &self.deltas {
            for &h in &self.hidden_sizes {
                for &s in &self.seeds {
                    out.push((d, h, s));
                }
            }
        }
        out
    }
}

/// Whole run configuration as read from a TOML or JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub rrm: RRMConfig,
    pub grid: GridSpec,
    /// Predictor pairs per delta when certification is requested.
    pub certify_pairs: usize,
    pub counterexample: CEConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 0,
            dataset: DatasetSpec::default(),
            rrm: RRMConfig::default(),
            grid: GridSpec::default(),
            certify_pairs: 500,
            counterexample: CEConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || self
                .name
                .chars()
                .any(|c| !(c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.'))
            || self.name.starts_with('.')
        {
            return Err(Error::Config(format!(
                "run name `{}` must be a plain file name",
                self.name
            )));
        }
        self.grid.validate()?;
        self.rrm.validate()?;
        self.counterexample.validate()?;
        if let DataSource::Synthetic(s) = &self.dataset.source {
            s.validate()?;
        }
        for &d in &self.grid.deltas {
            RRMConfig {
                delta: d,
                ..self.rrm.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Config for one grid cell. Grid seeds are mapped through the root seed.
    pub fn cell_config(&self, delta: f64, hidden_size: usize, seed: u64) -> RRMConfig {
        RRMConfig {
            delta,
            hidden_size,
            rng_seed: derive_indexed(self.seed, seed),
            ..self.rrm.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub delta: f64,
    pub hidden_size: usize,
    pub seed: u64,
    pub n_atoms: usize,
    pub trace_file: String,
    pub status: String,
    pub iterations: usize,
    pub converged: bool,
    pub final_performative_risk: Option<f64>,
    pub final_delta_pr: Option<f64>,
    pub final_func_dist: Option<f64>,
    pub max_ratio_from_3: Option<f64>,
    pub rate_bound: f64,
    pub final_oracle_dist: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub seed: u64,
    pub n_rows: usize,
    pub columns: Vec<String>,
    pub strategic_columns: Vec<String>,
    pub rrm: RRMConfig,
    pub grid: GridSpec,
    pub cells: Vec<CellSummary>,
    pub certification: Option<Vec<SensitivityReport>>,
    pub failures: usize,
}

#[derive(Debug)]
pub struct CellResult {
    pub summary: CellSummary,
    pub trace: Option<RRMTrace>,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub out_dir: PathBuf,
    pub cells: Vec<CellResult>,
    pub report: Report,
}

impl ExperimentResult {
    pub fn failures(&self) -> usize {
        self.report.failures
    }
}

pub fn trace_file_name(delta: f64, hidden_size: usize, seed: u64) -> String {
    format!("trace_{}_{hidden_size}_{seed}.csv", fmt_f64(delta))
}

pub fn plot_file_name(delta: f64) -> String {
    format!("fig_risk_{}.svg", fmt_f64(delta))
}

fn summarize(
    delta: f64,
    hidden_size: usize,
    seed: u64,
    n_atoms: usize,
    rate_bound: f64,
    outcome: &Result<RRMTrace>,
) -> CellSummary {
    let mut s = CellSummary {
        delta,
        hidden_size,
        seed,
        n_atoms,
        trace_file: trace_file_name(delta, hidden_size, seed),
        status: "ok".into(),
        iterations: 0,
        converged: false,
        final_performative_risk: None,
        final_delta_pr: None,
        final_func_dist: None,
        max_ratio_from_3: None,
        rate_bound,
        final_oracle_dist: None,
        final_accuracy: None,
        error: None,
    };
    match outcome {
        Ok(t) => {
            let last = t.records.last();
            s.iterations = t.records.len();
            s.converged = t.converged;
            s.final_performative_risk = Some(t.final_performative_risk);
            s.final_delta_pr = t.final_delta_pr();
            s.final_func_dist = last.map(|r| r.func_dist_to_prev);
            s.max_ratio_from_3 = t.max_ratio_from(3);
            s.final_oracle_dist = last.and_then(|r| r.dist_to_oracle);
            s.final_accuracy = last.map(|r| r.accuracy_post);
        }
        Err(e) => {
            s.status = "failed".into();
            s.error = Some(e.to_string());
        }
    }
    s
}

/// Run every grid cell concurrently on the current rayon pool and write the artifacts
/// into `out_dir`. Failing cells are recorded and do not stop the others.
pub fn run_experiment(
    data: &LoadedDataset,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    certify: bool,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mode = cfg.rrm.mode;
    let prepared: Vec<Result<EmpiricalBase>> = cfg
        .grid
        .deltas
        .iter()
        .map(|&d| prepare_base(&data.base, d, mode))
        .collect();
    let cells = cfg.grid.cells();
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|&(delta, h, seed)| {
            let k = cfg
                .grid
                .deltas
                .iter()
                .position(|&d| d == delta)
                .unwrap_or(0);
            let cell_cfg = cfg.cell_config(delta, h, seed);
            let (outcome, n_atoms) = match &prepared[k] {
                Ok(base) => (rrm(base, &cell_cfg), base.len()),
                Err(e) => (Err(Error::Dataset(e.to_string())), 0),
            };
            let summary = summarize(delta, h, seed, n_atoms, cell_cfg.rate_bound(), &outcome);
            CellResult {
                summary,
                trace: outcome.ok(),
            }
        })
        .collect();

    for cell in &results {
        if let Some(t) = &cell.trace {
            let path = out_dir.join(&cell.summary.trace_file);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            t.write_csv(std::io::BufWriter::new(file))?;
        }
    }
    write_summary(&out_dir.join("summary.csv"), &results)?;
    for &delta in &cfg.grid.deltas {
        let series: Vec<(String, &RRMTrace)> = results
            .iter()
            .filter(|c| c.summary.delta == delta)
            .filter_map(|c| {
                c.trace.as_ref().map(|t| {
                    (
                        format!("h={} seed={}", c.summary.hidden_size, c.summary.seed),
                        t,
                    )
                })
            })
            .collect();
        let svg = risk_svg(
            &format!("performative risk, delta = {}", fmt_f64(delta)),
            &series,
        );
        let path = out_dir.join(plot_file_name(delta));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    }

    let certification = if certify {
        let seed = SeedStreams::new(cfg.seed).certification();
        let reports = cfg
            .grid
            .deltas
            .iter()
            .zip(&prepared)
            .enumerate()
            .map(|(i, (&d, base))| match base {
                Ok(b) => certify_sensitivity(
                    b,
                    d,
                    cfg.certify_pairs,
                    mode,
                    derive_indexed(seed, i as u64),
                ),
                Err(e) => Err(Error::Dataset(e.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        Some(reports)
    } else {
        None
    };
    let failures = results.iter().filter(|c| c.trace.is_none()).count()
        + certification
            .as_ref()
            .map_or(0, |r| r.iter().filter(|r| !r.all_pass).count());
    let report = Report {
        name: cfg.name.clone(),
        seed: cfg.seed,
        n_rows: data.n_rows,
        columns: data.columns.clone(),
        strategic_columns: data.strategic_columns.clone(),
        rrm: cfg.rrm.clone(),
        grid: cfg.grid.clone(),
        cells: results.iter().map(|c| c.summary.clone()).collect(),
        certification,
        failures,
    };
    let path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report)? + "\n";
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(ExperimentResult {
        out_dir: out_dir.to_path_buf(),
        cells: results,
        report,
    })
}

pub const SUMMARY_COLUMNS: [&str; 15] = [
    "delta",
    "hidden_size",
    "seed",
    "status",
    "n_atoms",
    "iterations",
    "converged",
    "final_pr",
    "final_delta_pr",
    "final_func_dist",
    "max_ratio_from_3",
    "rate_bound",
    "final_oracle_dist",
    "final_accuracy",
    "error",
];

fn write_summary(path: &Path, cells: &[CellResult]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    w.write_record(SUMMARY_COLUMNS)?;
    for c in cells {
        let s = &c.summary;
        w.write_record([
            fmt_f64(s.delta),
            s.hidden_size.to_string(),
            s.seed.to_string(),
            s.status.clone(),
            s.n_atoms.to_string(),
            s.iterations.to_string(),
            s.converged.to_string(),
            opt(s.final_performative_risk),
            opt(s.final_delta_pr),
            opt(s.final_func_dist),
            opt(s.max_ratio_from_3),
            fmt_f64(s.rate_bound),
            opt(s.final_oracle_dist),
            opt(s.final_accuracy),
            s.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Line chart of `risk_post_shift` per iteration on a log10 axis. Each polyline carries
/// the exact CSV strings of its values in `data-values`.
pub fn risk_svg(title: &str, series: &[(String, &RRMTrace)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let floor = 1e-300;
    let logs: Vec<Vec<f64>> = series
        .iter()
        .map(|(_, t)| {
            t.records
                .iter()
                .map(|r| r.risk_post_shift.max(floor).log10())
                .collect()
        })
        .collect();
    let all = logs.iter().flatten().copied();
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() {
        let (a, b) = (lo.floor(), hi.ceil());
        if a == b {
            (a - 1.0, b + 1.0)
        } else {
            (a, b)
        }
    } else {
        (-1.0, 0.0)
    };
    let n_iter = series
        .iter()
        .map(|(_, t)| t.records.len())
        .max()
        .unwrap_or(1)
        .max(2);
    let sx = |i: f64| left + (i - 1.0) / (n_iter as f64 - 1.0) * pw;
    let sy = |v: f64| top + (hi - v) / (hi - lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let mut e = lo as i64;
    while e <= hi as i64 {
        let y = sy(e as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
        e += 1;
    }
    let step = (n_iter / 10).max(1);
    for i in (1..=n_iter).step_by(step) {
        let x = sx(i as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{i}</text>"#,
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">RRM iteration</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    for (k, ((label, trace), ys)) in series.iter().zip(&logs).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", sx(i as f64 + 1.0), sy(v)))
            .collect();
        let values: Vec<String> = trace
            .records
            .iter()
            .map(|r| fmt_f64(r.risk_post_shift))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}" data-label="{}" data-values="{}"/>"#,
            points.join(" "),
            escape(label),
            values.join(" ")
        );
        let ly = top + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 36.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
