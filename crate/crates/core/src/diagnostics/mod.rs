//! Trace analytics and export: EMA traces of per-op gradient sums, ℓ1 change
//! of the softmax weights, alignment curves, and the on-disk run summary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{rank_of, Rank, TabularBench};
use crate::search_space::{CellSpec, Genotype};
use crate::trainer::{Phase, SearchResult, TraceRecord, Variant};

/// Decay used for the per-op gradient traces.
pub const OP_GRAD_DECAY: f64 = 0.999;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("vectors have lengths {0} and {1}")]
    Length(usize, usize),
    #[error("decay must lie in (0, 1), got {0}")]
    Decay(f64),
    #[error("trace is empty")]
    EmptyTrace,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DiagnosticsError + '_ {
    move |source| DiagnosticsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl ToString) -> DiagnosticsError {
    DiagnosticsError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmaSeries {
    pub value: f64,
    pub history: Vec<f64>,
}

/// Exponential moving averages of named series. The first sample of a series
/// initializes it; later ones apply `v ← d·v + (1−d)·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaTrace {
    decay: f64,
    series: BTreeMap<String, EmaSeries>,
}

impl EmaTrace {
    pub fn new(decay: f64) -> Result<Self, DiagnosticsError> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(DiagnosticsError::Decay(decay));
        }
        Ok(Self {
            decay,
            series: BTreeMap::new(),
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn update(&mut self, series: &str, x: f64) -> f64 {
        let d = self.decay;
        let s = self.series.entry(series.to_string()).or_default();
        s.value = if s.history.is_empty() { x } else { d * s.value + (1.0 - d) * x };
        s.history.push(s.value);
        s.value
    }

    pub fn get(&self, series: &str) -> Option<&EmaSeries> {
        self.series.get(series)
    }

    pub fn series(&self) -> impl Iterator<Item = (&str, &EmaSeries)> {
        self.series.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// EMA traces of the per-op gradient sums, one series per
/// `{shallow,deep}/<op>`, updated once per inner step.
pub fn op_grad_traces(result: &SearchResult, decay: f64) -> Result<EmaTrace, DiagnosticsError> {
    let mut ema = EmaTrace::new(decay)?;
    let ops = result.net.cell.ops();
    for sample in &result.op_grads {
        for (o, op) in ops.iter().enumerate() {
            ema.update(&format!("shallow/{op}"), sample.shallow[o]);
            ema.update(&format!("deep/{op}"), sample.deep[o]);
        }
    }
    Ok(ema)
}

/// `Σ|p_next − p_prev|`.
pub fn l1_change(p_prev: &[f64], p_next: &[f64]) -> Result<f64, DiagnosticsError> {
    if p_prev.len() != p_next.len() {
        return Err(DiagnosticsError::Length(p_prev.len(), p_next.len()));
    }
    Ok(p_prev.iter().zip(p_next).map(|(a, b)| (b - a).abs()).sum())
}

pub fn cumulative(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Increments of the cumulative ℓ1 curve over the middle and final thirds of
/// the epochs.
pub fn plateau_increments(result: &SearchResult) -> Option<(f64, f64)> {
    let e = &result.epochs;
    let third = e.len() / 3;
    if third == 0 {
        return None;
    }
    let at = |i: usize| e[i].cumulative_l1;
    let mid = at(2 * third - 1) - at(third - 1);
    let last = at(e.len() - 1) - at(2 * third - 1);
    Some((mid, last))
}

/// True when at least half of the edges carry zero, skip or avg_scale.
pub fn collapse_flag(genotype: &Genotype, spec: &CellSpec) -> bool {
    2 * genotype.non_parametric_edges(spec) >= spec.num_edges()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub genotype: String,
    pub genotype_ops: String,
    pub variant: Variant,
    pub seed: u64,
    pub lambda_max: f64,
    pub epochs: usize,
    pub final_lambda: Option<f64>,
    pub cumulative_l1: f64,
    pub rank: Option<Rank>,
    pub collapse_flag: bool,
}

impl RunSummary {
    pub fn new(result: &SearchResult, bench: Option<&TabularBench>) -> Result<Self, crate::oracle::OracleError> {
        let cell = &result.net.cell;
        Ok(Self {
            genotype: result.genotype.to_string(),
            genotype_ops: result.genotype.describe(cell),
            variant: result.config.variant,
            seed: result.config.seed,
            lambda_max: result.config.lambda_max,
            epochs: result.epochs.len(),
            final_lambda: result.final_lambda(),
            cumulative_l1: result.epochs.last().map_or(0.0, |e| e.cumulative_l1),
            rank: bench.map(|b| rank_of(&result.genotype, b)).transpose()?,
            collapse_flag: collapse_flag(&result.genotype, cell),
        })
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Inner => "inner",
        Phase::Outer => "outer",
    }
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<(), DiagnosticsError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| parse_err(path, e);
    w.write_record(TraceRecord::FIELDS).map_err(wrap)?;
    for r in trace {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            phase_name(r.phase).to_string(),
            fmt_f64(r.loss),
            fmt_f64(r.lambda_t),
            fmt_opt(r.lambda),
            fmt_opt(r.lambda_sign),
            fmt_f64(r.grad_norm_alpha),
            fmt_f64(r.min_layer_grad_norm),
            r.skipped_reg.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>, DiagnosticsError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header = r.headers().map_err(|e| parse_err(path, e))?.clone();
    if header.iter().ne(TraceRecord::FIELDS) {
        return Err(parse_err(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| parse_err(path, e))?;
        let bad = |field: &str| parse_err(path, format!("row {}: bad {field}", i + 1));
        let num = |k: usize| row[k].parse::<f64>().map_err(|_| bad(TraceRecord::FIELDS[k]));
        let opt = |k: usize| if row[k].is_empty() { Ok(None) } else { num(k).map(Some) };
        out.push(TraceRecord {
            step: row[0].parse().map_err(|_| bad("step"))?,
            epoch: row[1].parse().map_err(|_| bad("epoch"))?,
            phase: match &row[2] {
                "inner" => Phase::Inner,
                "outer" => Phase::Outer,
                _ => return Err(bad("phase")),
            },
            loss: num(3)?,
            lambda_t: num(4)?,
            lambda: opt(5)?,
            lambda_sign: opt(6)?,
            grad_norm_alpha: num(7)?,
            min_layer_grad_norm: num(8)?,
            skipped_reg: row[9].parse().map_err(|_| bad("skipped_reg"))?,
        });
    }
    Ok(out)
}

pub fn write_trace_jsonl(path: &Path, trace: &[TraceRecord]) -> Result<(), DiagnosticsError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in trace {
        let line = serde_json::to_string(r).map_err(|e| parse_err(path, e))?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trace_jsonl(path: &Path) -> Result<Vec<TraceRecord>, DiagnosticsError> {
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(io_err(path))?;
            serde_json::from_str(&line).map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DiagnosticsError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes `trace.csv` or `trace.jsonl` plus `summary.json` into `dir`.
pub fn export_traces(
    result: &SearchResult,
    format: ExportFormat,
    dir: &Path,
    bench: Option<&TabularBench>,
) -> Result<RunSummary, DiagnosticsError> {
    if result.trace.is_empty() {
        return Err(DiagnosticsError::EmptyTrace);
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    match format {
        ExportFormat::Csv => write_trace_csv(&dir.join("trace.csv"), &result.trace)?,
        ExportFormat::Json => write_trace_jsonl(&dir.join("trace.jsonl"), &result.trace)?,
    }
    let summary_path = dir.join("summary.json");
    let summary = RunSummary::new(result, bench).map_err(|e| parse_err(&summary_path, e))?;
    write_json(&summary_path, &summary)?;
    Ok(summary)
}

/// One point of a plot-ready long-format series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub step: u64,
    pub series: String,
    pub value: f64,
}

/// Per-epoch `Λ` (and `Λ±` when defined) on the train split.
pub fn alignment_series(result: &SearchResult, label: &str) -> Vec<SeriesPoint> {
    let mut out = Vec::new();
    for e in &result.epochs {
        if let Some(a) = &e.alignment {
            out.push(SeriesPoint {
                step: e.epoch as u64,
                series: format!("{label}/Lambda"),
                value: a.lambda,
            });
            if let Some(s) = a.lambda_sign {
                out.push(SeriesPoint {
                    step: e.epoch as u64,
                    series: format!("{label}/Lambda_sign"),
                    value: s,
                });
            }
        }
    }
    out
}

/// EMA per-op gradient sums, indexed by inner-step count.
pub fn op_grad_series(result: &SearchResult, label: &str, decay: f64) -> Result<Vec<SeriesPoint>, DiagnosticsError> {
    let ema = op_grad_traces(result, decay)?;
    let mut out = Vec::new();
    for (name, s) in ema.series() {
        for (&value, sample) in s.history.iter().zip(&result.op_grads) {
            out.push(SeriesPoint {
                step: sample.step,
                series: format!("{label}/{name}"),
                value,
            });
        }
    }
    Ok(out)
}

/// Cumulative ℓ1 change of the softmax weights per epoch.
pub fn l1_series(result: &SearchResult, label: &str) -> Vec<SeriesPoint> {
    result
        .epochs
        .iter()
        .map(|e| SeriesPoint {
            step: e.epoch as u64,
            series: format!("{label}/cumulative_l1"),
            value: e.cumulative_l1,
        })
        .collect()
}

pub fn write_series_csv(path: &Path, points: &[SeriesPoint]) -> Result<(), DiagnosticsError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| parse_err(path, e);
    w.write_record(["step", "series", "value"]).map_err(wrap)?;
    for p in points {
        w.write_record([p.step.to_string(), p.series.clone(), fmt_f64(p.value)]).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `alignment.csv`, `op_grads.csv` and `l1_change.csv` for the
/// labelled runs into `dir`; returns the written paths.
pub fn write_report(dir: &Path, runs: &[(String, &SearchResult)]) -> Result<Vec<PathBuf>, DiagnosticsError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (mut align, mut grads, mut l1) = (Vec::new(), Vec::new(), Vec::new());
    for (label, r) in runs {
        align.extend(alignment_series(r, label));
        grads.extend(op_grad_series(r, label, OP_GRAD_DECAY)?);
        l1.extend(l1_series(r, label));
    }
    let mut written = Vec::new();
    for (name, points) in [("alignment.csv", align), ("op_grads.csv", grads), ("l1_change.csv", l1)] {
        let path = dir.join(name);
        write_series_csv(&path, &points)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests;
