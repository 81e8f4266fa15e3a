//! File ingestion: turns the three telemetry formats into aligned time
//! series.
//!
//! Metrics arrive as CSV (`time,<service>_<metric>,...`), logs as JSON
//! Lines (`{"time":..,"service":..,"message":..}`), and traces as CSV
//! (`time,trace_id,service,operation,latency_ms,status`). Rates (metric
//! values, latencies) are averaged within each bin and forward-filled
//! across gaps; counts (template occurrences, errors) are summed and
//! zero-filled.

pub mod drain;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{AnalysisWindow, IngestDiagnostics, SourceKind, TelemetryBundle, TimeSeries};
use crate::parallel;

pub use drain::{DrainConfig, DrainParser, LogTemplate};

/// One raw log line.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LogRecord {
    pub time: i64,
    pub service: String,
    pub message: String,
}

/// One trace span observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: i64,
    pub service: String,
    pub operation: String,
    pub latency_ms: f64,
    pub status: String,
}

impl TraceRecord {
    /// HTTP statuses >= 400 and anything other than ok/success count as
    /// errors.
    pub fn is_error(&self) -> bool {
        if let Ok(code) = self.status.trim().parse::<u32>() {
            return code >= 400;
        }
        !matches!(
            self.status.trim().to_ascii_lowercase().as_str(),
            "ok" | "success"
        )
    }
}

/// Accumulates per-bin samples and resolves them into a full-window series.
struct BinAccumulator {
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl BinAccumulator {
    fn new(n_bins: usize) -> Self {
        BinAccumulator {
            sums: vec![0.0; n_bins],
            counts: vec![0; n_bins],
        }
    }

    fn add(&mut self, bin: usize, value: f64) {
        self.sums[bin] += value;
        self.counts[bin] += 1;
    }

    /// Mean within each bin, forward-filling empty bins and zero-filling
    /// leading gaps. Returns (values, missing-mask).
    fn mean_filled(&self) -> (Vec<f64>, Vec<bool>) {
        let mut values = Vec::with_capacity(self.sums.len());
        let mut missing = Vec::with_capacity(self.sums.len());
        let mut last = 0.0;
        for (sum, count) in self.sums.iter().zip(self.counts.iter()) {
            if *count > 0 {
                last = sum / *count as f64;
                values.push(last);
                missing.push(false);
            } else {
                values.push(last);
                missing.push(true);
            }
        }
        (values, missing)
    }

}

/// Reads a metrics CSV into one series per column.
///
/// Column names split on the first underscore into (service, metric);
/// samples are averaged within each window bin.
pub fn read_metrics(path: &Path, window: &AnalysisWindow) -> Result<Vec<TimeSeries>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.is_empty() || headers.get(0) != Some("time") {
        return Err(Error::parse(path, "metrics header must start with `time`"));
    }
    let mut columns = Vec::new();
    for (idx, name) in headers.iter().enumerate().skip(1) {
        let Some((service, metric)) = name.split_once('_') else {
            return Err(Error::parse(
                path,
                format!("metric column `{name}` has no `<service>_<metric>` shape"),
            ));
        };
        if service.is_empty() || metric.is_empty() {
            return Err(Error::parse(path, format!("metric column `{name}` is malformed")));
        }
        columns.push((idx, service.to_string(), metric.to_string()));
    }

    let n_bins = window.n_bins();
    let mut accs: Vec<BinAccumulator> = columns.iter().map(|_| BinAccumulator::new(n_bins)).collect();
    let mut last_time = i64::MIN;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        rows += 1;
        let time: i64 = record
            .get(0)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, format!("bad time at data row {rows}")))?;
        if time < last_time {
            return Err(Error::parse(path, "time column is not ascending"));
        }
        last_time = time;
        let Some(bin) = window.bin_index(time) else {
            continue;
        };
        for (acc, (idx, _, _)) in accs.iter_mut().zip(columns.iter()) {
            let cell = record.get(*idx).unwrap_or("").trim();
            if cell.is_empty() {
                continue;
            }
            let value: f64 = cell
                .parse()
                .map_err(|_| Error::parse(path, format!("bad value `{cell}` at data row {rows}")))?;
            acc.add(bin, value);
        }
    }
    if rows == 0 {
        return Err(Error::parse(path, "metrics file has no data rows"));
    }

    Ok(columns
        .into_iter()
        .zip(accs.into_iter())
        .map(|((_, service, metric), acc)| {
            let (values, missing) = acc.mean_filled();
            TimeSeries {
                service,
                indicator: metric,
                source: SourceKind::Metric,
                values,
                missing,
            }
        })
        .collect())
}

/// Reads a JSON-Lines log file.
pub fn read_log_records(path: &Path) -> Result<Vec<LogRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        if record.service.is_empty() {
            return Err(Error::parse(path, format!("line {}: empty service", lineno + 1)));
        }
        records.push(record);
    }
    Ok(records)
}

/// Parses all records through per-service Drain parsers and bins template
/// occurrences into count series.
///
/// Services run independently (messages of one service are parsed in
/// timestamp order), so this fans out per service. A template never seen
/// for a service emits no series.
pub fn logs_to_series(
    records: &[LogRecord],
    cfg: &DrainConfig,
    window: &AnalysisWindow,
) -> Result<(Vec<TimeSeries>, IngestDiagnostics)> {
    cfg.validate()?;
    let mut by_service: BTreeMap<&str, Vec<&LogRecord>> = BTreeMap::new();
    for r in records {
        by_service.entry(r.service.as_str()).or_default().push(r);
    }
    for group in by_service.values_mut() {
        group.sort_by_key(|r| r.time);
    }

    let groups: Vec<(&str, Vec<&LogRecord>)> = by_service.into_iter().collect();
    let n_bins = window.n_bins();
    let per_service = parallel::map_slice(&groups, |(service, group)| -> Result<_> {
        let mut parser = DrainParser::new(*cfg)?;
        let mut counts: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        let mut out_of_window = 0u64;
        for record in group {
            let Some(id) = parser.parse(&record.message) else {
                continue;
            };
            let Some(bin) = window.bin_index(record.time) else {
                out_of_window += 1;
                continue;
            };
            counts.entry(id).or_insert_with(|| vec![0.0; n_bins])[bin] += 1.0;
        }
        let series: Vec<TimeSeries> = counts
            .into_iter()
            .map(|(id, values)| TimeSeries::new(*service, format!("tpl:{id}"), SourceKind::Log, values))
            .collect();
        Ok((series, parser.skipped, out_of_window))
    });

    let mut all = Vec::new();
    let mut diag = IngestDiagnostics::default();
    for result in per_service {
        let (series, skipped, out_of_window) = result?;
        all.extend(series);
        diag.skipped_log_records += skipped;
        diag.out_of_window_records += out_of_window;
    }
    Ok((all, diag))
}

/// Reads a traces CSV.
pub fn read_trace_records(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?;
    let expected = ["time", "trace_id", "service", "operation", "latency_ms", "status"];
    let actual: Vec<&str> = headers.iter().collect();
    if actual != expected {
        return Err(Error::parse(
            path,
            format!("trace header must be `{}`", expected.join(",")),
        ));
    }
    let mut records = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let time: i64 = field(0)
            .parse()
            .map_err(|_| Error::parse(path, format!("bad time at data row {}", row + 1)))?;
        let latency_ms: f64 = field(4)
            .parse()
            .map_err(|_| Error::parse(path, format!("bad latency at data row {}", row + 1)))?;
        if !latency_ms.is_finite() || latency_ms < 0.0 {
            return Err(Error::parse(path, format!("negative latency at data row {}", row + 1)));
        }
        records.push(TraceRecord {
            time,
            service: field(2),
            operation: field(3),
            latency_ms,
            status: field(5),
        });
    }
    Ok(records)
}

/// Bins trace spans into two series per (service, operation): mean latency
/// and error count.
pub fn traces_to_series(
    records: &[TraceRecord],
    window: &AnalysisWindow,
) -> (Vec<TimeSeries>, IngestDiagnostics) {
    let n_bins = window.n_bins();
    let mut groups: BTreeMap<(String, String), (BinAccumulator, Vec<f64>)> = BTreeMap::new();
    let mut diag = IngestDiagnostics::default();
    for r in records {
        let Some(bin) = window.bin_index(r.time) else {
            diag.out_of_window_records += 1;
            continue;
        };
        let entry = groups
            .entry((r.service.clone(), r.operation.clone()))
            .or_insert_with(|| (BinAccumulator::new(n_bins), vec![0.0; n_bins]));
        entry.0.add(bin, r.latency_ms);
        if r.is_error() {
            entry.1[bin] += 1.0;
        }
    }

    let mut series = Vec::new();
    for ((service, operation), (latency, errors)) in groups {
        let (values, missing) = latency.mean_filled();
        series.push(TimeSeries {
            service: service.clone(),
            indicator: format!("op:{operation}:latency"),
            source: SourceKind::Trace,
            values,
            missing,
        });
        series.push(TimeSeries::new(
            service,
            format!("op:{operation}:errors"),
            SourceKind::Trace,
            errors,
        ));
    }
    (series, diag)
}

/// Optional input paths for one analysis run.
#[derive(Debug, Clone, Default)]
pub struct InputPaths {
    pub metrics: Option<std::path::PathBuf>,
    pub logs: Option<std::path::PathBuf>,
    pub traces: Option<std::path::PathBuf>,
}

/// Reads whichever files are present and merges them into one bundle.
pub fn build_bundle(
    inputs: &InputPaths,
    drain_cfg: &DrainConfig,
    window: &AnalysisWindow,
) -> Result<TelemetryBundle> {
    if inputs.metrics.is_none() && inputs.logs.is_none() && inputs.traces.is_none() {
        return Err(Error::input("at least one telemetry source is required"));
    }
    let mut series = Vec::new();
    let mut diag = IngestDiagnostics::default();
    if let Some(path) = &inputs.metrics {
        series.extend(read_metrics(path, window)?);
    }
    if let Some(path) = &inputs.logs {
        let records = read_log_records(path)?;
        let (log_series, log_diag) = logs_to_series(&records, drain_cfg, window)?;
        series.extend(log_series);
        diag.skipped_log_records += log_diag.skipped_log_records;
        diag.out_of_window_records += log_diag.out_of_window_records;
    }
    if let Some(path) = &inputs.traces {
        let records = read_trace_records(path)?;
        let (trace_series, trace_diag) = traces_to_series(&records, window);
        series.extend(trace_series);
        diag.out_of_window_records += trace_diag.out_of_window_records;
    }
    TelemetryBundle::from_series(series, *window, diag)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                Error::io(path, io)
            } else {
                unreachable!()
            }
        }
        _ => Error::parse(path, e.to_string()),
    }
}
