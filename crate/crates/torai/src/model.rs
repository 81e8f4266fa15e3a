//! Shared domain vocabulary: services, telemetry sources, aligned time
//! series, analysis windows, and the normal-period statistics every
//! downstream stage consumes.
//!
//! All types are immutable after construction and safe to share across
//! threads; the operations here are pure functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute floor applied to standard deviations before dividing.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Absolute floor applied to interquartile ranges before dividing.
pub const IQR_FLOOR: f64 = 1e-6;

/// Which telemetry source a time series was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Metric,
    Log,
    Trace,
}

impl SourceKind {
    pub const ALL: [SourceKind; 3] = [SourceKind::Metric, SourceKind::Log, SourceKind::Trace];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Metric => "metric",
            SourceKind::Log => "log",
            SourceKind::Trace => "trace",
        }
    }
}

/// The set of services under analysis, in stable lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemSnapshot {
    services: Vec<String>,
}

impl SystemSnapshot {
    /// Builds a snapshot from arbitrary service names; sorts and dedups.
    pub fn new(mut services: Vec<String>) -> Self {
        services.sort();
        services.dedup();
        SystemSnapshot { services }
    }

    pub fn services(&self) -> &[String] {
        &self.services
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn contains(&self, service: &str) -> bool {
        self.services.binary_search_by(|s| s.as_str().cmp(service)).is_ok()
    }

    pub fn index_of(&self, service: &str) -> Option<usize> {
        self.services.binary_search_by(|s| s.as_str().cmp(service)).ok()
    }
}

/// The analysis window: a normal period `[t0, anomaly_at)` followed by an
/// abnormal period `[anomaly_at, anomaly_at + abnormal_secs)`, discretized
/// into fixed-width bins starting at `t0`.
///
/// A bin belongs to the normal side only if it ends at or before
/// `anomaly_at`; a bin straddling the boundary counts as abnormal so that
/// normal statistics never see post-anomaly data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub t0: i64,
    pub anomaly_at: i64,
    pub abnormal_secs: i64,
    pub bin_secs: i64,
}

impl AnalysisWindow {
    pub fn new(t0: i64, anomaly_at: i64, abnormal_secs: i64, bin_secs: i64) -> Result<Self> {
        if bin_secs <= 0 {
            return Err(Error::input("bin width must be positive"));
        }
        if abnormal_secs <= 0 {
            return Err(Error::input("abnormal window must be positive"));
        }
        if t0 >= anomaly_at {
            return Err(Error::input("window start must precede the anomaly time"));
        }
        if anomaly_at - t0 < 2 * bin_secs {
            return Err(Error::input(format!(
                "normal period of {}s is shorter than two {}s bins",
                anomaly_at - t0,
                bin_secs
            )));
        }
        Ok(AnalysisWindow {
            t0,
            anomaly_at,
            abnormal_secs,
            bin_secs,
        })
    }

    /// End of the abnormal period (exclusive).
    pub fn end(&self) -> i64 {
        self.anomaly_at + self.abnormal_secs
    }

    /// Total number of bins spanning `[t0, end)`.
    pub fn n_bins(&self) -> usize {
        let span = self.end() - self.t0;
        (span as f64 / self.bin_secs as f64).ceil() as usize
    }

    /// Index of the first abnormal bin.
    pub fn split_index(&self) -> usize {
        ((self.anomaly_at - self.t0) / self.bin_secs) as usize
    }

    /// Number of abnormal bins.
    pub fn abnormal_bins(&self) -> usize {
        self.n_bins() - self.split_index()
    }

    /// Bin index for a timestamp inside `[t0, end)`.
    pub fn bin_index(&self, t: i64) -> Option<usize> {
        if t < self.t0 || t >= self.end() {
            return None;
        }
        Some(((t - self.t0) / self.bin_secs) as usize)
    }

    /// Start timestamp of a bin.
    pub fn bin_start(&self, idx: usize) -> i64 {
        self.t0 + idx as i64 * self.bin_secs
    }
}

/// One named indicator's values over the aligned window bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub service: String,
    pub indicator: String,
    pub source: SourceKind,
    pub values: Vec<f64>,
    /// True where the bin had no observation and the value was filled.
    pub missing: Vec<bool>,
}

impl TimeSeries {
    pub fn new(
        service: impl Into<String>,
        indicator: impl Into<String>,
        source: SourceKind,
        values: Vec<f64>,
    ) -> Self {
        let missing = vec![false; values.len()];
        TimeSeries {
            service: service.into(),
            indicator: indicator.into(),
            source,
            values,
            missing,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Normal-period statistics of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalStats {
    pub mean: f64,
    /// Population standard deviation (divide by n).
    pub std: f64,
    pub median: f64,
    /// Q3 - Q1 with linear-interpolation percentiles.
    pub iqr: f64,
}

/// Splits a series at the anomaly time into (normal, abnormal) bin slices.
///
/// The two slices partition the series: concatenated they reproduce
/// `ts.values` exactly.
pub fn split_window<'a>(ts: &'a TimeSeries, w: &AnalysisWindow) -> Result<(&'a [f64], &'a [f64])> {
    if ts.values.len() != w.n_bins() {
        return Err(Error::input(format!(
            "series {}/{} has {} bins but the window implies {}",
            ts.service,
            ts.indicator,
            ts.values.len(),
            w.n_bins()
        )));
    }
    Ok(ts.values.split_at(w.split_index()))
}

/// Linear-interpolation percentile of a sorted slice, `q` in [0, 1].
///
/// Uses the "linear" convention: rank `h = (n - 1) * q`, interpolating
/// between the two closest order statistics.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Computes mean, population standard deviation, median, and IQR of the
/// normal-period values.
pub fn normal_stats(values: &[f64]) -> Result<NormalStats> {
    if values.len() < 2 {
        return Err(Error::input(format!(
            "need at least 2 normal-period values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();

    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = percentile_sorted(&sorted, 0.5);
    let q1 = percentile_sorted(&sorted, 0.25);
    let q3 = percentile_sorted(&sorted, 0.75);

    Ok(NormalStats {
        mean,
        std,
        median,
        iqr: q3 - q1,
    })
}

/// Per-service availability of each telemetry source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceAvailability {
    pub metric: bool,
    pub log: bool,
    pub trace: bool,
}

impl SourceAvailability {
    pub fn get(&self, kind: SourceKind) -> bool {
        match kind {
            SourceKind::Metric => self.metric,
            SourceKind::Log => self.log,
            SourceKind::Trace => self.trace,
        }
    }

    pub fn set(&mut self, kind: SourceKind) {
        match kind {
            SourceKind::Metric => self.metric = true,
            SourceKind::Log => self.log = true,
            SourceKind::Trace => self.trace = true,
        }
    }
}

/// Ingestion bookkeeping surfaced in the final report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestDiagnostics {
    /// Log records whose message was empty after variable masking.
    pub skipped_log_records: u64,
    /// Records with timestamps outside the analysis window.
    pub out_of_window_records: u64,
}

/// Everything the pipeline consumes: the service set, the window, and all
/// derived time series with per-service source availability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryBundle {
    pub snapshot: SystemSnapshot,
    pub window: AnalysisWindow,
    pub series: Vec<TimeSeries>,
    /// Aligned with `snapshot.services()`.
    pub availability: Vec<SourceAvailability>,
    pub diagnostics: IngestDiagnostics,
}

impl TelemetryBundle {
    /// Assembles a bundle from loose series; the snapshot is the sorted
    /// union of service names and availability is derived per source.
    pub fn from_series(
        series: Vec<TimeSeries>,
        window: AnalysisWindow,
        diagnostics: IngestDiagnostics,
    ) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::input("no time series in any source"));
        }
        let snapshot = SystemSnapshot::new(series.iter().map(|s| s.service.clone()).collect());
        let mut availability = vec![SourceAvailability::default(); snapshot.len()];
        for ts in &series {
            let idx = snapshot
                .index_of(&ts.service)
                .expect("series service is in the union snapshot");
            availability[idx].set(ts.source);
        }
        Ok(TelemetryBundle {
            snapshot,
            window,
            series,
            availability,
            diagnostics,
        })
    }

    pub fn availability_for(&self, service: &str) -> SourceAvailability {
        self.snapshot
            .index_of(service)
            .map(|i| self.availability[i])
            .unwrap_or_default()
    }

    /// All series owned by one service, in input order.
    pub fn series_of<'a>(&'a self, service: &str) -> impl Iterator<Item = &'a TimeSeries> {
        let service = service.to_string();
        self.series.iter().filter(move |s| s.service == service)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window_10_bins() -> AnalysisWindow {
        // 6 normal bins, 4 abnormal bins of 15s each.
        AnalysisWindow::new(0, 90, 60, 15).unwrap()
    }

    #[test]
    fn split_splits_at_anomaly_bin() {
        let w = window_10_bins();
        assert_eq!(w.n_bins(), 10);
        let ts = TimeSeries::new("a", "cpu", SourceKind::Metric, (0..10).map(f64::from).collect());
        let (norm, abn) = split_window(&ts, &w).unwrap();
        assert_eq!(norm.len(), 6);
        assert_eq!(abn.len(), 4);
        assert_eq!(norm[5], 5.0);
        assert_eq!(abn[0], 6.0);
    }

    #[test]
    fn split_minimal_two_bins() {
        let w = AnalysisWindow::new(0, 30, 15, 15).unwrap();
        assert_eq!(w.n_bins(), 3);
        let ts = TimeSeries::new("a", "cpu", SourceKind::Metric, vec![1.0, 2.0, 3.0]);
        let (norm, abn) = split_window(&ts, &w).unwrap();
        assert_eq!((norm.len(), abn.len()), (2, 1));
    }

    #[test]
    fn split_rejects_length_mismatch() {
        let w = window_10_bins();
        let ts = TimeSeries::new("a", "cpu", SourceKind::Metric, vec![0.0; 8]);
        assert!(matches!(split_window(&ts, &w), Err(Error::Input(_))));
    }

    #[test]
    fn window_rejects_short_normal_period() {
        assert!(AnalysisWindow::new(0, 20, 60, 15).is_err());
        assert!(AnalysisWindow::new(0, 30, 0, 15).is_err());
        assert!(AnalysisWindow::new(50, 40, 60, 15).is_err());
    }

    #[test]
    fn straddling_bin_counts_as_abnormal() {
        // anomaly at t=100 falls inside bin 6 ([90, 105)); that bin must be abnormal.
        let w = AnalysisWindow::new(0, 100, 50, 15).unwrap();
        assert_eq!(w.split_index(), 6);
        assert_eq!(w.bin_start(6), 90);
    }

    #[test]
    fn stats_constant_series() {
        let s = normal_stats(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.std, 0.0);
        assert_eq!(s.median, 1.0);
        assert_eq!(s.iqr, 0.0);
    }

    #[test]
    fn stats_hand_evaluated() {
        let s = normal_stats(&[0.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(s.median, 1.0);
    }

    #[test]
    fn stats_odd_length_percentiles() {
        // Golden values from the linear-interpolation rule: h = (n-1)q.
        let s = normal_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!(s.iqr, 2.0);
    }

    #[test]
    fn stats_require_two_values() {
        assert!(normal_stats(&[1.0]).is_err());
        assert!(normal_stats(&[]).is_err());
    }

    #[test]
    fn stats_ignore_nothing_but_input_order() {
        let a = normal_stats(&[3.0, 1.0, 2.0]).unwrap();
        let b = normal_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_sorts_and_dedups() {
        let snap = SystemSnapshot::new(vec!["b".into(), "a".into(), "b".into()]);
        assert_eq!(snap.services(), ["a".to_string(), "b".to_string()]);
        assert_eq!(snap.index_of("b"), Some(1));
        assert!(!snap.contains("c"));
    }

    #[test]
    fn bundle_flags_sources_per_service() {
        let w = window_10_bins();
        let series = vec![
            TimeSeries::new("a", "cpu", SourceKind::Metric, vec![0.0; 10]),
            TimeSeries::new("b", "tpl:0", SourceKind::Log, vec![0.0; 10]),
        ];
        let bundle = TelemetryBundle::from_series(series, w, IngestDiagnostics::default()).unwrap();
        assert_eq!(bundle.snapshot.len(), 2);
        let a = bundle.availability_for("a");
        assert!(a.metric && !a.log && !a.trace);
        let b = bundle.availability_for("b");
        assert!(!b.metric && b.log && !b.trace);
    }

    #[test]
    fn bundle_rejects_empty() {
        let w = window_10_bins();
        assert!(TelemetryBundle::from_series(vec![], w, IngestDiagnostics::default()).is_err());
    }
}
