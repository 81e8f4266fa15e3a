//! Per-series anomaly severity and per-service severity vectors.
//!
//! Each series is scored by its maximum normalized deviation during the
//! abnormal window. Per service, metric and trace scores are summed while
//! the log score takes the most anomalous template, and a missing source
//! is imputed as exactly zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    normal_stats, split_window, AnalysisWindow, SourceAvailability, SourceKind, TelemetryBundle,
    TimeSeries, SIGMA_FLOOR,
};
use crate::parallel;

/// Identity of one time series.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesRef {
    pub service: String,
    pub indicator: String,
    pub source: SourceKind,
}

impl SeriesRef {
    pub fn of(ts: &TimeSeries) -> Self {
        SeriesRef {
            service: ts.service.clone(),
            indicator: ts.indicator.clone(),
            source: ts.source,
        }
    }
}

/// Severity score of one series: max |x_t - mean| / std over abnormal bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSeverity {
    pub series: SeriesRef,
    pub rho: f64,
}

/// Per-service severity triple, one component per telemetry source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityVector {
    pub service: String,
    pub rho_metric: f64,
    pub rho_log: f64,
    pub rho_trace: f64,
    pub available: SourceAvailability,
}

impl SeverityVector {
    pub fn as_point(&self) -> [f64; 3] {
        [self.rho_metric, self.rho_log, self.rho_trace]
    }

    pub fn mean(&self) -> f64 {
        (self.rho_metric + self.rho_log + self.rho_trace) / 3.0
    }
}

/// Scores one series over the abnormal window.
///
/// The standard deviation is floored at `SIGMA_FLOOR` so constant normal
/// periods do not divide by zero; a genuinely deviating series then scores
/// very high, which is the desired signal.
pub fn score_series(ts: &TimeSeries, w: &AnalysisWindow) -> Result<SeriesSeverity> {
    let (normal, abnormal) = split_window(ts, w)?;
    if abnormal.is_empty() {
        return Err(Error::input(format!(
            "series {}/{} has no abnormal bins",
            ts.service, ts.indicator
        )));
    }
    let stats = normal_stats(normal)?;
    let sigma = stats.std.max(SIGMA_FLOOR);
    let mut rho = 0.0f64;
    for &x in abnormal {
        if !x.is_finite() {
            return Err(Error::input(format!(
                "series {}/{} has a non-finite abnormal value",
                ts.service, ts.indicator
            )));
        }
        rho = rho.max((x - stats.mean).abs() / sigma);
    }
    Ok(SeriesSeverity {
        series: SeriesRef::of(ts),
        rho,
    })
}

/// Aggregates one service's series severities into its vector.
///
/// Metric and trace components sum their series; the log component takes
/// the maximum, since template counts vary wildly between services. An
/// unavailable source is imputed as exactly 0.
pub fn service_vector(
    service: &str,
    severities: &[SeriesSeverity],
    available: SourceAvailability,
) -> SeverityVector {
    let mut rho_metric = 0.0;
    let mut rho_log = 0.0f64;
    let mut rho_trace = 0.0;
    for sev in severities {
        debug_assert_eq!(sev.series.service, service);
        match sev.series.source {
            SourceKind::Metric => rho_metric += sev.rho,
            SourceKind::Log => rho_log = rho_log.max(sev.rho),
            SourceKind::Trace => rho_trace += sev.rho,
        }
    }
    if !available.metric {
        rho_metric = 0.0;
    }
    if !available.log {
        rho_log = 0.0;
    }
    if !available.trace {
        rho_trace = 0.0;
    }
    SeverityVector {
        service: service.to_string(),
        rho_metric,
        rho_log,
        rho_trace,
        available,
    }
}

/// Scores every series in the bundle and returns one vector per service in
/// snapshot order.
///
/// Scoring fans out across series; the reduction into vectors walks series
/// in input order, so the result does not depend on scheduling.
pub fn all_vectors(bundle: &TelemetryBundle) -> Result<Vec<SeverityVector>> {
    let scored = parallel::map_slice(&bundle.series, |ts| score_series(ts, &bundle.window));
    let mut severities = Vec::with_capacity(scored.len());
    for s in scored {
        severities.push(s?);
    }
    Ok(bundle
        .snapshot
        .services()
        .iter()
        .enumerate()
        .map(|(idx, service)| {
            let mine: Vec<SeriesSeverity> = severities
                .iter()
                .filter(|sev| sev.series.service == *service)
                .cloned()
                .collect();
            service_vector(service, &mine, bundle.availability[idx])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IngestDiagnostics, TelemetryBundle};

    fn w() -> AnalysisWindow {
        AnalysisWindow::new(0, 4, 2, 1).unwrap()
    }

    fn all_sources() -> SourceAvailability {
        SourceAvailability {
            metric: true,
            log: true,
            trace: true,
        }
    }

    #[test]
    fn score_hand_evaluated() {
        // normal [0,2,0,2] -> mean 1, std 1; abnormal [1,5] -> max(0, 4) = 4.
        let ts = TimeSeries::new("a", "cpu", SourceKind::Metric, vec![0.0, 2.0, 0.0, 2.0, 1.0, 5.0]);
        let sev = score_series(&ts, &w()).unwrap();
        assert_eq!(sev.rho, 4.0);
    }

    #[test]
    fn score_zero_when_abnormal_equals_mean() {
        let ts = TimeSeries::new("a", "cpu", SourceKind::Metric, vec![0.0, 2.0, 0.0, 2.0, 1.0, 1.0]);
        assert_eq!(score_series(&ts, &w()).unwrap().rho, 0.0);
    }

    #[test]
    fn score_constant_series_is_zero_despite_floor() {
        let ts = TimeSeries::new("a", "cpu", SourceKind::Metric, vec![3.0; 6]);
        assert_eq!(score_series(&ts, &w()).unwrap().rho, 0.0);
    }

    #[test]
    fn score_rejects_nan_abnormal() {
        let ts = TimeSeries::new("a", "cpu", SourceKind::Metric, vec![0.0, 2.0, 0.0, 2.0, f64::NAN, 1.0]);
        assert!(score_series(&ts, &w()).is_err());
    }

    fn sev(service: &str, indicator: &str, source: SourceKind, rho: f64) -> SeriesSeverity {
        SeriesSeverity {
            series: SeriesRef {
                service: service.into(),
                indicator: indicator.into(),
                source,
            },
            rho,
        }
    }

    #[test]
    fn vector_sums_metrics_and_maxes_logs() {
        let sevs = vec![
            sev("a", "cpu", SourceKind::Metric, 1.0),
            sev("a", "mem", SourceKind::Metric, 2.5),
        ];
        let v = service_vector("a", &sevs, SourceAvailability { metric: true, ..Default::default() });
        assert_eq!(v.as_point(), [3.5, 0.0, 0.0]);

        let logs = vec![
            sev("a", "tpl:0", SourceKind::Log, 0.5),
            sev("a", "tpl:1", SourceKind::Log, 7.0),
            sev("a", "tpl:2", SourceKind::Log, 1.0),
        ];
        let v = service_vector("a", &logs, all_sources());
        assert_eq!(v.rho_log, 7.0);
    }

    #[test]
    fn blind_spot_imputes_exact_zero() {
        let sevs = vec![sev("a", "op:x:latency", SourceKind::Trace, 9.0)];
        let avail = SourceAvailability {
            metric: true,
            log: true,
            trace: false,
        };
        let v = service_vector("a", &sevs, avail);
        assert_eq!(v.rho_trace, 0.0);
    }

    #[test]
    fn all_vectors_snapshot_order_and_order_independence() {
        let mk = |svc: &str, ind: &str, shift: f64| {
            TimeSeries::new(
                svc,
                ind,
                SourceKind::Metric,
                vec![0.0, 2.0, 0.0, 2.0, 1.0 + shift, 1.0],
            )
        };
        let series_a = vec![mk("b", "cpu", 3.0), mk("a", "cpu", 1.0), mk("a", "mem", 2.0)];
        let mut series_b = series_a.clone();
        series_b.reverse();

        let bundle_a =
            TelemetryBundle::from_series(series_a, w(), IngestDiagnostics::default()).unwrap();
        let bundle_b =
            TelemetryBundle::from_series(series_b, w(), IngestDiagnostics::default()).unwrap();

        let va = all_vectors(&bundle_a).unwrap();
        let vb = all_vectors(&bundle_b).unwrap();
        assert_eq!(va, vb);
        assert_eq!(va[0].service, "a");
        assert_eq!(va[1].service, "b");
        assert_eq!(va[0].rho_metric, 3.0);
    }

    #[test]
    fn service_with_no_series_scores_zero() {
        let series = vec![TimeSeries::new("a", "cpu", SourceKind::Metric, vec![0.0, 2.0, 0.0, 2.0, 1.0, 1.0])];
        let bundle = TelemetryBundle::from_series(series, w(), IngestDiagnostics::default()).unwrap();
        let vectors = all_vectors(&bundle).unwrap();
        assert_eq!(vectors.len(), 1);
        // The only service has metrics only; log/trace imputed 0.
        assert_eq!(vectors[0].rho_log, 0.0);
        assert_eq!(vectors[0].rho_trace, 0.0);
    }
}
