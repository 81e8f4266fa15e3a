//! End-to-end analysis: cluster-ordered rank aggregation, robust
//! fine-grained indicator scoring, and report assembly.

use serde::{Deserialize, Serialize};

use crate::causal::{rank_chunked, rank_services, CausalConfig, CausalDiagnostics, TargetScore};
use crate::cluster::{derive_seed, rank_clusters, select_k};
use crate::error::{Error, Result};
use crate::model::{
    normal_stats, split_window, AnalysisWindow, SourceKind, TelemetryBundle, TimeSeries, IQR_FLOOR,
};
use crate::parallel;
use crate::severity::{all_vectors, SeriesRef};

/// Pipeline-wide tuning, echoed into every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcaConfig {
    pub seed: u64,
    pub alpha: f64,
    pub chunk_size: usize,
    pub max_cond_size: usize,
    /// Soft cluster-membership threshold.
    pub tau: f64,
    /// Upper bound on the GMM component sweep.
    pub k_max: usize,
    pub bin_secs: i64,
}

impl Default for RcaConfig {
    fn default() -> Self {
        RcaConfig {
            seed: 0,
            alpha: 0.05,
            chunk_size: 10,
            max_cond_size: 2,
            tau: 0.1,
            k_max: 8,
            bin_secs: 15,
        }
    }
}

impl RcaConfig {
    fn causal(&self, cluster_index: usize) -> CausalConfig {
        CausalConfig {
            alpha: self.alpha,
            chunk_size: self.chunk_size,
            max_cond_size: self.max_cond_size,
            seed: derive_seed(self.seed, 0x5EED_0000 + cluster_index as u64),
        }
    }
}

/// Fine-grained score of one indicator: max |x_t - median| / IQR over the
/// abnormal window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorScore {
    pub series: SeriesRef,
    pub gamma: f64,
}

/// Concatenates per-cluster service rankings following cluster order.
///
/// A service ranked in several clusters (soft membership) keeps only its
/// first occurrence.
pub fn aggregate(per_cluster: &[Vec<String>]) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for ranking in per_cluster {
        for service in ranking {
            if seen.insert(service.clone()) {
                out.push(service.clone());
            }
        }
    }
    out
}

/// Scores one series by its robust deviation over the abnormal window.
///
/// Median and IQR come from the normal period only; the IQR is floored at
/// `IQR_FLOOR` before dividing.
pub fn gamma_score(ts: &TimeSeries, w: &AnalysisWindow) -> Result<IndicatorScore> {
    let (normal, abnormal) = split_window(ts, w)?;
    if abnormal.is_empty() {
        return Err(Error::input(format!(
            "series {}/{} has no abnormal bins",
            ts.service, ts.indicator
        )));
    }
    let stats = normal_stats(normal)?;
    let iqr = stats.iqr.max(IQR_FLOOR);
    let mut gamma = 0.0f64;
    for &x in abnormal {
        gamma = gamma.max((x - stats.median).abs() / iqr);
    }
    Ok(IndicatorScore {
        series: SeriesRef::of(ts),
        gamma,
    })
}

/// Ranks every series of each listed service by gamma, descending, ties
/// broken by indicator name. A service with no series yields an empty list.
pub fn fine_grain(
    services: &[String],
    bundle: &TelemetryBundle,
    w: &AnalysisWindow,
) -> Result<Vec<Vec<IndicatorScore>>> {
    let per_service = parallel::map_slice(services, |service| -> Result<Vec<IndicatorScore>> {
        let mut scores = Vec::new();
        for ts in bundle.series_of(service) {
            scores.push(gamma_score(ts, w)?);
        }
        scores.sort_by(|a, b| {
            b.gamma
                .total_cmp(&a.gamma)
                .then_with(|| a.series.indicator.cmp(&b.series.indicator))
        });
        Ok(scores)
    });
    per_service.into_iter().collect()
}

/// Everything the report records about one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedIndicator {
    pub rank: usize,
    pub indicator: String,
    pub source: SourceKind,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedService {
    pub rank: usize,
    pub service: String,
    /// 1 - p for causally targeted services, mean severity otherwise; see
    /// the README for the exact semantics.
    pub score: f64,
    /// Index into the severity-ordered cluster list this service entered
    /// the aggregate ranking from.
    pub cluster: usize,
    pub indicators: Vec<RankedIndicator>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDiagnostics {
    pub constant_columns_dropped: u64,
    pub singular_ci_tests: u64,
    pub skipped_log_records: u64,
    pub out_of_window_records: u64,
}

/// The final ranked root-cause report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaReport {
    pub version: String,
    pub anomaly_at: i64,
    pub config: RcaConfig,
    pub services: Vec<RankedService>,
    pub diagnostics: ReportDiagnostics,
}

pub const REPORT_VERSION: &str = "torai-report/1";

impl RcaReport {
    /// Serializes with a trailing newline; byte-identical for identical
    /// inputs regardless of thread count.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> Result<RcaReport> {
        serde_json::from_str(json).map_err(|e| Error::input(format!("bad report: {e}")))
    }

    /// Ranked service names, best first.
    pub fn ranked_services(&self) -> Vec<String> {
        self.services.iter().map(|s| s.service.clone()).collect()
    }
}

/// Runs the full pipeline: severity vectors, symptom clustering, causal
/// ranking per cluster, rank aggregation, and fine-grained indicator
/// scoring.
pub fn run_rca(bundle: &TelemetryBundle, cfg: &RcaConfig) -> Result<RcaReport> {
    let window = bundle.window;
    let vectors = all_vectors(bundle).map_err(|e| e.stage("severity"))?;

    let points: Vec<[f64; 3]> = vectors.iter().map(|v| v.as_point()).collect();
    let k_max = cfg.k_max.min(points.len()).max(1);
    let (_, model) = select_k(&points, k_max, cfg.seed).map_err(|e| e.stage("cluster"))?;
    let ranking = rank_clusters(&model, &vectors, cfg.tau);

    // Causal ranking inside every cluster, in cluster order.
    let clusters: Vec<(usize, Vec<String>)> = ranking
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.members.iter().map(|(s, _)| s.clone()).collect()))
        .collect();
    let per_cluster = parallel::map_slice(&clusters, |(idx, members)| -> Result<_> {
        let series: Vec<&TimeSeries> = bundle
            .series
            .iter()
            .filter(|s| members.contains(&s.service))
            .collect();
        let (targets, diag) = if series.is_empty() {
            (Vec::new(), CausalDiagnostics::default())
        } else {
            rank_chunked(&series, &window, &cfg.causal(*idx)).map_err(|e| e.stage("causal"))?
        };
        let ranked = rank_services(members, &targets, &vectors);
        Ok((ranked, targets, diag))
    });

    let mut rankings: Vec<Vec<String>> = Vec::new();
    let mut all_targets: Vec<TargetScore> = Vec::new();
    let mut causal_diag = CausalDiagnostics::default();
    for result in per_cluster {
        let (ranked, targets, diag) = result?;
        rankings.push(ranked);
        all_targets.extend(targets);
        causal_diag.merge(&diag);
    }

    let ordered = aggregate(&rankings);
    assert_eq!(
        ordered.len(),
        bundle.snapshot.len(),
        "every service is ranked exactly once"
    );

    // First cluster each service appears in, following cluster order.
    let cluster_of = |service: &str| -> usize {
        rankings
            .iter()
            .position(|r| r.iter().any(|s| s == service))
            .expect("ranked services come from cluster rankings")
    };
    let best_p = |service: &str| -> Option<f64> {
        all_targets
            .iter()
            .filter(|t| t.series.service == service)
            .map(|t| t.p_value)
            .min_by(f64::total_cmp)
    };

    let indicators = fine_grain(&ordered, bundle, &window).map_err(|e| e.stage("fine-grain"))?;

    let services: Vec<RankedService> = ordered
        .iter()
        .zip(indicators.into_iter())
        .enumerate()
        .map(|(i, (service, scored))| {
            let score = match best_p(service) {
                Some(p) => 1.0 - p,
                None => vectors
                    .iter()
                    .find(|v| v.service == *service)
                    .map(|v| v.mean())
                    .unwrap_or(0.0),
            };
            RankedService {
                rank: i + 1,
                service: service.clone(),
                score,
                cluster: cluster_of(service),
                indicators: scored
                    .into_iter()
                    .enumerate()
                    .map(|(j, s)| RankedIndicator {
                        rank: j + 1,
                        indicator: s.series.indicator,
                        source: s.series.source,
                        gamma: s.gamma,
                    })
                    .collect(),
            }
        })
        .collect();

    Ok(RcaReport {
        version: REPORT_VERSION.to_string(),
        anomaly_at: window.anomaly_at,
        config: *cfg,
        services,
        diagnostics: ReportDiagnostics {
            constant_columns_dropped: causal_diag.constant_columns_dropped,
            singular_ci_tests: causal_diag.singular_ci_tests,
            skipped_log_records: bundle.diagnostics.skipped_log_records,
            out_of_window_records: bundle.diagnostics.out_of_window_records,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IngestDiagnostics;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn aggregate_follows_cluster_order() {
        let clusters = vec![
            vec!["a".to_string(), "c".to_string()],
            vec!["e".to_string(), "p".to_string(), "t".to_string()],
        ];
        assert_eq!(aggregate(&clusters), ["a", "c", "e", "p", "t"]);
    }

    #[test]
    fn aggregate_first_occurrence_wins() {
        let clusters = vec![
            vec!["a".to_string(), "c".to_string()],
            vec!["c".to_string(), "d".to_string()],
        ];
        assert_eq!(aggregate(&clusters), ["a", "c", "d"]);
    }

    #[test]
    fn aggregate_single_cluster_identity() {
        let clusters = vec![vec!["x".to_string(), "y".to_string()]];
        assert_eq!(aggregate(&clusters), ["x", "y"]);
    }

    fn w() -> AnalysisWindow {
        AnalysisWindow::new(0, 5, 2, 1).unwrap()
    }

    #[test]
    fn gamma_zero_when_abnormal_sits_on_median() {
        let ts = TimeSeries::new("a", "x", SourceKind::Metric, vec![1.0, 2.0, 3.0, 4.0, 5.0, 3.0, 3.0]);
        assert_eq!(gamma_score(&ts, &w()).unwrap().gamma, 0.0);
    }

    #[test]
    fn gamma_robust_to_one_normal_outlier() {
        // med 0, IQR 0 -> floored; the scorer still flags the abnormal jump.
        let ts = TimeSeries::new("a", "x", SourceKind::Metric, vec![0.0, 0.0, 10.0, 0.0, 0.0, 50.0, 0.0]);
        let gamma = gamma_score(&ts, &w()).unwrap().gamma;
        assert!(gamma > 1e6, "gamma = {gamma}");
    }

    #[test]
    fn gamma_affine_invariant() {
        let base: Vec<f64> = vec![1.0, 4.0, 2.0, 5.0, 3.0, 9.0, 7.0];
        let ts = TimeSeries::new("a", "x", SourceKind::Metric, base.clone());
        let scaled = TimeSeries::new("a", "x", SourceKind::Metric, base.iter().map(|v| 2.0 * v + 5.0).collect());
        let g1 = gamma_score(&ts, &w()).unwrap().gamma;
        let g2 = gamma_score(&scaled, &w()).unwrap().gamma;
        assert!((g1 - g2).abs() / g1 < 1e-9);
    }

    fn noisy(base: f64, rng: &mut ChaCha8Rng, n: usize, shift_at: usize, shift: f64) -> Vec<f64> {
        (0..n)
            .map(|t| {
                let s = if t >= shift_at { shift } else { 0.0 };
                base + s + rng.gen::<f64>() * 0.1
            })
            .collect()
    }

    fn small_bundle(seed: u64) -> TelemetryBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = AnalysisWindow::new(0, 40, 20, 1).unwrap();
        let mut series = Vec::new();
        // Root: big cpu shift on svc-a; effect on svc-b driven by svc-a.
        series.push(TimeSeries::new("svc-a", "cpu", SourceKind::Metric, noisy(0.3, &mut rng, 60, 40, 0.9)));
        series.push(TimeSeries::new("svc-a", "mem", SourceKind::Metric, noisy(0.5, &mut rng, 60, usize::MAX, 0.0)));
        series.push(TimeSeries::new("svc-b", "cpu", SourceKind::Metric, noisy(0.2, &mut rng, 60, 40, 0.3)));
        series.push(TimeSeries::new("svc-b", "mem", SourceKind::Metric, noisy(0.4, &mut rng, 60, usize::MAX, 0.0)));
        series.push(TimeSeries::new("svc-c", "cpu", SourceKind::Metric, noisy(0.1, &mut rng, 60, usize::MAX, 0.0)));
        TelemetryBundle::from_series(series, w, IngestDiagnostics::default()).unwrap()
    }

    #[test]
    fn run_rca_metrics_only_end_to_end() {
        let bundle = small_bundle(3);
        let report = run_rca(&bundle, &RcaConfig::default()).unwrap();
        assert_eq!(report.version, REPORT_VERSION);
        assert_eq!(report.services.len(), 3);
        assert_eq!(report.services[0].service, "svc-a");
        assert_eq!(report.services[0].indicators[0].indicator, "cpu");
        // Ranks are contiguous and gamma non-increasing within a service.
        for (i, s) in report.services.iter().enumerate() {
            assert_eq!(s.rank, i + 1);
            for (j, ind) in s.indicators.iter().enumerate() {
                assert_eq!(ind.rank, j + 1);
                if j > 0 {
                    assert!(s.indicators[j - 1].gamma >= ind.gamma);
                }
            }
        }
    }

    #[test]
    fn run_rca_single_service() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = AnalysisWindow::new(0, 30, 10, 1).unwrap();
        let series = vec![
            TimeSeries::new("only", "cpu", SourceKind::Metric, noisy(0.2, &mut rng, 40, 30, 1.0)),
            TimeSeries::new("only", "mem", SourceKind::Metric, noisy(0.6, &mut rng, 40, usize::MAX, 0.0)),
        ];
        let bundle = TelemetryBundle::from_series(series, w, IngestDiagnostics::default()).unwrap();
        let report = run_rca(&bundle, &RcaConfig::default()).unwrap();
        assert_eq!(report.services.len(), 1);
        assert_eq!(report.services[0].indicators.len(), 2);
        assert_eq!(report.services[0].indicators[0].indicator, "cpu");
    }

    #[test]
    fn run_rca_deterministic_bytes() {
        let bundle = small_bundle(17);
        let cfg = RcaConfig { seed: 42, ..Default::default() };
        let a = run_rca(&bundle, &cfg).unwrap().to_json();
        let b = run_rca(&bundle, &cfg).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn report_schema_keys() {
        let bundle = small_bundle(23);
        let report = run_rca(&bundle, &RcaConfig::default()).unwrap();
        let value: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        let obj = value.as_object().unwrap();
        let keys: Vec<&String> = obj.keys().collect();
        assert_eq!(keys, ["anomaly_at", "config", "diagnostics", "services", "version"].iter().map(|s| s.to_string()).collect::<Vec<_>>().iter().collect::<Vec<&String>>());
        let svc = &value["services"][0];
        for key in ["rank", "service", "score", "cluster", "indicators"] {
            assert!(svc.get(key).is_some(), "missing key {key}");
        }
        let ind = &svc["indicators"][0];
        for key in ["rank", "indicator", "source", "gamma"] {
            assert!(ind.get(key).is_some(), "missing key {key}");
        }
    }
}
