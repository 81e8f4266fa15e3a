//! Synthetic microservice fault-injection benchmark and AC@k evaluation.
//!
//! Each case builds a random call DAG, injects one fault into a root
//! service, propagates attenuated, lagged shifts to the root's callers,
//! and writes the telemetry files in exactly the formats `ingest` reads.
//! The shift schedule guarantees the root carries the strictly largest
//! injected deviation, so ground truth is provable by construction.
//!
//! Every instrumented service emits spans for the operation it serves
//! (`op:serve:*`) plus one client-side pair per outgoing call edge
//! (`op:call-<callee>:*`). Fault kinds map to indicator families:
//!
//! | fault  | primary indicator   | echoes on the root                      |
//! |--------|---------------------|-----------------------------------------|
//! | cpu    | `cpu` metric        | error log, serve + call latency          |
//! | mem    | `mem` metric        | error log, serve + call latency          |
//! | disk   | `disk` metric       | error log, serve + call latency          |
//! | socket | `net` metric        | error log, serve + call latency          |
//! | delay  | `op:serve:latency`  | error log, `net`, call latencies         |
//! | loss   | `op:serve:errors`   | error log, `net`, call errors            |
//!
//! Callers of the root receive latency/error shifts on their root-ward
//! call edges, attenuated by `propagation_decay^d` with a one-bin lag per
//! hop, plus an error-log spike of half that strength.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cluster::derive_seed;
use crate::error::{Error, Result};
use crate::ingest::{build_bundle, DrainConfig, InputPaths};
use crate::model::AnalysisWindow;
use crate::parallel;
use crate::pipeline::{run_rca, RcaConfig, RcaReport};

/// The six injected fault kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    Cpu,
    Mem,
    Disk,
    Socket,
    Delay,
    Loss,
}

impl FaultKind {
    pub const ALL: [FaultKind; 6] = [
        FaultKind::Cpu,
        FaultKind::Mem,
        FaultKind::Disk,
        FaultKind::Socket,
        FaultKind::Delay,
        FaultKind::Loss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::Cpu => "cpu",
            FaultKind::Mem => "mem",
            FaultKind::Disk => "disk",
            FaultKind::Socket => "socket",
            FaultKind::Delay => "delay",
            FaultKind::Loss => "loss",
        }
    }

    /// Metric name carrying the primary shift, if the fault targets a metric.
    fn primary_metric(self) -> Option<&'static str> {
        match self {
            FaultKind::Cpu => Some("cpu"),
            FaultKind::Mem => Some("mem"),
            FaultKind::Disk => Some("disk"),
            FaultKind::Socket => Some("net"),
            FaultKind::Delay | FaultKind::Loss => None,
        }
    }

    fn targets_traces(self) -> bool {
        matches!(self, FaultKind::Delay | FaultKind::Loss)
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cpu" => Ok(FaultKind::Cpu),
            "mem" => Ok(FaultKind::Mem),
            "disk" => Ok(FaultKind::Disk),
            "socket" => Ok(FaultKind::Socket),
            "delay" => Ok(FaultKind::Delay),
            "loss" => Ok(FaultKind::Loss),
            other => Err(Error::input(format!("unknown fault kind `{other}`"))),
        }
    }
}

/// Generator parameters for one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_services: usize,
    pub edge_prob: f64,
    pub fault: FaultKind,
    /// Primary shift in units of the target series' own noise sigma.
    pub fault_magnitude: f64,
    pub propagation_decay: f64,
    pub blind_spot_fraction: f64,
    pub seed: u64,
    pub t0: i64,
    pub normal_secs: i64,
    pub abnormal_secs: i64,
    pub bin_secs: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_services: 12,
            edge_prob: 0.2,
            fault: FaultKind::Cpu,
            fault_magnitude: 8.0,
            propagation_decay: 0.5,
            blind_spot_fraction: 0.0,
            seed: 0,
            t0: 1_700_000_000,
            normal_secs: 900,
            abnormal_secs: 300,
            bin_secs: 15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_services < 2 {
            return Err(Error::input("need at least 2 services"));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob < 1.0) {
            return Err(Error::input("edge_prob must lie in (0, 1)"));
        }
        if self.fault_magnitude <= 0.0 {
            return Err(Error::input("fault_magnitude must be positive"));
        }
        if !(self.propagation_decay > 0.0 && self.propagation_decay < 1.0) {
            return Err(Error::input("propagation_decay must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.blind_spot_fraction) {
            return Err(Error::input("blind_spot_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn window(&self) -> Result<AnalysisWindow> {
        AnalysisWindow::new(
            self.t0,
            self.t0 + self.normal_secs,
            self.abnormal_secs,
            self.bin_secs,
        )
    }
}

/// What was actually injected, for scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub case_id: String,
    pub service: String,
    pub indicator: String,
    pub fault: FaultKind,
}

const LOG_SKELETONS: [&str; 8] = [
    "error processing request {} code {}",
    "request {} completed in {} ms",
    "worker {} accepted connection from 10.0.{}.{}",
    "cache lookup key {:010x} took {} us",
    "scheduled job {} on queue primary",
    "health check ok latency {} ms",
    "gc pause {} ms heap {} mb",
    "session {} renewed",
];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    Metric(&'static str),
    LogTemplate { skeleton: usize },
    /// `callee: None` is the service's own served operation.
    TraceLatency { callee: Option<usize> },
    TraceErrors { callee: Option<usize> },
}

#[derive(Debug, Clone)]
struct SeriesPlan {
    service: usize,
    family: Family,
    baseline: f64,
    sigma: f64,
    /// Shift strength relative to `fault_magnitude * sigma`; 0 = unaffected.
    factor: f64,
    lag_bins: usize,
    emitted: bool,
    values: Vec<f64>,
}

fn service_name(idx: usize, n: usize) -> String {
    let width = (n.saturating_sub(1)).to_string().len().max(2);
    format!("svc{idx:0width$}")
}

/// Generates one failure case into `dir` (metrics.csv, logs.jsonl,
/// traces.csv) and returns its ground truth.
pub fn generate_case(cfg: &SynthConfig, dir: &Path, case_id: &str) -> Result<GroundTruth> {
    cfg.validate()?;
    let window = cfg.window()?;
    let n = cfg.n_services;
    let names: Vec<String> = (0..n).map(|i| service_name(i, n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Call DAG: u calls v only for u < v, which makes the lexicographic
    // order a topological order. At least one edge always exists.
    let mut calls: Vec<Vec<usize>> = vec![Vec::new(); n];
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < cfg.edge_prob {
                calls[u].push(v);
            }
        }
    }
    if calls.iter().all(|c| c.is_empty()) {
        calls[0].push(1);
    }

    // Fault root: a delay/loss fault manifests on the root's own served
    // operation, so any service is eligible.
    let root = rng.gen_range(0..n);

    // Distance from the root walking call edges backwards (callee -> caller).
    let mut dist: Vec<Option<usize>> = vec![None; n];
    dist[root] = Some(0);
    let mut frontier = vec![root];
    while let Some(v) = frontier.pop() {
        let d = dist[v].unwrap();
        for u in 0..n {
            if calls[u].contains(&v) && dist[u].map_or(true, |cur| cur > d + 1) {
                dist[u] = Some(d + 1);
                frontier.push(u);
            }
        }
    }

    // Blind spots: shuffled services, the first round(frac * n) lose their
    // traces. A trace-targeting fault keeps its root traced unless the
    // fraction blinds everything.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    if cfg.fault.targets_traces() {
        order.retain(|&u| u != root);
        order.push(root);
    }
    let blind_count = (cfg.blind_spot_fraction * n as f64).round() as usize;
    let blinded: BTreeSet<usize> = order.iter().take(blind_count.min(n)).copied().collect();

    // Series plans, in a fixed order so rng draws are reproducible.
    let mut plans: Vec<SeriesPlan> = Vec::new();
    let mut truth_indicator: Option<String> = None;
    for svc in 0..n {
        let d = dist[svc];
        let is_root = svc == root;

        for metric in ["cpu", "mem", "disk", "net"] {
            let (baseline, sigma) = match metric {
                "net" => {
                    let b = rng.gen_range(100.0..400.0);
                    (b, b * 0.02)
                }
                _ => (rng.gen_range(0.2..0.7), rng.gen_range(0.01..0.03)),
            };
            let mut factor = 0.0;
            if is_root {
                if cfg.fault.primary_metric() == Some(metric) {
                    factor = 1.0;
                    truth_indicator = Some(metric.to_string());
                } else if metric == "net" && cfg.fault.targets_traces() {
                    factor = 0.6;
                } else if cfg.fault.primary_metric().is_some() {
                    // Resource faults co-manifest across the host's other
                    // metrics (saturation bleeds over), weakly.
                    factor = 0.4;
                }
            }
            plans.push(SeriesPlan {
                service: svc,
                family: Family::Metric(metric),
                baseline,
                sigma,
                factor,
                lag_bins: 0,
                emitted: true,
                values: Vec::new(),
            });
        }

        let n_templates = rng.gen_range(3..=6usize);
        let mut skeletons: Vec<usize> = (1..LOG_SKELETONS.len()).collect();
        skeletons.shuffle(&mut rng);
        let mut chosen = vec![0usize];
        chosen.extend(skeletons.into_iter().take(n_templates - 1));
        for skeleton in chosen {
            let baseline = rng.gen_range(6.0..12.0);
            let (factor, lag) = if skeleton == 0 {
                match d {
                    Some(0) => (0.5, 0),
                    Some(dd) => (0.5 * cfg.propagation_decay.powi(dd as i32), dd),
                    None => (0.0, 0),
                }
            } else {
                (0.0, 0)
            };
            plans.push(SeriesPlan {
                service: svc,
                family: Family::LogTemplate { skeleton },
                baseline,
                sigma: 2.2,
                factor,
                lag_bins: lag,
                emitted: true,
                values: Vec::new(),
            });
        }

        let emitted = !blinded.contains(&svc);

        // The service's own served operation.
        {
            let lat_base = rng.gen_range(20.0..200.0);
            let lat_sigma = lat_base * 0.04 + 1.0;
            let err_base = rng.gen_range(2.0..4.0);
            let mut lat_factor = 0.0;
            let mut err_factor = 0.0;
            if is_root {
                match cfg.fault {
                    FaultKind::Delay => {
                        lat_factor = 1.0;
                        truth_indicator = Some("op:serve:latency".to_string());
                    }
                    FaultKind::Loss => {
                        err_factor = 1.0;
                        truth_indicator = Some("op:serve:errors".to_string());
                    }
                    _ => {
                        // Any resource fault slows the root's own serving.
                        lat_factor = 0.6;
                    }
                }
            }
            plans.push(SeriesPlan {
                service: svc,
                family: Family::TraceLatency { callee: None },
                baseline: lat_base,
                sigma: lat_sigma,
                factor: lat_factor,
                lag_bins: 0,
                emitted,
                values: Vec::new(),
            });
            plans.push(SeriesPlan {
                service: svc,
                family: Family::TraceErrors { callee: None },
                baseline: err_base,
                sigma: 1.3,
                factor: err_factor,
                lag_bins: 0,
                emitted,
                values: Vec::new(),
            });
        }

        // Client-side pairs, one per outgoing call edge.
        for &callee in &calls[svc] {
            let lat_base = rng.gen_range(20.0..200.0);
            let lat_sigma = lat_base * 0.04 + 1.0;
            let err_base = rng.gen_range(2.0..4.0);

            let mut lat_factor = 0.0;
            let mut err_factor = 0.0;
            let mut lag = 0usize;
            if is_root {
                match cfg.fault {
                    FaultKind::Delay => lat_factor = 0.6,
                    FaultKind::Loss => err_factor = 0.6,
                    _ => lat_factor = 0.6,
                }
            } else if let Some(dd) = dist[svc] {
                // Shift only the edges that point toward the root.
                if dist[callee] == Some(dd - 1) {
                    lat_factor = cfg.propagation_decay.powi(dd as i32);
                    err_factor = 0.5 * cfg.propagation_decay.powi(dd as i32);
                    lag = dd;
                }
            }

            plans.push(SeriesPlan {
                service: svc,
                family: Family::TraceLatency { callee: Some(callee) },
                baseline: lat_base,
                sigma: lat_sigma,
                factor: lat_factor,
                lag_bins: lag,
                emitted,
                values: Vec::new(),
            });
            plans.push(SeriesPlan {
                service: svc,
                family: Family::TraceErrors { callee: Some(callee) },
                baseline: err_base,
                sigma: 1.3,
                factor: err_factor,
                lag_bins: lag,
                emitted,
                values: Vec::new(),
            });
        }
    }

    // The root's injected shift strictly dominates every other service.
    let max_factor = |svc: usize| -> f64 {
        plans
            .iter()
            .filter(|p| p.service == svc && p.emitted)
            .map(|p| p.factor)
            .fold(0.0, f64::max)
    };
    let root_factor = max_factor(root);
    for svc in 0..n {
        if svc != root {
            assert!(
                max_factor(svc) < root_factor,
                "root must carry the strictly largest injected shift"
            );
        }
    }

    // Fill in bin values.
    let n_bins = window.n_bins();
    let split = window.split_index();
    for plan in &mut plans {
        let mut values = Vec::with_capacity(n_bins);
        for t in 0..n_bins {
            let shifted = plan.factor > 0.0 && t >= split + plan.lag_bins;
            let shift = if shifted {
                plan.factor * cfg.fault_magnitude
            } else {
                0.0
            };
            let noise: f64 = StandardNormal.sample(&mut rng);
            let raw = plan.baseline + plan.sigma * (noise + shift);
            let value = match plan.family {
                Family::Metric(_) => raw.max(0.0),
                Family::TraceLatency { .. } => raw.max(0.1),
                Family::LogTemplate { .. } | Family::TraceErrors { .. } => raw.round().max(0.0),
            };
            values.push(value);
        }
        plan.values = values;
    }

    write_case_files(cfg, &window, dir, &names, &plans)?;

    Ok(GroundTruth {
        case_id: case_id.to_string(),
        service: names[root].clone(),
        indicator: truth_indicator.expect("every fault kind sets a primary indicator"),
        fault: cfg.fault,
    })
}

fn write_case_files(
    cfg: &SynthConfig,
    window: &AnalysisWindow,
    dir: &Path,
    names: &[String],
    plans: &[SeriesPlan],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_bins = window.n_bins();

    // metrics.csv
    let metric_plans: Vec<(&SeriesPlan, &'static str)> = plans
        .iter()
        .filter_map(|p| match p.family {
            Family::Metric(name) => Some((p, name)),
            _ => None,
        })
        .collect();
    let mut metrics = String::from("time");
    for (p, name) in &metric_plans {
        metrics.push(',');
        metrics.push_str(&format!("{}_{}", names[p.service], name));
    }
    metrics.push('\n');
    for t in 0..n_bins {
        metrics.push_str(&window.bin_start(t).to_string());
        for (p, _) in &metric_plans {
            metrics.push_str(&format!(",{:.6}", p.values[t]));
        }
        metrics.push('\n');
    }
    write_file(&dir.join("metrics.csv"), &metrics)?;

    // logs.jsonl, ordered by timestamp then service.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x106));
    let mut lines: Vec<(i64, usize, String)> = Vec::new();
    for p in plans {
        let Family::LogTemplate { skeleton } = p.family else {
            continue;
        };
        for t in 0..n_bins {
            let count = p.values[t] as usize;
            let start = window.bin_start(t);
            for j in 0..count {
                let offset = (j as i64 * cfg.bin_secs) / (count as i64 + 1);
                lines.push((start + offset, p.service, render_log(skeleton, &mut rng)));
            }
        }
    }
    lines.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut logs = String::new();
    for (time, svc, message) in lines {
        logs.push_str(&serde_json::to_string(&serde_json::json!({
            "time": time,
            "service": names[svc],
            "message": message,
        }))
        .expect("log line serializes"));
        logs.push('\n');
    }
    write_file(&dir.join("logs.jsonl"), &logs)?;

    // traces.csv: per operation and bin, three ok spans plus one per error.
    let mut traces = String::from("time,trace_id,service,operation,latency_ms,status\n");
    let mut span_id = 0u64;
    for p in plans {
        let Family::TraceLatency { callee } = p.family else {
            continue;
        };
        if !p.emitted {
            continue;
        }
        let operation = match callee {
            Some(c) => format!("call-{}", names[c]),
            None => "serve".to_string(),
        };
        let errors = plans
            .iter()
            .find(|q| q.service == p.service && q.family == Family::TraceErrors { callee })
            .expect("latency and errors come in pairs");
        for t in 0..n_bins {
            let latency = p.values[t];
            let err_count = errors.values[t] as usize;
            let start = window.bin_start(t);
            let total = 3 + err_count;
            for j in 0..total {
                let offset = (j as i64 * cfg.bin_secs) / (total as i64 + 1);
                let status = if j < err_count { "500" } else { "200" };
                traces.push_str(&format!(
                    "{},t{:08x},{},{},{:.6},{}\n",
                    start + offset,
                    span_id,
                    names[p.service],
                    operation,
                    latency,
                    status
                ));
                span_id += 1;
            }
        }
    }
    write_file(&dir.join("traces.csv"), &traces)?;
    Ok(())
}

fn render_log(skeleton: usize, rng: &mut ChaCha8Rng) -> String {
    let n1 = rng.gen_range(1..10_000u32);
    let n2 = rng.gen_range(1..10_000u32);
    match skeleton {
        0 => format!("error processing request {n1} code {n2}"),
        1 => format!("request {n1} completed in {n2} ms"),
        2 => format!(
            "worker {n1} accepted connection from 10.0.{}.{}",
            n2 % 256,
            (n2 / 256) % 256
        ),
        3 => format!("cache lookup key {:010x} took {n2} us", u64::from(n1) * 97),
        4 => format!("scheduled job {n1} on queue primary"),
        5 => format!("health check ok latency {n1} ms"),
        6 => format!("gc pause {n1} ms heap {n2} mb"),
        7 => format!(
            "session {:08x}-{:04x}-{:04x}-{:04x}-{:012x} renewed",
            n1,
            n2 % 0xffff,
            n1 % 0xffff,
            n2 % 0xffff,
            u64::from(n1) * u64::from(n2)
        ),
        _ => unreachable!(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Single-case AC@k: fraction of the true root causes found in the top-k,
/// normalized by min(k, |truth|).
pub fn ac_at_k(ranked: &[String], truth: &[String], k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::input("truth set must be nonempty"));
    }
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    let truth_set: BTreeSet<&String> = truth.iter().collect();
    let hits = ranked
        .iter()
        .take(k)
        .filter(|s| truth_set.contains(s))
        .count();
    Ok(hits as f64 / k.min(truth_set.len()) as f64)
}

/// Mean of AC@1..AC@k for one case.
pub fn avg_at_k(ranked: &[String], truth: &[String], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    let mut acc = 0.0;
    for j in 1..=k {
        acc += ac_at_k(ranked, truth, j)?;
    }
    Ok(acc / k as f64)
}

/// AC@1/AC@3/AC@5/Avg@5 block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub ac1: f64,
    pub ac3: f64,
    pub ac5: f64,
    pub avg5: f64,
}

impl MetricBlock {
    /// Builds the block from 1-based ranks of singleton truths (0 = absent).
    pub fn from_ranks(ranks: &[usize]) -> MetricBlock {
        let n = ranks.len().max(1) as f64;
        let ac = |k: usize| -> f64 {
            ranks.iter().filter(|&&r| r > 0 && r <= k).count() as f64 / n
        };
        let avg5 = (1..=5).map(ac).sum::<f64>() / 5.0;
        MetricBlock {
            ac1: ac(1),
            ac3: ac(3),
            ac5: ac(5),
            avg5,
        }
    }
}

/// Outcome of one suite case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub fault: FaultKind,
    pub truth: GroundTruth,
    /// 1-based rank of the true service in the report; 0 when absent.
    pub service_rank: usize,
    /// 1-based rank of the true indicator within the true service; 0 when
    /// absent.
    pub indicator_rank: usize,
}

/// Suite-level metrics written to summary.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub per_fault: std::collections::BTreeMap<String, MetricBlock>,
    pub overall: MetricBlock,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub failures: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

/// Full suite result (summary plus per-case detail kept in memory).
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub summary: SuiteSummary,
    pub cases: Vec<CaseOutcome>,
}

impl SuiteOutcome {
    /// Fraction of scored cases whose true indicator ranked first within
    /// the true service.
    pub fn indicator_top1_rate(&self) -> f64 {
        if self.cases.is_empty() {
            return 0.0;
        }
        self.cases.iter().filter(|c| c.indicator_rank == 1).count() as f64
            / self.cases.len() as f64
    }
}

/// Suite parameters: a config template plus the fault rotation.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub n_cases: usize,
    pub template: SynthConfig,
    pub faults: Vec<FaultKind>,
    pub rca: RcaConfig,
}

pub fn case_name(idx: usize) -> String {
    format!("case_{idx:03}")
}

/// Per-case config: derived seed plus the rotated fault kind.
pub fn case_config(template: &SynthConfig, faults: &[FaultKind], idx: usize) -> SynthConfig {
    let mut cfg = *template;
    cfg.seed = derive_seed(template.seed, idx as u64);
    cfg.fault = faults[idx % faults.len()];
    cfg
}

/// Generates `n_cases` case directories under `out_dir` and writes
/// truth.json. Cases are independent and generated in parallel.
pub fn generate_cases(
    template: &SynthConfig,
    faults: &[FaultKind],
    n_cases: usize,
    out_dir: &Path,
) -> Result<Vec<GroundTruth>> {
    if n_cases == 0 {
        return Err(Error::input("need at least one case"));
    }
    if faults.is_empty() {
        return Err(Error::input("need at least one fault kind"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results = parallel::map_range(n_cases, |i| {
        let case_id = case_name(i);
        let cfg = case_config(template, faults, i);
        generate_case(&cfg, &out_dir.join(&case_id), &case_id)
    });
    let mut truths = Vec::new();
    for r in results {
        truths.push(r?);
    }
    write_file(
        &out_dir.join("truth.json"),
        &format!("{}\n", serde_json::to_string_pretty(&truths).expect("truth serializes")),
    )?;
    Ok(truths)
}

/// Generates `n_cases` with derived seeds, runs the pipeline on each, and
/// writes truth.json, summary.json, cases.csv, and per-case reports under
/// `out_dir`. Case failures are recorded and the suite continues.
pub fn run_suite(cfg: &SuiteConfig, out_dir: &Path) -> Result<SuiteOutcome> {
    if cfg.n_cases == 0 {
        return Err(Error::input("suite needs at least one case"));
    }
    if cfg.faults.is_empty() {
        return Err(Error::input("suite needs at least one fault kind"));
    }
    std::fs::create_dir_all(out_dir.join("reports")).map_err(|e| Error::io(out_dir, e))?;

    let results = parallel::map_range(cfg.n_cases, |i| -> Result<(CaseOutcome, RcaReport)> {
        let case_id = case_name(i);
        let case_cfg = case_config(&cfg.template, &cfg.faults, i);
        let dir = out_dir.join(&case_id);
        let truth = generate_case(&case_cfg, &dir, &case_id)?;

        let window = case_cfg.window()?;
        let inputs = InputPaths {
            metrics: Some(dir.join("metrics.csv")),
            logs: Some(dir.join("logs.jsonl")),
            traces: Some(dir.join("traces.csv")),
        };
        let bundle = build_bundle(&inputs, &DrainConfig::default(), &window)?;
        let report = run_rca(&bundle, &cfg.rca)?;

        let service_rank = report
            .services
            .iter()
            .position(|s| s.service == truth.service)
            .map(|p| p + 1)
            .unwrap_or(0);
        let indicator_rank = report
            .services
            .iter()
            .find(|s| s.service == truth.service)
            .and_then(|s| {
                s.indicators
                    .iter()
                    .position(|ind| ind.indicator == truth.indicator)
            })
            .map(|p| p + 1)
            .unwrap_or(0);

        Ok((
            CaseOutcome {
                case_id,
                fault: case_cfg.fault,
                truth,
                service_rank,
                indicator_rank,
            },
            report,
        ))
    });

    let mut cases = Vec::new();
    let mut failures = 0u64;
    let mut truths = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok((outcome, report)) => {
                let report_path = out_dir.join("reports").join(format!("{}.json", outcome.case_id));
                write_file(&report_path, &report.to_json())?;
                truths.push(outcome.truth.clone());
                cases.push(outcome);
            }
            Err(e) => {
                failures += 1;
                eprintln!("case {} failed: {e}", case_name(i));
            }
        }
    }

    let mut per_fault = std::collections::BTreeMap::new();
    for fault in FaultKind::ALL {
        let ranks: Vec<usize> = cases
            .iter()
            .filter(|c| c.fault == fault)
            .map(|c| c.service_rank)
            .collect();
        if !ranks.is_empty() {
            per_fault.insert(fault.as_str().to_string(), MetricBlock::from_ranks(&ranks));
        }
    }
    let all_ranks: Vec<usize> = cases.iter().map(|c| c.service_rank).collect();
    let summary = SuiteSummary {
        per_fault,
        overall: MetricBlock::from_ranks(&all_ranks),
        failures,
    };

    write_file(
        &out_dir.join("truth.json"),
        &format!("{}\n", serde_json::to_string_pretty(&truths).expect("truth serializes")),
    )?;
    write_file(
        &out_dir.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary).expect("summary serializes")),
    )?;
    let mut csv = String::from("case_id,fault,rank_of_truth\n");
    for c in &cases {
        csv.push_str(&format!("{},{},{}\n", c.case_id, c.fault, c.service_rank));
    }
    write_file(&out_dir.join("cases.csv"), &csv)?;

    Ok(SuiteOutcome { summary, cases })
}

/// Reads a truth.json written by `run_suite` or the synth command.
pub fn read_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::parse(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::severity::all_vectors;
    use tempfile::TempDir;

    fn small_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            n_services: 6,
            edge_prob: 0.3,
            fault: FaultKind::Cpu,
            fault_magnitude: 8.0,
            propagation_decay: 0.5,
            blind_spot_fraction: 0.0,
            seed,
            t0: 1_700_000_000,
            normal_secs: 600,
            abnormal_secs: 300,
            bin_secs: 15,
        }
    }

    fn ingest_case(cfg: &SynthConfig, dir: &Path) -> crate::model::TelemetryBundle {
        let inputs = InputPaths {
            metrics: Some(dir.join("metrics.csv")),
            logs: Some(dir.join("logs.jsonl")),
            traces: Some(dir.join("traces.csv")),
        };
        build_bundle(&inputs, &DrainConfig::default(), &cfg.window().unwrap()).unwrap()
    }

    #[test]
    fn root_has_largest_severity() {
        let tmp = TempDir::new().unwrap();
        let cfg = small_cfg(7);
        let truth = generate_case(&cfg, tmp.path(), "case_000").unwrap();
        let bundle = ingest_case(&cfg, tmp.path());
        let vectors = all_vectors(&bundle).unwrap();
        let best = vectors
            .iter()
            .max_by(|a, b| a.mean().total_cmp(&b.mean()))
            .unwrap();
        assert_eq!(best.service, truth.service);
    }

    #[test]
    fn round_trip_has_no_diagnostics() {
        let tmp = TempDir::new().unwrap();
        let cfg = small_cfg(3);
        generate_case(&cfg, tmp.path(), "case_000").unwrap();
        let bundle = ingest_case(&cfg, tmp.path());
        assert_eq!(bundle.diagnostics.skipped_log_records, 0);
        assert_eq!(bundle.diagnostics.out_of_window_records, 0);
    }

    #[test]
    fn full_blind_spot_leaves_header_only_traces() {
        let tmp = TempDir::new().unwrap();
        let mut cfg = small_cfg(5);
        cfg.blind_spot_fraction = 1.0;
        generate_case(&cfg, tmp.path(), "case_000").unwrap();
        let traces = std::fs::read_to_string(tmp.path().join("traces.csv")).unwrap();
        assert_eq!(traces, "time,trace_id,service,operation,latency_ms,status\n");
    }

    #[test]
    fn same_seed_same_bytes() {
        let t1 = TempDir::new().unwrap();
        let t2 = TempDir::new().unwrap();
        let cfg = small_cfg(11);
        generate_case(&cfg, t1.path(), "case_000").unwrap();
        generate_case(&cfg, t2.path(), "case_000").unwrap();
        for file in ["metrics.csv", "logs.jsonl", "traces.csv"] {
            let a = std::fs::read(t1.path().join(file)).unwrap();
            let b = std::fs::read(t2.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs");
        }
    }

    #[test]
    fn delay_fault_truth_names_a_latency_series() {
        let tmp = TempDir::new().unwrap();
        let mut cfg = small_cfg(13);
        cfg.fault = FaultKind::Delay;
        let truth = generate_case(&cfg, tmp.path(), "case_000").unwrap();
        assert_eq!(truth.indicator, "op:serve:latency");
        // The named series actually exists in the emitted telemetry.
        let bundle = ingest_case(&cfg, tmp.path());
        assert!(bundle
            .series_of(&truth.service)
            .any(|s| s.indicator == truth.indicator));
    }

    #[test]
    fn ac_at_k_hand_cases() {
        let r = |names: &[&str]| -> Vec<String> { names.iter().map(|s| s.to_string()).collect() };
        let ranked = r(&["b", "a", "c"]);
        let truth = r(&["a"]);
        assert_eq!(ac_at_k(&ranked, &truth, 1).unwrap(), 0.0);
        assert_eq!(ac_at_k(&ranked, &truth, 3).unwrap(), 1.0);

        let ranked = r(&["a", "b", "c"]);
        let truth = r(&["a", "c"]);
        assert_eq!(ac_at_k(&ranked, &truth, 2).unwrap(), 0.5);
        assert_eq!(ac_at_k(&ranked, &truth, 3).unwrap(), 1.0);

        // Saturation: truth within top-|V| -> 1 for all k >= |V|.
        for k in 2..6 {
            assert_eq!(ac_at_k(&r(&["a", "c", "x", "y", "z"]), &truth, k).unwrap(), 1.0);
        }
        assert!(ac_at_k(&ranked, &[], 1).is_err());
    }

    #[test]
    fn avg_at_k_hand_cases() {
        let ranked = vec!["b".to_string(), "a".to_string()];
        let truth = vec!["a".to_string()];
        // AC@1 = 0, AC@2 = 1 -> Avg@2 = 0.5.
        assert_eq!(avg_at_k(&ranked, &truth, 2).unwrap(), 0.5);

        let perfect = vec!["a".to_string(), "b".to_string()];
        assert_eq!(avg_at_k(&perfect, &truth, 5).unwrap(), 1.0);

        let miss = vec!["x".to_string(), "y".to_string()];
        assert_eq!(avg_at_k(&miss, &truth, 5).unwrap(), 0.0);
    }

    #[test]
    fn suite_single_case_summary_matches_case() {
        let tmp = TempDir::new().unwrap();
        let cfg = SuiteConfig {
            n_cases: 1,
            template: small_cfg(21),
            faults: vec![FaultKind::Cpu],
            rca: RcaConfig::default(),
        };
        let outcome = run_suite(&cfg, tmp.path()).unwrap();
        assert_eq!(outcome.cases.len(), 1);
        let rank = outcome.cases[0].service_rank;
        let expect = MetricBlock::from_ranks(&[rank]);
        assert_eq!(outcome.summary.overall, expect);
        assert!(tmp.path().join("truth.json").exists());
        assert!(tmp.path().join("summary.json").exists());
        assert!(tmp.path().join("cases.csv").exists());
        assert!(tmp.path().join("reports/case_000.json").exists());
    }

    #[test]
    fn suite_deterministic() {
        let t1 = TempDir::new().unwrap();
        let t2 = TempDir::new().unwrap();
        let cfg = SuiteConfig {
            n_cases: 3,
            template: small_cfg(33),
            faults: vec![FaultKind::Cpu, FaultKind::Delay],
            rca: RcaConfig::default(),
        };
        let a = run_suite(&cfg, t1.path()).unwrap();
        let b = run_suite(&cfg, t2.path()).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.cases, b.cases);
        let sa = std::fs::read(t1.path().join("summary.json")).unwrap();
        let sb = std::fs::read(t2.path().join("summary.json")).unwrap();
        assert_eq!(sa, sb);
    }
}
