//! `torai` — offline root-cause analysis for microservice failures.
//!
//! Three subcommands: `run` analyzes telemetry files into a ranked report,
//! `synth` generates fault-injection cases with ground truth, and `eval`
//! scores reports against ground truth with AC@k / Avg@k.
//!
//! Exit codes: 0 success, 2 usage or input-file errors, 3 insufficient or
//! inconsistent analysis data.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use torai::error::Error;
use torai::ingest::{build_bundle, DrainConfig, InputPaths};
use torai::model::AnalysisWindow;
use torai::pipeline::{run_rca, RcaConfig, RcaReport};
use torai::synth::{
    ac_at_k, generate_cases, read_truth, FaultKind, MetricBlock, SuiteSummary, SynthConfig,
};

#[derive(Parser)]
#[command(name = "torai", version, about = "Multi-source root-cause analysis for microservice failures")]
struct Cli {
    /// Worker threads for parallel stages (env TORAI_THREADS as fallback;
    /// default: all cores). Results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze telemetry files and write a ranked root-cause report.
    Run(RunArgs),
    /// Generate synthetic failure cases with ground truth.
    Synth(SynthArgs),
    /// Score reports against ground truth with AC@k / Avg@k.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Metrics CSV (`time,<service>_<metric>,...`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Logs as JSON Lines with fields time, service, message.
    #[arg(long)]
    logs: Option<PathBuf>,
    /// Traces CSV (`time,trace_id,service,operation,latency_ms,status`).
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Anomaly detection time, epoch seconds.
    #[arg(long)]
    anomaly_at: i64,
    /// Normal-period length in seconds, ending at --anomaly-at.
    #[arg(long)]
    normal_window: i64,
    /// Abnormal-period length in seconds, starting at --anomaly-at.
    #[arg(long)]
    abnormal_window: i64,
    /// Bin width in seconds.
    #[arg(long, default_value_t = 15)]
    bin: i64,
    /// Services printed to stdout.
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Significance level for conditional-independence tests.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Series per chunk in the causal stage.
    #[arg(long, default_value_t = 10)]
    chunk_size: usize,
    /// Report output path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Services per case.
    #[arg(long, default_value_t = 12)]
    services: usize,
    /// Number of cases to generate.
    #[arg(long, default_value_t = 1)]
    cases: usize,
    /// Fault kind: cpu, mem, disk, socket, delay, loss, or `all` to rotate.
    #[arg(long, default_value = "all")]
    fault: String,
    /// Fraction of services emitting no traces.
    #[arg(long, default_value_t = 0.0)]
    blind_spots: f64,
    /// Call-edge probability of the random DAG.
    #[arg(long, default_value_t = 0.2)]
    edge_prob: f64,
    /// Primary shift in noise-sigma units.
    #[arg(long, default_value_t = 8.0)]
    magnitude: f64,
    /// Attenuation per propagation hop.
    #[arg(long, default_value_t = 0.5)]
    decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Normal-period length in seconds.
    #[arg(long, default_value_t = 900)]
    normal_window: i64,
    /// Abnormal-period length in seconds.
    #[arg(long, default_value_t = 300)]
    abnormal_window: i64,
    /// Bin width in seconds.
    #[arg(long, default_value_t = 15)]
    bin: i64,
    /// Epoch seconds of the first bin.
    #[arg(long, default_value_t = 1_700_000_000)]
    start_at: i64,
    /// Output directory for case_NNN/ subdirectories and truth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of per-case reports named <case_id>.json.
    #[arg(long)]
    reports: PathBuf,
    /// truth.json written by `synth`.
    #[arg(long)]
    truth: PathBuf,
    /// Summary output path (JSON).
    #[arg(long, default_value = "summary.json")]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

/// File-level problems exit 2; semantic analysis problems exit 3.
fn input_failure(e: Error) -> Failure {
    Failure::new(2, e.to_string())
}

fn analysis_failure(e: Error) -> Failure {
    match e {
        Error::Input(_) => Failure::new(3, e.to_string()),
        other => Failure::new(2, other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

#[cfg(feature = "parallel")]
fn init_threads(threads: Option<usize>) {
    let threads = threads.or_else(|| {
        std::env::var("TORAI_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_threads: Option<usize>) {}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    if args.metrics.is_none() && args.logs.is_none() && args.traces.is_none() {
        return Err(Failure::new(
            2,
            "at least one of --metrics, --logs, --traces is required",
        ));
    }
    let window = AnalysisWindow::new(
        args.anomaly_at - args.normal_window,
        args.anomaly_at,
        args.abnormal_window,
        args.bin,
    )
    .map_err(analysis_failure)?;

    let inputs = InputPaths {
        metrics: args.metrics,
        logs: args.logs,
        traces: args.traces,
    };
    let bundle = build_bundle(&inputs, &DrainConfig::default(), &window).map_err(input_failure)?;

    let cfg = RcaConfig {
        seed: args.seed,
        alpha: args.alpha,
        chunk_size: args.chunk_size,
        bin_secs: args.bin,
        ..Default::default()
    };
    let report = run_rca(&bundle, &cfg).map_err(analysis_failure)?;

    std::fs::write(&args.out, report.to_json())
        .map_err(|e| Failure::new(2, format!("cannot write {}: {e}", args.out.display())))?;

    print_report(&report, args.top_k);
    Ok(())
}

fn print_report(report: &RcaReport, top_k: usize) {
    println!("{:<6}{:<24}{:<14}{}", "rank", "service", "score", "top indicator");
    for svc in report.services.iter().take(top_k) {
        let indicator = svc
            .indicators
            .first()
            .map(|i| i.indicator.as_str())
            .unwrap_or("-");
        println!("{:<6}{:<24}{:<14.6}{}", svc.rank, svc.service, svc.score, indicator);
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let faults: Vec<FaultKind> = if args.fault.eq_ignore_ascii_case("all") {
        FaultKind::ALL.to_vec()
    } else {
        vec![args.fault.parse().map_err(|e: Error| Failure::new(2, e.to_string()))?]
    };
    let template = SynthConfig {
        n_services: args.services,
        edge_prob: args.edge_prob,
        fault: faults[0],
        fault_magnitude: args.magnitude,
        propagation_decay: args.decay,
        blind_spot_fraction: args.blind_spots,
        seed: args.seed,
        t0: args.start_at,
        normal_secs: args.normal_window,
        abnormal_secs: args.abnormal_window,
        bin_secs: args.bin,
    };
    let truths =
        generate_cases(&template, &faults, args.cases, &args.out).map_err(input_failure)?;
    println!(
        "wrote {} case(s) and truth.json under {}",
        truths.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let truths = read_truth(&args.truth).map_err(input_failure)?;
    if truths.is_empty() {
        return Err(Failure::new(2, "truth file lists no cases"));
    }

    let mut ranks: Vec<(FaultKind, usize)> = Vec::new();
    for truth in &truths {
        let path = args.reports.join(format!("{}.json", truth.case_id));
        let body = std::fs::read_to_string(&path).map_err(|e| {
            Failure::new(
                2,
                format!("no report for case {} at {}: {e}", truth.case_id, path.display()),
            )
        })?;
        let report = RcaReport::from_json(&body)
            .map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?;
        let ranked = report.ranked_services();
        // ac_at_k drives the metrics; rank is its sufficient statistic for
        // a singleton truth set.
        let rank = ranked
            .iter()
            .position(|s| *s == truth.service)
            .map(|p| p + 1)
            .unwrap_or(0);
        debug_assert_eq!(
            ac_at_k(&ranked, std::slice::from_ref(&truth.service), 1).unwrap(),
            if rank == 1 { 1.0 } else { 0.0 }
        );
        ranks.push((truth.fault, rank));
    }

    let mut per_fault = BTreeMap::new();
    for fault in FaultKind::ALL {
        let subset: Vec<usize> = ranks
            .iter()
            .filter(|(f, _)| *f == fault)
            .map(|(_, r)| *r)
            .collect();
        if !subset.is_empty() {
            per_fault.insert(fault.as_str().to_string(), MetricBlock::from_ranks(&subset));
        }
    }
    let all: Vec<usize> = ranks.iter().map(|(_, r)| *r).collect();
    let summary = SuiteSummary {
        per_fault,
        overall: MetricBlock::from_ranks(&all),
        failures: 0,
    };

    println!("{:<10}{:>8}{:>8}{:>8}{:>8}", "fault", "AC@1", "AC@3", "AC@5", "Avg@5");
    for (fault, block) in &summary.per_fault {
        println!(
            "{:<10}{:>8.3}{:>8.3}{:>8.3}{:>8.3}",
            fault, block.ac1, block.ac3, block.ac5, block.avg5
        );
    }
    let o = &summary.overall;
    println!("{:<10}{:>8.3}{:>8.3}{:>8.3}{:>8.3}", "overall", o.ac1, o.ac3, o.ac5, o.avg5);

    let body = format!(
        "{}\n",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    std::fs::write(&args.out, body)
        .map_err(|e| Failure::new(2, format!("cannot write {}: {e}", args.out.display())))?;
    Ok(())
}
