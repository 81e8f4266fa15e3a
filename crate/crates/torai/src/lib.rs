//! Offline, unsupervised root-cause analysis for microservice failures.
//!
//! The pipeline turns multi-source telemetry (metrics, logs, traces) into
//! aligned time series, scores per-service anomaly severity, groups services
//! by severity symptoms, ranks causal root candidates inside each group,
//! aggregates the group rankings into one service ranking, and finally ranks
//! the fine-grained indicators of each service. A synthetic fault-injection
//! generator and an AC@k evaluation harness round out the crate so the whole
//! pipeline can be exercised end to end without a live cluster.

pub mod causal;
pub mod cluster;
pub mod error;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod severity;
pub mod synth;

mod parallel;

pub use error::{Error, Result};
pub use model::{AnalysisWindow, NormalStats, SourceKind, SystemSnapshot, TelemetryBundle, TimeSeries};
pub use pipeline::{RcaConfig, RcaReport};
