//! Trace-driven working set analysis.
//!
//! A trace of instruction fetches and data accesses (Valgrind lackey
//! `--trace-mem` syntax plus a few extensions) is replayed on an
//! instruction-count clock. At every multiple of the sampling interval the
//! analyzer counts the instruction and data pages touched within the
//! preceding window, optionally flags peaks in those series, and ranks the
//! most frequently accessed pages.
//!
//! ```
//! use wsprof_core::{engine, workloads};
//!
//! let trace = workloads::gen_step(10, 50, 20, workloads::StepConfig::default()).unwrap();
//! let config = engine::AnalysisConfig {
//!     peak: Some(Default::default()),
//!     ..engine::AnalysisConfig::with_tau(1000)
//! };
//! let result = engine::run_analysis(trace, config).unwrap();
//! assert_eq!(result.combined.samples.iter().filter(|s| s.peak_data).count(), 1);
//! ```

pub mod cli;
pub mod engine;
pub mod peak;
pub mod report;
pub mod trace;
pub mod workloads;

pub use engine::{run_analysis, AnalysisConfig, AnalysisResult, Analyzer, Stream, WssSample};
pub use peak::{detect_series, PeakDetector, PeakParams, PeakVerdict};
pub use trace::{AccessKind, CallStackDecl, ParseMode, Record, TraceEvent, TraceReader};
