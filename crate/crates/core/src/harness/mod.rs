//! Dataset handling and the edit-stream harness behind the CLI.

pub mod dataset;
pub mod report;
pub mod stream;

pub use dataset::{ingest, parse, synthesize, Dataset, InputFormat, Preset};
pub use report::{render, summarize, ReportFormat, Summary};
pub use stream::{
    log10_seconds, run_schedule, run_stream, schedule, AnyModel, ModelConfig, PerStrategy, RoundReport, Schedule,
    Space, Strategy, StrategyChoice, StreamPlan, StreamRun,
};
