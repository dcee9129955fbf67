//! Deployment plumbing: configuration, task batches, executors, the
//! chat-completions gateway, LLM-backed components and reports.

mod config;
mod executor;
pub mod gateway;
pub mod llm;
mod report;
mod tasks;

pub use config::{
    load_config, CommandSpec, ConfigError, EndpointConfig, ExecutorKind, JudgeKind, MockSettings, RunConfig,
    RunSettings, ScorerKind,
};
pub use executor::{
    assemble_input, execute_assignment, AgentCall, CallMode, CommandExecutor, Executor, ExecutorError, Mismatch, MockExecutor, MockRule,
    TranscriptEntry, Verdict,
};
pub use report::{render_report, write_report, ReportBundle};
pub use tasks::{ingest_tasks, parse_tasks, Task, TaskBatch, TaskError, Verifier};
