//! Request and response bodies shared by the service and its clients.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mapro_core::harness::{RunSettings, Task};
use mapro_core::inference::{Assignment, SolveMethod, SolveTrace};
use mapro_core::orchestrator::OptimizationState;
use mapro_core::scoring::ScoreTables;
use mapro_core::topology::{AgentId, GraphDocument};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveRequest {
    pub graph: GraphDocument,
    pub tables: ScoreTables,
    /// Also run exhaustive search and report its assignment.
    #[serde(default)]
    pub brute_force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResponse {
    pub assignment: Assignment,
    pub trace: SolveTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brute_force: Option<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub settings: RunSettings,
    pub graph: GraphDocument,
    pub tasks: Vec<Task>,
    /// JSON-lines file receiving every gateway call of this run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Idle,
    Running,
    Finished,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub id: String,
    pub iteration: usize,
    pub k: usize,
    pub history: Vec<f64>,
    pub best_pass_rate: Option<f64>,
    pub frozen: bool,
    pub job: JobState,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRequest {
    /// Total iteration cap; defaults to the run settings.
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// 0-based index of the iteration just completed.
    pub iteration: usize,
    pub pass_rate: f64,
    pub passed: usize,
    pub tasks: usize,
    pub joint_score: f64,
    pub chosen: BTreeMap<AgentId, usize>,
    pub method: SolveMethod,
    pub message_count: usize,
    pub global_feedback: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresResponse {
    pub iteration: usize,
    pub tables: ScoreTables,
    pub trace: SolveTrace,
}

/// Everything needed to recreate a run elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub settings: RunSettings,
    pub state: OptimizationState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub error: String,
}
