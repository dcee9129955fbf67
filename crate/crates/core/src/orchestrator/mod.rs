//! The optimization loop: MAP selection, batch execution, preference
//! update and refinement, with resumable state.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::gateway::{AuditLog, ChatGateway};
use crate::harness::llm::{LlmExecutor, LlmJudge, LlmScorer};
use crate::harness::{
    CommandExecutor, ConfigError, Executor, ExecutorKind, JudgeKind, MockExecutor, RunSettings, ScorerKind, TaskBatch,
};
use crate::inference::{Assignment, InferenceError, SolveMethod};
use crate::refinement::{LanguageJudge, MockJudge, RefinementError};
use crate::scoring::mock::MockScorer;
use crate::scoring::{CachedScorer, DemoKey, ExpectedIO, PreferencePool, RewardScorer, ScoringError};
use crate::topology::{AgentGraph, AgentId, GraphDocument, PoolError, PromptCandidate, PromptPool, TopologyError};

mod run;

pub use run::{base_prompts, initialize, run_iteration, run_loop, run_loop_observed, IterationOutcome, BOOTSTRAP_DRAWS};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("state is frozen; no further iterations are allowed")]
    Frozen,
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Refinement(#[from] RefinementError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("snapshot schema mismatch: {0}")]
    SchemaMismatch(String),
}

/// The three pluggable services an optimization run talks to.
#[derive(Clone)]
pub struct Components {
    pub scorer: Arc<dyn RewardScorer>,
    pub executor: Arc<dyn Executor>,
    pub judge: Arc<dyn LanguageJudge>,
}

impl Components {
    pub fn new(
        scorer: impl RewardScorer + 'static,
        executor: impl Executor + 'static,
        judge: impl LanguageJudge + 'static,
    ) -> Self {
        Self { scorer: Arc::new(scorer), executor: Arc::new(executor), judge: Arc::new(judge) }
    }

    /// Builds the components named in `settings`. A gateway is created only
    /// if some component needs one; it shares `audit`.
    pub fn from_settings(settings: &RunSettings, audit: AuditLog) -> Result<Self, OrchestratorError> {
        settings.validate()?;
        let gateway = match &settings.endpoint {
            Some(e)
                if settings.scorer == ScorerKind::Llm
                    || settings.executor == ExecutorKind::Llm
                    || settings.judge == JudgeKind::Llm =>
            {
                Some(Arc::new(ChatGateway::new(e.clone(), audit).map_err(|err| {
                    OrchestratorError::Precondition(format!("cannot build gateway: {err}"))
                })?))
            }
            _ => None,
        };
        let gw = || gateway.clone().expect("validated: endpoint present");
        let scorer: Arc<dyn RewardScorer> = match settings.scorer {
            ScorerKind::Mock => Arc::new(CachedScorer::new(MockScorer {
                targets: settings.mock.targets.clone(),
                seed: settings.seed,
                jitter: settings.mock.jitter,
            })),
            ScorerKind::Llm => Arc::new(CachedScorer::new(LlmScorer::new(gw()))),
        };
        let executor: Arc<dyn Executor> = match settings.executor {
            ExecutorKind::Mock => Arc::new(MockExecutor::new(settings.mock.rules.clone())),
            ExecutorKind::Command => {
                let c = settings.command.clone().expect("validated: command present");
                Arc::new(CommandExecutor { program: c.program, args: c.args })
            }
            ExecutorKind::Llm => Arc::new(LlmExecutor::new(gw())),
        };
        let judge: Arc<dyn LanguageJudge> = match settings.judge {
            JudgeKind::Mock => Arc::new(MockJudge { accept_threshold: settings.mock.accept_threshold }),
            JudgeKind::Llm => Arc::new(LlmJudge::new(gw())),
        };
        Ok(Self { scorer, executor, judge })
    }
}

/// Best assignment seen so far, with the prompts it selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub assignment: Assignment,
    pub pass_rate: f64,
    /// 0-based iteration that produced it.
    pub iteration: usize,
    pub prompts: BTreeMap<AgentId, PromptCandidate>,
}

/// One line of the trajectory report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub pass_rate: f64,
    pub best_pass_rate: f64,
    pub joint_score: f64,
    /// 1-based candidate index chosen per agent.
    pub chosen: BTreeMap<AgentId, usize>,
    pub method: SolveMethod,
    pub message_count: usize,
    pub passed: usize,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationState {
    pub schema_version: u32,
    /// Completed iterations.
    pub iteration: usize,
    pub k: usize,
    pub seed: u64,
    pub graph: GraphDocument,
    pub tasks: TaskBatch,
    pub pools: BTreeMap<AgentId, PromptPool>,
    pub demos: BTreeMap<DemoKey, PreferencePool>,
    pub expected_io: BTreeMap<AgentId, ExpectedIO>,
    /// Pass-rate per completed iteration.
    pub history: Vec<f64>,
    pub best: Option<BestRecord>,
    pub frozen: bool,
    pub trajectory: Vec<TrajectoryRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl OptimizationState {
    pub fn agent_graph(&self) -> Result<AgentGraph, OrchestratorError> {
        Ok(self.graph.clone().into_graph()?)
    }

    /// Frozen prompt set: the best record's prompts, or the first candidate
    /// of every pool before any iteration has run.
    pub fn final_prompts(&self) -> BTreeMap<AgentId, String> {
        match &self.best {
            Some(b) => b.prompts.iter().map(|(a, c)| (a.clone(), c.text.clone())).collect(),
            None => self
                .pools
                .iter()
                .map(|(a, p)| (a.clone(), p.get(1).map(|c| c.text.clone()).unwrap_or_default()))
                .collect(),
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}

/// Serializes everything needed to resume. Scorer caches are not part of
/// the state and are rebuilt on demand.
pub fn snapshot(state: &OptimizationState) -> String {
    serde_json::to_string_pretty(state).expect("state serializes")
}

pub fn restore(document: &str) -> Result<OptimizationState, OrchestratorError> {
    let value: serde_json::Value =
        serde_json::from_str(document).map_err(|e| OrchestratorError::SchemaMismatch(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SNAPSHOT_VERSION) => {}
        Some(v) => {
            return Err(OrchestratorError::SchemaMismatch(format!(
                "document version {v}, expected {SNAPSHOT_VERSION}"
            )))
        }
        None => return Err(OrchestratorError::SchemaMismatch("missing schema_version".into())),
    }
    let state: OptimizationState =
        serde_json::from_value(value).map_err(|e| OrchestratorError::SchemaMismatch(e.to_string()))?;
    state.agent_graph().map_err(|e| OrchestratorError::SchemaMismatch(e.to_string()))?;
    for (id, pool) in &state.pools {
        if pool.agent() != id || pool.len() != state.k {
            return Err(OrchestratorError::SchemaMismatch(format!("pool for `{id}` is inconsistent")));
        }
    }
    if state.history.len() != state.iteration || state.trajectory.len() != state.iteration {
        return Err(OrchestratorError::SchemaMismatch("history length does not match iteration".into()));
    }
    Ok(state)
}
