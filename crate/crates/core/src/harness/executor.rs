use std::collections::BTreeMap;
use std::process::Stdio;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::AsyncWriteExt;

use super::gateway::GatewayError;
use super::tasks::Task;
use crate::inference::Assignment;
use crate::refinement::mock::{failure_line, parse_failure_line, DROP_PREFIX, ORDER_HINT};
use crate::refinement::sentences;
use crate::topology::{AgentGraph, AgentId, PromptPool};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecutorError {
    #[error("agent execution failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallMode {
    /// Part of a full task run.
    Execute,
    /// Single-agent run on a recorded input, used to gather outputs for
    /// reward scoring.
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentCall {
    pub agent: AgentId,
    pub role: String,
    pub prompt: String,
    pub input: String,
    pub task: Option<String>,
    pub mode: CallMode,
}

#[async_trait]
pub trait Executor: Send + Sync {
    fn id(&self) -> String;
    async fn run_agent(&self, call: &AgentCall) -> Result<String, ExecutorError>;
}

#[async_trait]
impl<T: Executor + ?Sized> Executor for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    async fn run_agent(&self, call: &AgentCall) -> Result<String, ExecutorError> {
        (**self).run_agent(call).await
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub agent: AgentId,
    pub prompt: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub task_id: String,
    pub passed: bool,
    /// Executor failure, if any agent could not run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Verifier rejection: the offending sink output and the reason.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch: Option<Mismatch>,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub output: String,
    pub reason: String,
}

impl Verdict {
    /// Text handed to global feedback for a failed task.
    pub fn error_text(&self) -> Option<String> {
        if self.passed {
            return None;
        }
        self.error.clone().or_else(|| self.mismatch.as_ref().map(|m| m.output.clone()))
    }
}

/// Upstream outputs in ascending producer id, each block headed by the
/// producer's id.
pub fn assemble_input(graph: &AgentGraph, agent: &AgentId, task: &Task, outputs: &BTreeMap<AgentId, String>) -> String {
    let parents = graph.parents(agent);
    if parents.is_empty() {
        return task.input.clone();
    }
    parents
        .iter()
        .map(|p| format!("[{p}]\n{}", outputs.get(*p).map(String::as_str).unwrap_or("")))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Runs every agent in topological order under `assignment` and verifies
/// each sink's output. Executor errors become failed verdicts.
pub async fn execute_assignment(
    executor: &dyn Executor,
    graph: &AgentGraph,
    assignment: &Assignment,
    pools: &BTreeMap<AgentId, PromptPool>,
    task: &Task,
) -> Verdict {
    let mut verdict = Verdict {
        task_id: task.id.clone(),
        passed: false,
        error: None,
        mismatch: None,
        transcript: Vec::new(),
    };
    let order = match graph.topological_order() {
        Ok(o) => o,
        Err(e) => {
            verdict.error = Some(e.to_string());
            return verdict;
        }
    };
    let mut outputs = BTreeMap::new();
    for agent in &order {
        let prompt = assignment
            .choice(agent)
            .and_then(|k| pools.get(agent).and_then(|p| p.get(k)))
            .map(|c| c.text.clone());
        let Some(prompt) = prompt else {
            verdict.error = Some(format!("no selected prompt for `{agent}`"));
            return verdict;
        };
        let input = assemble_input(graph, agent, task, &outputs);
        let call = AgentCall {
            agent: agent.clone(),
            role: graph.agent(agent).map(|a| a.role.clone()).unwrap_or_default(),
            prompt: prompt.clone(),
            input: input.clone(),
            task: Some(task.id.clone()),
            mode: CallMode::Execute,
        };
        match executor.run_agent(&call).await {
            Ok(output) => {
                verdict.transcript.push(TranscriptEntry { agent: agent.clone(), prompt, input, output: output.clone() });
                outputs.insert(agent.clone(), output);
            }
            Err(e) => {
                verdict.error = Some(format!("{agent}: {e}"));
                return verdict;
            }
        }
    }
    let mut reasons = Vec::new();
    let mut failed_outputs = Vec::new();
    for sink in order.iter().filter(|a| graph.children(a).is_empty()) {
        let out = &outputs[sink];
        if let Err(reason) = task.verifier.check(out).await {
            reasons.push(format!("{sink}: {reason}"));
            failed_outputs.push(out.clone());
        }
    }
    if reasons.is_empty() {
        verdict.passed = true;
    } else {
        verdict.mismatch = Some(Mismatch { output: failed_outputs.join("\n"), reason: reasons.join("; ") });
    }
    verdict
}

/// Per-agent pass condition for [`MockExecutor`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MockRule {
    /// The prompt must mention this token.
    Contains(String),
    /// The prompt must equal this text.
    Exact(String),
}

impl MockRule {
    /// The failure description for `prompt`, or `None` if it satisfies the
    /// rule.
    pub fn failure(&self, prompt: &str) -> Option<String> {
        match self {
            MockRule::Contains(token) => (!prompt.contains(token.as_str())).then(|| format!("Mention {token}.")),
            MockRule::Exact(target) => {
                if prompt.trim() == target.trim() {
                    return None;
                }
                let have = sentences(prompt);
                let want = sentences(target);
                if let Some(missing) = want.iter().find(|s| !have.contains(s)) {
                    return Some(missing.clone());
                }
                if let Some(extra) = have.iter().find(|s| !want.contains(s)) {
                    return Some(format!("{DROP_PREFIX}{extra}"));
                }
                Some(ORDER_HINT.into())
            }
        }
    }
}

/// Deterministic offline executor. Each agent forwards the failure lines it
/// received and adds its own when its rule is violated; a clean run prints
/// `PASS`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockExecutor {
    #[serde(default)]
    pub rules: BTreeMap<AgentId, MockRule>,
}

impl MockExecutor {
    pub fn new(rules: BTreeMap<AgentId, MockRule>) -> Self {
        Self { rules }
    }

    pub fn output_for(&self, agent: &AgentId, prompt: &str, input: &str) -> String {
        let mut lines: Vec<String> = Vec::new();
        for l in input.lines().map(str::trim) {
            if parse_failure_line(l).is_some() && !lines.iter().any(|x| x == l) {
                lines.push(l.to_string());
            }
        }
        if let Some(text) = self.rules.get(agent).and_then(|r| r.failure(prompt)) {
            let own = failure_line(agent, &text);
            if !lines.contains(&own) {
                lines.push(own);
            }
        }
        if lines.is_empty() {
            "PASS".to_string()
        } else {
            lines.join("\n")
        }
    }
}

#[async_trait]
impl Executor for MockExecutor {
    fn id(&self) -> String {
        "mock-executor".into()
    }

    async fn run_agent(&self, call: &AgentCall) -> Result<String, ExecutorError> {
        Ok(self.output_for(&call.agent, &call.prompt, &call.input))
    }
}

/// Runs an external program per agent call: input on stdin, output from
/// stdout. The prompt and agent id are passed in `MAPRO_PROMPT` and
/// `MAPRO_AGENT`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandExecutor {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[async_trait]
impl Executor for CommandExecutor {
    fn id(&self) -> String {
        format!("command:{}", self.program)
    }

    async fn run_agent(&self, call: &AgentCall) -> Result<String, ExecutorError> {
        let mode = match call.mode {
            CallMode::Execute => "execute",
            CallMode::Probe => "probe",
        };
        let mut child = tokio::process::Command::new(&self.program)
            .args(&self.args)
            .env("MAPRO_AGENT", call.agent.as_str())
            .env("MAPRO_ROLE", &call.role)
            .env("MAPRO_PROMPT", &call.prompt)
            .env("MAPRO_MODE", mode)
            .env("MAPRO_TASK", call.task.as_deref().unwrap_or(""))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| ExecutorError::Failed(format!("cannot start `{}`: {e}", self.program)))?;
        if let Some(mut stdin) = child.stdin.take() {
            stdin
                .write_all(call.input.as_bytes())
                .await
                .map_err(|e| ExecutorError::Failed(e.to_string()))?;
        }
        let out = child.wait_with_output().await.map_err(|e| ExecutorError::Failed(e.to_string()))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
            return Err(ExecutorError::Failed(format!("exit {}: {stderr}", out.status)));
        }
        Ok(String::from_utf8_lossy(&out.stdout).trim_end().to_string())
    }
}
