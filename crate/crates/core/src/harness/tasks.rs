use std::collections::BTreeSet;
use std::path::Path;
use std::process::Stdio;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::AsyncWriteExt;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error("cannot read task file: {0}")]
    Io(String),
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate task id `{id}` on line {line}")]
    DuplicateTaskId { id: String, line: usize },
    #[error("task batch is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Verifier {
    Exact(String),
    Contains(String),
    /// The candidate output is written to the checker's stdin; exit code 0
    /// means pass.
    Command { program: String, #[serde(default)] args: Vec<String> },
}

impl Verifier {
    /// `Ok(())` on pass, otherwise a description of the mismatch.
    pub async fn check(&self, output: &str) -> Result<(), String> {
        match self {
            Verifier::Exact(expected) => {
                if output.trim() == expected.trim() {
                    Ok(())
                } else {
                    Err(format!("expected exactly {expected:?}"))
                }
            }
            Verifier::Contains(needle) => {
                if output.contains(needle.as_str()) {
                    Ok(())
                } else {
                    Err(format!("output does not contain {needle:?}"))
                }
            }
            Verifier::Command { program, args } => {
                let mut child = tokio::process::Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::piped())
                    .spawn()
                    .map_err(|e| format!("cannot start checker `{program}`: {e}"))?;
                if let Some(mut stdin) = child.stdin.take() {
                    stdin.write_all(output.as_bytes()).await.map_err(|e| e.to_string())?;
                }
                let out = child.wait_with_output().await.map_err(|e| e.to_string())?;
                if out.status.success() {
                    Ok(())
                } else {
                    let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
                    Err(format!("checker exited with {}: {stderr}", out.status))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: String,
    pub input: String,
    pub verifier: Verifier,
}

/// Non-empty, unique ids. Iteration order is ascending id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Task>", into = "Vec<Task>")]
pub struct TaskBatch {
    tasks: Vec<Task>,
}

impl TaskBatch {
    pub fn new(mut tasks: Vec<Task>) -> Result<Self, TaskError> {
        if tasks.is_empty() {
            return Err(TaskError::Empty);
        }
        let mut seen = BTreeSet::new();
        for (i, t) in tasks.iter().enumerate() {
            if !seen.insert(t.id.clone()) {
                return Err(TaskError::DuplicateTaskId { id: t.id.clone(), line: i + 1 });
            }
        }
        tasks.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { tasks })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

impl TryFrom<Vec<Task>> for TaskBatch {
    type Error = TaskError;
    fn try_from(tasks: Vec<Task>) -> Result<Self, TaskError> {
        Self::new(tasks)
    }
}

impl From<TaskBatch> for Vec<Task> {
    fn from(b: TaskBatch) -> Self {
        b.tasks
    }
}

/// One JSON task per line; blank lines are skipped. Any bad line rejects the
/// whole batch.
pub fn parse_tasks(text: &str) -> Result<TaskBatch, TaskError> {
    let mut tasks = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(line)
            .map_err(|e| TaskError::MalformedRecord { line: i + 1, message: e.to_string() })?;
        if task.id.trim().is_empty() {
            return Err(TaskError::MalformedRecord { line: i + 1, message: "empty task id".into() });
        }
        if !seen.insert(task.id.clone()) {
            return Err(TaskError::DuplicateTaskId { id: task.id, line: i + 1 });
        }
        tasks.push(task);
    }
    TaskBatch::new(tasks)
}

pub fn ingest_tasks(path: &Path) -> Result<TaskBatch, TaskError> {
    let text = std::fs::read_to_string(path).map_err(|e| TaskError::Io(format!("{}: {e}", path.display())))?;
    parse_tasks(&text)
}
