use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::executor::MockRule;
use crate::topology::AgentId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    ParseError(String),
    #[error("invalid `{field}`: {message}")]
    ValidationError { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::ValidationError { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Mock,
    Llm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    #[default]
    Mock,
    Command,
    Llm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    #[default]
    Mock,
    Llm,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_concurrency() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_key_env() -> String {
    "MAPRO_API_KEY".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Extra attempts after the first on 429 / 5xx.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            timeout_secs: default_timeout(),
            max_concurrency: default_concurrency(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            api_key_env: default_key_env(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSettings {
    /// Hidden target prompt per agent for the mock reward scorer.
    #[serde(default)]
    pub targets: BTreeMap<AgentId, String>,
    /// Pass conditions for the mock executor.
    #[serde(default)]
    pub rules: BTreeMap<AgentId, MockRule>,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default = "default_threshold")]
    pub accept_threshold: f64,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self { targets: BTreeMap::new(), rules: BTreeMap::new(), jitter: 0.0, accept_threshold: default_threshold() }
    }
}

fn default_k() -> usize {
    5
}
fn default_patience() -> usize {
    3
}
fn default_max_iterations() -> usize {
    10
}

/// Everything about a run except file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scorer: ScorerKind,
    #[serde(default)]
    pub executor: ExecutorKind,
    #[serde(default)]
    pub judge: JudgeKind,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    #[serde(default)]
    pub command: Option<CommandSpec>,
    #[serde(default)]
    pub mock: MockSettings,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            k: default_k(),
            patience: default_patience(),
            epsilon: 0.0,
            max_iterations: default_max_iterations(),
            seed: 0,
            scorer: ScorerKind::Mock,
            executor: ExecutorKind::Mock,
            judge: JudgeKind::Mock,
            endpoint: None,
            command: None,
            mock: MockSettings::default(),
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 2 {
            return Err(invalid("k", "pool size must be at least 2"));
        }
        if self.patience < 1 {
            return Err(invalid("patience", "must be at least 1"));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(invalid("epsilon", "must be a finite non-negative number"));
        }
        if self.max_iterations < 1 {
            return Err(invalid("max_iterations", "must be at least 1"));
        }
        let needs_llm = self.scorer == ScorerKind::Llm
            || self.executor == ExecutorKind::Llm
            || self.judge == JudgeKind::Llm;
        match &self.endpoint {
            None if needs_llm => return Err(invalid("endpoint", "required when any component is `llm`")),
            Some(e) => {
                if e.base_url.trim().is_empty() {
                    return Err(invalid("endpoint.base_url", "must not be empty"));
                }
                if e.model.trim().is_empty() {
                    return Err(invalid("endpoint.model", "must not be empty"));
                }
                if !(e.timeout_secs > 0.0) {
                    return Err(invalid("endpoint.timeout_secs", "must be positive"));
                }
            }
            None => {}
        }
        if self.executor == ExecutorKind::Command && self.command.is_none() {
            return Err(invalid("command", "required when executor is `command`"));
        }
        if !(0.0..=1.0).contains(&self.mock.accept_threshold) {
            return Err(invalid("mock.accept_threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub graph: PathBuf,
    pub tasks: PathBuf,
    pub output_dir: PathBuf,
    pub settings: RunSettings,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    graph: PathBuf,
    tasks: PathBuf,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_patience")]
    patience: usize,
    #[serde(default)]
    epsilon: f64,
    #[serde(default = "default_max_iterations")]
    max_iterations: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    scorer: ScorerKind,
    #[serde(default)]
    executor: ExecutorKind,
    #[serde(default)]
    judge: JudgeKind,
    #[serde(default)]
    endpoint: Option<EndpointConfig>,
    #[serde(default)]
    command: Option<CommandSpec>,
    #[serde(default)]
    mock: MockSettings,
}

/// Parses a JSON config. Relative paths resolve against the config file's
/// directory. API keys are never read from the file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::ParseError(format!("{}: {e}", path.display())))?;
    let raw: RawConfig = serde_json::from_str(&text).map_err(|e| ConfigError::ParseError(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let config = RunConfig {
        graph: resolve(raw.graph),
        tasks: resolve(raw.tasks),
        output_dir: resolve(raw.output_dir.unwrap_or_else(|| PathBuf::from("mapro-out"))),
        settings: RunSettings {
            k: raw.k,
            patience: raw.patience,
            epsilon: raw.epsilon,
            max_iterations: raw.max_iterations,
            seed: raw.seed,
            scorer: raw.scorer,
            executor: raw.executor,
            judge: raw.judge,
            endpoint: raw.endpoint,
            command: raw.command,
            mock: raw.mock,
        },
    };
    if !config.graph.is_file() {
        return Err(invalid("graph", format!("{} does not exist", config.graph.display())));
    }
    if !config.tasks.is_file() {
        return Err(invalid("tasks", format!("{} does not exist", config.tasks.display())));
    }
    config.settings.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("graph.json"), "{}").unwrap();
        std::fs::write(dir.path().join("tasks.jsonl"), "").unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, body).unwrap();
        (dir, p)
    }

    #[test]
    fn defaults() {
        let (_d, p) = setup(r#"{"graph":"graph.json","tasks":"tasks.jsonl"}"#);
        let c = load_config(&p).unwrap();
        assert_eq!(c.settings.k, 5);
        assert_eq!(c.settings.patience, 3);
        assert_eq!(c.settings.max_iterations, 10);
        assert!(c.graph.is_absolute() || c.graph.starts_with(p.parent().unwrap()));
    }

    #[test]
    fn validation_errors() {
        let (_d, p) = setup(r#"{"graph":"graph.json","tasks":"tasks.jsonl","k":1}"#);
        assert!(matches!(load_config(&p), Err(ConfigError::ValidationError { field, .. }) if field == "k"));
        let (_d, p) = setup(r#"{"graph":"graph.json","tasks":"missing.jsonl"}"#);
        assert!(matches!(load_config(&p), Err(ConfigError::ValidationError { field, .. }) if field == "tasks"));
        let (_d, p) = setup(r#"{"graph":"graph.json","tasks":"tasks.jsonl","scorer":"llm"}"#);
        assert!(matches!(load_config(&p), Err(ConfigError::ValidationError { field, .. }) if field == "endpoint"));
        let (_d, p) = setup(r#"{"graph":"graph.json","tasks":"tasks.jsonl","api_key":"sk-1"}"#);
        assert!(matches!(load_config(&p), Err(ConfigError::ParseError(_))));
    }
}
