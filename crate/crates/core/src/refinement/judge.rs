use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Blame, GlobalFeedback, RefinementError};
use crate::scoring::{DemoKey, Score};
use crate::topology::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CritiqueRequest {
    pub key: DemoKey,
    pub prompt: String,
    pub response: String,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalFeedbackRequest {
    pub agent: AgentId,
    pub role: String,
    pub prompt: String,
    pub input: String,
    pub output: String,
    pub global: GlobalFeedback,
    /// Blames already issued by this agent's downstream consumers.
    pub blames: Vec<Blame>,
    /// Direct upstream producers, each of which must receive a blame.
    pub upstream: Vec<AgentId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalFeedbackReply {
    pub fixes: Vec<String>,
    /// `(upstream agent, blame text)`.
    pub blames: Vec<(AgentId, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MutationRequest {
    pub agent: AgentId,
    pub prompt: String,
    pub global: Vec<String>,
    pub local: Vec<String>,
    pub n: usize,
}

/// LLM roles used during refinement: critic, feedback author and mutator.
#[async_trait]
pub trait LanguageJudge: Send + Sync {
    fn id(&self) -> String;

    async fn critique(&self, req: &CritiqueRequest) -> Result<Preference, RefinementError>;

    /// Distills execution errors into fix suggestions.
    async fn global_feedback(&self, errors: &[String]) -> Result<Vec<String>, RefinementError>;

    async fn local_feedback(&self, req: &LocalFeedbackRequest) -> Result<LocalFeedbackReply, RefinementError>;

    /// Exactly `req.n` edited variants of `req.prompt`.
    async fn mutate(&self, req: &MutationRequest) -> Result<Vec<String>, RefinementError>;

    /// `n` paraphrases with the same intent.
    async fn vary(&self, prompt: &str, n: usize) -> Result<Vec<String>, RefinementError>;

    /// `n` deliberately degraded prompts.
    async fn negative_variants(&self, good: &[String], n: usize) -> Result<Vec<String>, RefinementError>;
}

#[async_trait]
impl<T: LanguageJudge + ?Sized> LanguageJudge for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    async fn critique(&self, req: &CritiqueRequest) -> Result<Preference, RefinementError> {
        (**self).critique(req).await
    }
    async fn global_feedback(&self, errors: &[String]) -> Result<Vec<String>, RefinementError> {
        (**self).global_feedback(errors).await
    }
    async fn local_feedback(&self, req: &LocalFeedbackRequest) -> Result<LocalFeedbackReply, RefinementError> {
        (**self).local_feedback(req).await
    }
    async fn mutate(&self, req: &MutationRequest) -> Result<Vec<String>, RefinementError> {
        (**self).mutate(req).await
    }
    async fn vary(&self, prompt: &str, n: usize) -> Result<Vec<String>, RefinementError> {
        (**self).vary(prompt, n).await
    }
    async fn negative_variants(&self, good: &[String], n: usize) -> Result<Vec<String>, RefinementError> {
        (**self).negative_variants(good, n).await
    }
}
