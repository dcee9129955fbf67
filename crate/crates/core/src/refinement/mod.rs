//! Preference-guided policy update: demonstration refresh, multi-level
//! feedback, constrained mutation and the stopping rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{AgentId, PoolError};

mod judge;
pub mod mock;
mod ops;
pub mod parse;
mod text;

pub use judge::{
    CritiqueRequest, LanguageJudge, LocalFeedbackReply, LocalFeedbackRequest, MutationRequest,
    Preference,
};
pub use mock::MockJudge;
pub use ops::{
    collect_global_feedback, collect_local_feedback, mutate_pool, update_demos, update_preferences,
    DemoCandidate,
};
pub use text::{infer_action, join_sentences, sentences};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefinementError {
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("malformed judge reply: {0}")]
    MalformedReply(String),
    #[error("mutator returned {got} variants, expected {expected}")]
    VariantCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("invalid termination policy: {0}")]
    InvalidPolicy(String),
    #[error("{0}")]
    Precondition(String),
}

/// The four permitted small edits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationAction {
    AddSentence,
    ReplaceSentence,
    Reorganize,
    DeleteSentence,
}

impl MutationAction {
    pub fn label(self) -> &'static str {
        match self {
            MutationAction::AddSentence => "Adding",
            MutationAction::ReplaceSentence => "Replacement",
            MutationAction::Reorganize => "Reorganization",
            MutationAction::DeleteSentence => "Deletion",
        }
    }
}

pub const GLOBAL_FEEDBACK_LIMIT: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalFeedback {
    items: Vec<String>,
}

impl GlobalFeedback {
    /// Keeps the first [`GLOBAL_FEEDBACK_LIMIT`] non-empty items.
    pub fn new(items: impl IntoIterator<Item = String>) -> Self {
        Self {
            items: items
                .into_iter()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .take(GLOBAL_FEEDBACK_LIMIT)
                .collect(),
        }
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blame {
    /// The downstream agent that issued it.
    pub from: AgentId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalFeedback {
    pub agent: AgentId,
    pub blames: Vec<Blame>,
    pub fixes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationPolicy {
    pub patience: usize,
    pub epsilon: f64,
}

impl Default for TerminationPolicy {
    fn default() -> Self {
        Self { patience: 3, epsilon: 0.0 }
    }
}

impl TerminationPolicy {
    pub fn new(patience: usize, epsilon: f64) -> Result<Self, RefinementError> {
        let p = Self { patience, epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), RefinementError> {
        if self.patience == 0 {
            return Err(RefinementError::InvalidPolicy("patience must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(RefinementError::InvalidPolicy("epsilon must be a finite non-negative number".into()));
        }
        Ok(())
    }
}

/// Slack for float error in pass-rate differences such as `0.51 - 0.50`.
pub const DELTA_TOLERANCE: f64 = 1e-12;

/// `history` holds `S(0..=t)`. Fires once `T` deltas exist and none of the
/// last `T` exceeds epsilon.
pub fn should_terminate(history: &[f64], policy: &TerminationPolicy) -> bool {
    let t = history.len().saturating_sub(1);
    if policy.patience == 0 || t < policy.patience {
        return false;
    }
    history[history.len() - policy.patience - 1..]
        .windows(2)
        .map(|w| w[1] - w[0])
        .all(|d| d <= policy.epsilon + DELTA_TOLERANCE)
}
