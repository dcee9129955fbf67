use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AgentId;
use crate::refinement::MutationAction;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoolError {
    #[error("pool for `{0}` would be empty")]
    Empty(AgentId),
    #[error("pool for `{agent}` holds {len} candidates but capacity is {capacity}")]
    Overflow { agent: AgentId, len: usize, capacity: usize },
    #[error("candidate {index} of `{agent}` has empty text")]
    EmptyText { agent: AgentId, index: usize },
    #[error("pool capacity must be positive")]
    ZeroCapacity,
}

/// Where a mutated candidate came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    /// Index of the parent in the previous generation's pool.
    pub parent_index: usize,
    pub parent_text: String,
    pub action: MutationAction,
    /// Iteration that produced this candidate.
    pub generation: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub agent: AgentId,
    /// 1-based position `k` within the pool.
    pub index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
}

/// Per-agent candidate set. Always `1 <= len <= capacity`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPool {
    agent: AgentId,
    capacity: usize,
    candidates: Vec<PromptCandidate>,
}

impl PromptPool {
    /// Builds a pool, numbering candidates `1..=len` in the given order.
    pub fn new(
        agent: AgentId,
        capacity: usize,
        entries: impl IntoIterator<Item = (String, Option<Lineage>)>,
    ) -> Result<Self, PoolError> {
        if capacity == 0 {
            return Err(PoolError::ZeroCapacity);
        }
        let candidates: Vec<PromptCandidate> = entries
            .into_iter()
            .enumerate()
            .map(|(i, (text, lineage))| PromptCandidate {
                agent: agent.clone(),
                index: i + 1,
                text,
                lineage,
            })
            .collect();
        if candidates.is_empty() {
            return Err(PoolError::Empty(agent));
        }
        if candidates.len() > capacity {
            return Err(PoolError::Overflow { agent, len: candidates.len(), capacity });
        }
        if let Some(c) = candidates.iter().find(|c| c.text.trim().is_empty()) {
            return Err(PoolError::EmptyText { agent, index: c.index });
        }
        Ok(Self { agent, capacity, candidates })
    }

    pub fn from_texts<S: Into<String>>(
        agent: AgentId,
        capacity: usize,
        texts: impl IntoIterator<Item = S>,
    ) -> Result<Self, PoolError> {
        Self::new(agent, capacity, texts.into_iter().map(|t| (t.into(), None)))
    }

    pub fn agent(&self) -> &AgentId {
        &self.agent
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[PromptCandidate] {
        &self.candidates
    }

    /// Candidate by 1-based index.
    pub fn get(&self, index: usize) -> Option<&PromptCandidate> {
        index.checked_sub(1).and_then(|i| self.candidates.get(i))
    }

    pub fn texts(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.text.clone()).collect()
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.candidates.iter().any(|c| c.text == text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::aid;

    #[test]
    fn numbering_and_bounds() {
        let p = PromptPool::from_texts(aid("a"), 3, ["x", "y"]).unwrap();
        assert_eq!(p.get(1).unwrap().text, "x");
        assert_eq!(p.get(2).unwrap().index, 2);
        assert!(p.get(0).is_none());
        assert!(p.get(3).is_none());
        assert!(matches!(
            PromptPool::from_texts(aid("a"), 1, ["x", "y"]),
            Err(PoolError::Overflow { .. })
        ));
        assert!(matches!(
            PromptPool::from_texts(aid("a"), 2, Vec::<String>::new()),
            Err(PoolError::Empty(_))
        ));
        assert!(matches!(
            PromptPool::from_texts(aid("a"), 2, ["ok", "  "]),
            Err(PoolError::EmptyText { index: 2, .. })
        ));
    }
}
