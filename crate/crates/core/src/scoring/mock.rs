//! Offline reward scorer.
//!
//! Node scores average two similarities to a hidden per-agent target prompt:
//! Jaccard overlap of word sets and the longest common subsequence of
//! sentences relative to the longer sentence list (1.0 when no target is
//! configured). Only the target itself scores 1. Edge scores are 1 when the upstream output contains every
//! `<token>` placeholder named by the downstream candidate and 0 otherwise.

use std::collections::{BTreeMap, BTreeSet};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EdgeScoreRequest, NodeScoreRequest, RewardScorer, Score, ScoringError};
use crate::refinement::sentences;
use crate::topology::AgentId;

/// Lowercased alphanumeric words.
pub fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Longest common subsequence of two sentence lists over the longer length.
pub fn sentence_order_similarity(a: &[String], b: &[String]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..a.len() {
        for j in 0..b.len() {
            dp[i + 1][j + 1] = if a[i] == b[j] { dp[i][j] + 1 } else { dp[i][j + 1].max(dp[i + 1][j]) };
        }
    }
    dp[a.len()][b.len()] as f64 / longest as f64
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Tokens a downstream prompt declares as required input, written `<token>`.
pub fn required_tokens(prompt: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = prompt;
    while let Some(start) = rest.find('<') {
        let after = &rest[start + 1..];
        match after.find('>') {
            Some(end) => {
                out.extend(words(&after[..end]));
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScorer {
    /// Hidden target prompt per agent.
    #[serde(default)]
    pub targets: BTreeMap<AgentId, String>,
    #[serde(default)]
    pub seed: u64,
    /// Amplitude of seeded pseudo-random perturbation added to node scores.
    #[serde(default)]
    pub jitter: f64,
}

impl MockScorer {
    pub fn with_targets(targets: BTreeMap<AgentId, String>) -> Self {
        Self { targets, seed: 0, jitter: 0.0 }
    }

    fn noise(&self, agent: &AgentId, text: &str) -> f64 {
        if self.jitter == 0.0 {
            return 0.0;
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(agent.as_str().as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        let d = h.finalize();
        let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        (x as f64 / u64::MAX as f64 - 0.5) * self.jitter
    }

    pub fn node_score(&self, agent: &AgentId, candidate: &str) -> f64 {
        let base = match self.targets.get(agent) {
            Some(target) => {
                let order = sentence_order_similarity(&sentences(candidate), &sentences(target));
                0.5 * jaccard(&words(candidate), &words(target)) + 0.5 * order
            }
            None => 1.0,
        };
        (base + self.noise(agent, candidate)).clamp(0.0, 1.0)
    }

    pub fn edge_score(upstream_output: &str, downstream_prompt: &str) -> f64 {
        let have = words(upstream_output);
        if required_tokens(downstream_prompt).is_subset(&have) {
            1.0
        } else {
            0.0
        }
    }
}

#[async_trait]
impl RewardScorer for MockScorer {
    fn id(&self) -> String {
        format!("mock-{}-{}", self.seed, self.jitter)
    }

    async fn score_node(&self, req: &NodeScoreRequest) -> Result<Vec<Score>, ScoringError> {
        if req.candidates.is_empty() {
            return Err(ScoringError::EmptyPool(req.agent.clone()));
        }
        req.candidates.iter().map(|c| Score::new(self.node_score(&req.agent, c))).collect()
    }

    async fn score_edge_row(&self, req: &EdgeScoreRequest) -> Result<Vec<Score>, ScoringError> {
        if req.candidates.is_empty() {
            return Err(ScoringError::EmptyPool(req.to.clone()));
        }
        req.candidates
            .iter()
            .map(|c| Score::new(Self::edge_score(&req.upstream_output, c)))
            .collect()
    }
}
