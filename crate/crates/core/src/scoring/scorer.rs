use std::sync::Arc;

use async_trait::async_trait;
use dashmap::DashMap;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{ExpectedIO, PreferencePool, Score, ScoreMatrix, ScoringError};
use crate::topology::{AgentId, PromptPool};

/// Inputs for scoring every candidate of one agent.
#[derive(Debug, Clone, Serialize)]
pub struct NodeScoreRequest {
    pub agent: AgentId,
    pub role: String,
    pub candidates: Vec<String>,
    pub io: ExpectedIO,
    pub demos: PreferencePool,
}

/// Inputs for one row of an edge matrix: the message produced by upstream
/// candidate `upstream_index` scored against every downstream candidate.
#[derive(Debug, Clone, Serialize)]
pub struct EdgeScoreRequest {
    pub from: AgentId,
    pub to: AgentId,
    /// 1-based upstream candidate index the message was produced under.
    pub upstream_index: usize,
    pub upstream_output: String,
    pub downstream_role: String,
    pub candidates: Vec<String>,
    pub demos: PreferencePool,
}

#[async_trait]
pub trait RewardScorer: Send + Sync {
    /// Stable identifier, part of the cache key.
    fn id(&self) -> String;

    /// One score per candidate, in candidate order.
    async fn score_node(&self, req: &NodeScoreRequest) -> Result<Vec<Score>, ScoringError>;

    /// One score per downstream candidate, in candidate order.
    async fn score_edge_row(&self, req: &EdgeScoreRequest) -> Result<Vec<Score>, ScoringError>;
}

#[async_trait]
impl<T: RewardScorer + ?Sized> RewardScorer for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    async fn score_node(&self, req: &NodeScoreRequest) -> Result<Vec<Score>, ScoringError> {
        (**self).score_node(req).await
    }
    async fn score_edge_row(&self, req: &EdgeScoreRequest) -> Result<Vec<Score>, ScoringError> {
        (**self).score_edge_row(req).await
    }
}

fn check_len(scores: &[Score], expected: usize) -> Result<(), ScoringError> {
    if scores.len() != expected {
        return Err(ScoringError::MalformedReply(format!(
            "scorer returned {} scores for {expected} candidates",
            scores.len()
        )));
    }
    Ok(())
}

/// Scores every candidate of `pool` for its agent.
pub async fn score_nodes(
    scorer: &dyn RewardScorer,
    role: &str,
    pool: &PromptPool,
    io: &ExpectedIO,
    demos: &PreferencePool,
) -> Result<Vec<Score>, ScoringError> {
    if pool.is_empty() {
        return Err(ScoringError::EmptyPool(pool.agent().clone()));
    }
    let req = NodeScoreRequest {
        agent: pool.agent().clone(),
        role: role.to_string(),
        candidates: pool.texts(),
        io: io.clone(),
        demos: demos.clone(),
    };
    let scores = scorer.score_node(&req).await?;
    check_len(&scores, pool.len())?;
    Ok(scores)
}

/// Builds the `K_i x K_j` matrix for edge `from -> to`. Rows are scored
/// concurrently.
pub async fn score_edges(
    scorer: &dyn RewardScorer,
    edge: (&AgentId, &AgentId),
    upstream_outputs: &[String],
    downstream_role: &str,
    downstream_pool: &PromptPool,
    demos: &PreferencePool,
) -> Result<ScoreMatrix, ScoringError> {
    let (from, to) = edge;
    if upstream_outputs.is_empty() {
        return Err(ScoringError::EmptyPool(from.clone()));
    }
    if downstream_pool.is_empty() {
        return Err(ScoringError::EmptyPool(to.clone()));
    }
    let candidates = downstream_pool.texts();
    let requests: Vec<EdgeScoreRequest> = upstream_outputs
        .iter()
        .enumerate()
        .map(|(k, out)| EdgeScoreRequest {
            from: from.clone(),
            to: to.clone(),
            upstream_index: k + 1,
            upstream_output: out.clone(),
            downstream_role: downstream_role.to_string(),
            candidates: candidates.clone(),
            demos: demos.clone(),
        })
        .collect();
    let rows =
        futures::future::try_join_all(requests.iter().map(|r| scorer.score_edge_row(r))).await?;
    for row in &rows {
        check_len(row, candidates.len())?;
    }
    ScoreMatrix::from_rows(rows)
}

/// Memoizes another scorer by a hash of the full request payload, so any
/// change in pools, demonstrations or expected IO misses the cache.
pub struct CachedScorer<S> {
    inner: S,
    cache: DashMap<String, Vec<Score>>,
}

impl<S: RewardScorer> CachedScorer<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, cache: DashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    fn key(&self, kind: &str, payload: &impl Serialize) -> String {
        let mut h = Sha256::new();
        h.update(self.inner.id().as_bytes());
        h.update([0]);
        h.update(kind.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(payload).expect("requests serialize"));
        hex::encode(h.finalize())
    }
}

#[async_trait]
impl<S: RewardScorer> RewardScorer for CachedScorer<S> {
    fn id(&self) -> String {
        self.inner.id()
    }

    async fn score_node(&self, req: &NodeScoreRequest) -> Result<Vec<Score>, ScoringError> {
        let key = self.key("node", req);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let scores = self.inner.score_node(req).await?;
        self.cache.insert(key, scores.clone());
        Ok(scores)
    }

    async fn score_edge_row(&self, req: &EdgeScoreRequest) -> Result<Vec<Score>, ScoringError> {
        let key = self.key("edge", req);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let scores = self.inner.score_edge_row(req).await?;
        self.cache.insert(key, scores.clone());
        Ok(scores)
    }
}
