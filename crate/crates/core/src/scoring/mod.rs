//! Node and edge score tables, the joint quality score, and the reward
//! scorer contract.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{AgentGraph, AgentId};

mod demos;
pub mod mock;
mod parse;
mod scorer;

pub use demos::{DemoKey, Exemplar, ExpectedIO, PreferencePool, DEMO_CAPACITY};
pub use parse::{parse_score_lines, parse_two_decimal_scores};
pub use scorer::{
    score_edges, score_nodes, CachedScorer, EdgeScoreRequest, NodeScoreRequest, RewardScorer,
};

/// Lower bound applied before taking logarithms.
pub const SCORE_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("missing score: {0}")]
    MissingScore(String),
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("empty candidate pool for `{0}`")]
    EmptyPool(AgentId),
    #[error("expected {expected} upstream outputs, got {got}")]
    UpstreamMismatch { expected: usize, got: usize },
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("table shape mismatch: {0}")]
    Shape(String),
}

/// A quality score in `[0, 1]`, carried together with its floored logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score {
    value: f64,
    log: f64,
}

impl Score {
    pub fn new(value: f64) -> Result<Self, ScoringError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(ScoringError::OutOfRange(value));
        }
        Ok(Self { value, log: value.max(SCORE_FLOOR).ln() })
    }

    pub const ONE: Score = Score { value: 1.0, log: 0.0 };

    pub fn value(self) -> f64 {
        self.value
    }

    /// `ln(max(value, SCORE_FLOOR))`
    pub fn ln(self) -> f64 {
        self.log
    }

    /// Rebuilds a score from a log-domain total, clamping into range.
    pub fn from_ln(log: f64) -> Self {
        let value = log.exp().clamp(0.0, 1.0);
        Self { value, log }
    }
}

impl TryFrom<f64> for Score {
    type Error = ScoringError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Score::new(value)
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.value
    }
}

/// Row-major `rows x cols` matrix; row = upstream candidate, column =
/// downstream candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Score>>", into = "Vec<Vec<Score>>")]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Score>,
}

impl ScoreMatrix {
    pub fn from_rows(rows: Vec<Vec<Score>>) -> Result<Self, ScoringError> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(ScoringError::Shape("edge score rows must be non-empty and equal length".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.into_iter().flatten().collect() })
    }

    pub fn from_values(rows: &[Vec<f64>]) -> Result<Self, ScoringError> {
        let rows = rows
            .iter()
            .map(|r| r.iter().map(|v| Score::new(*v)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// 0-based positions.
    pub fn get(&self, row: usize, col: usize) -> Option<Score> {
        (row < self.rows && col < self.cols).then(|| self.data[row * self.cols + col])
    }

    pub fn to_values(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(|r| r.iter().map(|s| s.value()).collect()).collect()
    }
}

impl TryFrom<Vec<Vec<Score>>> for ScoreMatrix {
    type Error = ScoringError;
    fn try_from(rows: Vec<Vec<Score>>) -> Result<Self, Self::Error> {
        Self::from_rows(rows)
    }
}

impl From<ScoreMatrix> for Vec<Vec<Score>> {
    fn from(m: ScoreMatrix) -> Self {
        m.data.chunks(m.cols).map(<[Score]>::to_vec).collect()
    }
}

/// `g(p_i^k)` for every agent and candidate position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeScoreTable {
    entries: BTreeMap<AgentId, Vec<Score>>,
}

impl NodeScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, agent: AgentId, scores: Vec<Score>) {
        self.entries.insert(agent, scores);
    }

    pub fn scores(&self, agent: &AgentId) -> Option<&[Score]> {
        self.entries.get(agent).map(Vec::as_slice)
    }

    /// 0-based candidate position.
    pub fn get(&self, agent: &AgentId, position: usize) -> Option<Score> {
        self.entries.get(agent).and_then(|v| v.get(position)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AgentId, &Vec<Score>)> {
        self.entries.iter()
    }
}

/// `g(p_i^k, p_j^l)` for every edge.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<EdgeEntry>", into = "Vec<EdgeEntry>")]
pub struct EdgeScoreTable {
    entries: BTreeMap<(AgentId, AgentId), ScoreMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub from: AgentId,
    pub to: AgentId,
    pub scores: ScoreMatrix,
}

impl EdgeScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, from: AgentId, to: AgentId, matrix: ScoreMatrix) {
        self.entries.insert((from, to), matrix);
    }

    pub fn matrix(&self, from: &AgentId, to: &AgentId) -> Option<&ScoreMatrix> {
        self.entries.get(&(from.clone(), to.clone()))
    }

    pub fn get(&self, from: &AgentId, to: &AgentId, row: usize, col: usize) -> Option<Score> {
        self.matrix(from, to).and_then(|m| m.get(row, col))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(AgentId, AgentId), &ScoreMatrix)> {
        self.entries.iter()
    }
}

impl TryFrom<Vec<EdgeEntry>> for EdgeScoreTable {
    type Error = ScoringError;
    fn try_from(v: Vec<EdgeEntry>) -> Result<Self, Self::Error> {
        let mut t = EdgeScoreTable::new();
        for e in v {
            if t.matrix(&e.from, &e.to).is_some() {
                return Err(ScoringError::Shape(format!("duplicate edge {} -> {}", e.from, e.to)));
            }
            t.insert(e.from, e.to, e.scores);
        }
        Ok(t)
    }
}

impl From<EdgeScoreTable> for Vec<EdgeEntry> {
    fn from(t: EdgeScoreTable) -> Self {
        t.entries.into_iter().map(|((from, to), scores)| EdgeEntry { from, to, scores }).collect()
    }
}

/// Both tables together; this is the document accepted by `mapro solve`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreTables {
    pub nodes: NodeScoreTable,
    #[serde(default)]
    pub edges: EdgeScoreTable,
}

impl ScoreTables {
    /// Checks every agent has `sizes[agent]` node scores and every graph edge
    /// a full matrix.
    pub fn check_complete(
        &self,
        graph: &AgentGraph,
        sizes: &BTreeMap<AgentId, usize>,
    ) -> Result<(), ScoringError> {
        for id in graph.agent_ids() {
            let k = sizes.get(id).copied().unwrap_or(0);
            match self.nodes.scores(id) {
                Some(s) if s.len() == k && k > 0 => {}
                Some(s) => {
                    return Err(ScoringError::MissingScore(format!(
                        "agent `{id}` has {} node scores, expected {k}",
                        s.len()
                    )))
                }
                None => return Err(ScoringError::MissingScore(format!("agent `{id}` has no node scores"))),
            }
        }
        for (from, to) in graph.edges() {
            let m = self
                .edges
                .matrix(from, to)
                .ok_or_else(|| ScoringError::MissingScore(format!("edge {from} -> {to}")))?;
            if m.rows() != sizes[from] || m.cols() != sizes[to] {
                return Err(ScoringError::MissingScore(format!(
                    "edge {from} -> {to} is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    sizes[from],
                    sizes[to]
                )));
            }
        }
        Ok(())
    }

    /// Candidate counts implied by the node table.
    pub fn domain_sizes(&self) -> BTreeMap<AgentId, usize> {
        self.nodes.iter().map(|(id, s)| (id.clone(), s.len())).collect()
    }
}

/// Sum of the floored logarithms of every factor in the joint quality score.
/// `assignment` maps each agent to a 0-based candidate position.
pub fn joint_log_score(
    assignment: &BTreeMap<AgentId, usize>,
    nodes: &NodeScoreTable,
    edges: &EdgeScoreTable,
    graph: &AgentGraph,
) -> Result<f64, ScoringError> {
    let pick = |id: &AgentId| {
        assignment
            .get(id)
            .copied()
            .ok_or_else(|| ScoringError::MissingScore(format!("assignment has no choice for `{id}`")))
    };
    let mut total = 0.0;
    for id in graph.agent_ids() {
        let k = pick(id)?;
        let s = nodes
            .get(id, k)
            .ok_or_else(|| ScoringError::MissingScore(format!("g({id}[{k}])")))?;
        total += s.ln();
    }
    for (from, to) in graph.edges() {
        let (k, l) = (pick(from)?, pick(to)?);
        let s = edges
            .get(from, to, k, l)
            .ok_or_else(|| ScoringError::MissingScore(format!("g({from}[{k}], {to}[{l}])")))?;
        total += s.ln();
    }
    Ok(total)
}

/// Joint quality score: product of all node and edge scores under the
/// assignment, evaluated in the log domain.
pub fn joint_quality_score(
    assignment: &BTreeMap<AgentId, usize>,
    nodes: &NodeScoreTable,
    edges: &EdgeScoreTable,
    graph: &AgentGraph,
) -> Result<Score, ScoringError> {
    joint_log_score(assignment, nodes, edges, graph).map(Score::from_ln)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::aid;

    fn chain_tables(ga: f64, gb: f64, gab: f64) -> (AgentGraph, NodeScoreTable, EdgeScoreTable) {
        let g = AgentGraph::from_edges(&["a", "b"], &[("a", "b")]).unwrap();
        let mut n = NodeScoreTable::new();
        n.insert(aid("a"), vec![Score::new(ga).unwrap()]);
        n.insert(aid("b"), vec![Score::new(gb).unwrap()]);
        let mut e = EdgeScoreTable::new();
        e.insert(aid("a"), aid("b"), ScoreMatrix::from_values(&[vec![gab]]).unwrap());
        (g, n, e)
    }

    fn zero_assignment() -> BTreeMap<AgentId, usize> {
        [(aid("a"), 0), (aid("b"), 0)].into_iter().collect()
    }

    #[test]
    fn jqs_examples() {
        let (g, n, e) = chain_tables(1.0, 1.0, 1.0);
        assert_eq!(joint_quality_score(&zero_assignment(), &n, &e, &g).unwrap().value(), 1.0);

        let (g, n, e) = chain_tables(0.8, 0.5, 0.9);
        let s = joint_quality_score(&zero_assignment(), &n, &e, &g).unwrap().value();
        assert!((s - 0.36).abs() < 1e-12, "{s}");

        let (g, n, e) = chain_tables(0.0, 0.5, 0.9);
        let s = joint_quality_score(&zero_assignment(), &n, &e, &g).unwrap().value();
        assert!(s <= SCORE_FLOOR * 0.45 * (1.0 + 1e-9), "{s}");
    }

    #[test]
    fn jqs_missing_entries() {
        let (g, n, _) = chain_tables(0.8, 0.5, 0.9);
        let empty = EdgeScoreTable::new();
        assert!(matches!(
            joint_quality_score(&zero_assignment(), &n, &empty, &g),
            Err(ScoringError::MissingScore(_))
        ));
        let (g, n, e) = chain_tables(0.8, 0.5, 0.9);
        let partial: BTreeMap<_, _> = [(aid("a"), 0)].into_iter().collect();
        assert!(joint_quality_score(&partial, &n, &e, &g).is_err());
    }

    #[test]
    fn score_bounds_and_json() {
        assert!(Score::new(1.2).is_err());
        assert!(Score::new(-0.1).is_err());
        assert!(Score::new(f64::NAN).is_err());
        assert_eq!(Score::new(0.0).unwrap().ln(), SCORE_FLOOR.ln());
        let tables: ScoreTables = serde_json::from_str(
            r#"{"nodes":{"a":[0.5,0.25]},"edges":[{"from":"a","to":"b","scores":[[1.0],[0.5]]}]}"#,
        )
        .unwrap();
        assert_eq!(tables.edges.get(&aid("a"), &aid("b"), 1, 0).unwrap().value(), 0.5);
        let back = serde_json::to_string(&tables).unwrap();
        assert_eq!(serde_json::from_str::<ScoreTables>(&back).unwrap(), tables);
        assert!(serde_json::from_str::<ScoreTables>(r#"{"nodes":{"a":[1.5]}}"#).is_err());
        assert!(serde_json::from_str::<ScoreMatrix>("[[0.1],[0.2,0.3]]").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        fn star(values: &[f64]) -> (AgentGraph, NodeScoreTable, EdgeScoreTable) {
            // root r with leaves x, y; values = [r, x, y, rx, ry]
            let g = AgentGraph::from_edges(&["r", "x", "y"], &[("r", "x"), ("r", "y")]).unwrap();
            let mut n = NodeScoreTable::new();
            for (id, v) in ["r", "x", "y"].iter().zip(values) {
                n.insert(aid(id), vec![Score::new(*v).unwrap()]);
            }
            let mut e = EdgeScoreTable::new();
            e.insert(aid("r"), aid("x"), ScoreMatrix::from_values(&[vec![values[3]]]).unwrap());
            e.insert(aid("r"), aid("y"), ScoreMatrix::from_values(&[vec![values[4]]]).unwrap());
            (g, n, e)
        }

        fn zeros() -> BTreeMap<AgentId, usize> {
            ["r", "x", "y"].iter().map(|s| (aid(s), 0)).collect()
        }

        proptest! {
            #[test]
            fn order_invariant(values in proptest::collection::vec(0.0f64..=1.0, 5), seed in any::<u64>()) {
                let (g, n, e) = star(&values);
                let reference = joint_log_score(&zeros(), &n, &e, &g).unwrap();
                let mut logs: Vec<f64> = values.iter().map(|v| v.max(SCORE_FLOOR).ln()).collect();
                logs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let shuffled: f64 = logs.iter().sum();
                let a = reference.exp();
                let b = shuffled.exp();
                prop_assert!((a - b).abs() <= 1e-12 * a.max(b).max(f64::MIN_POSITIVE));
            }

            #[test]
            fn monotone_in_each_factor(
                values in proptest::collection::vec(0.0f64..=1.0, 5),
                which in 0usize..5,
                bump in 0.0f64..=1.0,
            ) {
                let (g, n, e) = star(&values);
                let before = joint_quality_score(&zeros(), &n, &e, &g).unwrap().value();
                let mut raised = values.clone();
                raised[which] = values[which] + (1.0 - values[which]) * bump;
                let (g, n, e) = star(&raised);
                let after = joint_quality_score(&zeros(), &n, &e, &g).unwrap().value();
                prop_assert!(after >= before);
            }
        }
    }
}
