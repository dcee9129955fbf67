//! Exact MAP selection over a prompt assignment.
//!
//! Tree-shaped systems are solved with max-product message passing over the
//! agents themselves; anything else is moralized, triangulated (min-fill) and
//! solved on the resulting junction tree. Every solve records a
//! [`SolveTrace`]. [`brute_force_map`] enumerates the full product space and
//! is the reference the solvers are checked against.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{EdgeScoreTable, NodeScoreTable, Score, ScoringError};
use crate::topology::{AgentGraph, AgentId, TopologyError};

mod brute;
mod graphs;
mod junction;
mod trace;
mod tree;

pub use brute::{brute_force_map, BRUTE_FORCE_LIMIT};
pub use graphs::{moralize, triangulate, Triangulation, UndirectedGraph};
pub use junction::{Clique, FactorRef, JunctionTree, Separator, CLIQUE_TABLE_LIMIT};
pub use trace::{message_count, MessageDirection, MessageRecord, SolveMethod, SolveTrace};
pub use tree::solve_tree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("graph skeleton is not a tree")]
    NotATree,
    #[error("search space of {0} assignments exceeds the brute-force limit")]
    TooLarge(f64),
    #[error("clique {{{members}}} needs a table of {size} entries (limit {limit})")]
    CliqueTooLarge { members: String, size: f64, limit: f64 },
    #[error("factor {0} fits no clique")]
    FactorHomeless(String),
    #[error("junction tree violates running intersection for `{0}`")]
    RunningIntersection(AgentId),
}

/// A total prompt assignment and the joint quality score it achieves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// 1-based candidate index per agent.
    pub choices: BTreeMap<AgentId, usize>,
    pub score: Score,
    pub log_score: f64,
}

impl Assignment {
    pub(crate) fn from_positions(model: &FactorModel, positions: &[usize], log_score: f64) -> Self {
        Self {
            choices: model
                .vars
                .iter()
                .zip(positions)
                .map(|(id, p)| (id.clone(), p + 1))
                .collect(),
            score: Score::from_ln(log_score),
            log_score,
        }
    }

    /// 0-based positions, as used to index score tables.
    pub fn positions(&self) -> BTreeMap<AgentId, usize> {
        self.choices.iter().map(|(id, k)| (id.clone(), k - 1)).collect()
    }

    pub fn choice(&self, id: &AgentId) -> Option<usize> {
        self.choices.get(id).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EdgeFactor {
    pub from: usize,
    pub to: usize,
    /// Row-major `sizes[from] x sizes[to]` log scores.
    pub table: Vec<f64>,
}

/// Dense log-domain view of a graph plus its score tables. Variables are the
/// agents in ascending identifier order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FactorModel {
    pub vars: Vec<AgentId>,
    pub index: BTreeMap<AgentId, usize>,
    pub sizes: Vec<usize>,
    pub node: Vec<Vec<f64>>,
    pub edges: Vec<EdgeFactor>,
}

impl FactorModel {
    pub fn new(
        graph: &AgentGraph,
        nodes: &NodeScoreTable,
        edges: &EdgeScoreTable,
    ) -> Result<Self, InferenceError> {
        let vars: Vec<AgentId> = graph.agent_ids().cloned().collect();
        let index: BTreeMap<AgentId, usize> =
            vars.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut node = Vec::with_capacity(vars.len());
        for id in &vars {
            let scores = nodes
                .scores(id)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| ScoringError::MissingScore(format!("node scores for `{id}`")))?;
            node.push(scores.iter().map(|s| s.ln()).collect::<Vec<f64>>());
        }
        let sizes: Vec<usize> = node.iter().map(Vec::len).collect();
        let mut factors = Vec::with_capacity(graph.edge_count());
        for (from, to) in graph.edges() {
            let m = edges
                .matrix(from, to)
                .ok_or_else(|| ScoringError::MissingScore(format!("edge {from} -> {to}")))?;
            let (fi, ti) = (index[from], index[to]);
            if m.rows() != sizes[fi] || m.cols() != sizes[ti] {
                return Err(ScoringError::MissingScore(format!(
                    "edge {from} -> {to} is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    sizes[fi],
                    sizes[ti]
                ))
                .into());
            }
            let mut table = Vec::with_capacity(m.rows() * m.cols());
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    table.push(m.get(r, c).expect("in bounds").ln());
                }
            }
            factors.push(EdgeFactor { from: fi, to: ti, table });
        }
        Ok(Self { vars, index, sizes, node, edges: factors })
    }

    pub fn edge_log(&self, e: &EdgeFactor, from_pos: usize, to_pos: usize) -> f64 {
        e.table[from_pos * self.sizes[e.to] + to_pos]
    }
}

/// Result of one MAP selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub assignment: Assignment,
    pub trace: SolveTrace,
}

/// True when the moral graph is a tree: connected and no agent has more than
/// one parent.
pub fn moral_graph_is_tree(graph: &AgentGraph) -> bool {
    graph.max_in_degree() <= 1 && graph.edge_count() + 1 == graph.len()
}

/// Exact MAP over the joint quality score.
pub fn solve(
    graph: &AgentGraph,
    nodes: &NodeScoreTable,
    edges: &EdgeScoreTable,
) -> Result<Solution, InferenceError> {
    graph.validate()?;
    if moral_graph_is_tree(graph) {
        return solve_tree(graph, nodes, edges, graph.root());
    }
    let jt = JunctionTree::build(graph, nodes, edges)?;
    jt.solve(graph.root())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreMatrix;
    use crate::topology::aid;

    fn uniform_tables(graph: &AgentGraph, k: usize, v: f64) -> (NodeScoreTable, EdgeScoreTable) {
        let mut n = NodeScoreTable::new();
        for id in graph.agent_ids() {
            n.insert(id.clone(), vec![Score::new(v).unwrap(); k]);
        }
        let mut e = EdgeScoreTable::new();
        for (f, t) in graph.edges() {
            e.insert(f.clone(), t.clone(), ScoreMatrix::from_values(&vec![vec![v; k]; k]).unwrap());
        }
        (n, e)
    }

    #[test]
    fn all_ties_pick_lowest_indices() {
        let diamond = AgentGraph::from_edges(
            &["a", "b", "c", "d"],
            &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
        )
        .unwrap();
        let chain = AgentGraph::from_edges(&["a", "b", "c"], &[("a", "b"), ("b", "c")]).unwrap();
        for g in [diamond, chain] {
            let (n, e) = uniform_tables(&g, 3, 0.5);
            let sol = solve(&g, &n, &e).unwrap();
            assert!(sol.assignment.choices.values().all(|k| *k == 1));
            let expected = 0.5f64.powi((g.len() + g.edge_count()) as i32);
            assert!((sol.assignment.score.value() - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn tree_input_delegates() {
        let g = AgentGraph::from_edges(&["r", "x", "y"], &[("r", "x"), ("r", "y")]).unwrap();
        let mut n = NodeScoreTable::new();
        n.insert(aid("r"), vec![Score::new(0.3).unwrap(), Score::new(0.6).unwrap()]);
        n.insert(aid("x"), vec![Score::new(0.9).unwrap(), Score::new(0.2).unwrap()]);
        n.insert(aid("y"), vec![Score::new(0.4).unwrap(), Score::new(0.8).unwrap()]);
        let mut e = EdgeScoreTable::new();
        e.insert(aid("r"), aid("x"), ScoreMatrix::from_values(&[vec![0.5, 0.9], vec![0.1, 0.7]]).unwrap());
        e.insert(aid("r"), aid("y"), ScoreMatrix::from_values(&[vec![0.6, 0.2], vec![0.3, 0.9]]).unwrap());
        let a = solve(&g, &n, &e).unwrap();
        let b = solve_tree(&g, &n, &e, &aid("r")).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.trace.method, SolveMethod::Tree);
    }

    #[test]
    fn missing_scores_surface() {
        let g = AgentGraph::from_edges(&["a", "b"], &[("a", "b")]).unwrap();
        let (n, _) = uniform_tables(&g, 2, 0.5);
        let err = solve(&g, &n, &EdgeScoreTable::new()).unwrap_err();
        assert!(matches!(err, InferenceError::Scoring(ScoringError::MissingScore(_))));
    }
}
