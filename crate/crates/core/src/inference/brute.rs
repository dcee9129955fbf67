use std::collections::BTreeMap;

use super::{Assignment, InferenceError};
use crate::scoring::{joint_log_score, EdgeScoreTable, NodeScoreTable, Score, ScoringError};
use crate::topology::{AgentGraph, AgentId};

/// Largest product space `brute_force_map` will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

/// Exhaustive MAP: evaluates the joint quality score of every assignment.
/// Assignments are visited in lexicographic order over agents sorted by
/// identifier, and the first maximum is kept.
pub fn brute_force_map(
    graph: &AgentGraph,
    nodes: &NodeScoreTable,
    edges: &EdgeScoreTable,
) -> Result<Assignment, InferenceError> {
    let ids: Vec<AgentId> = graph.agent_ids().cloned().collect();
    let sizes: Vec<usize> = ids
        .iter()
        .map(|id| {
            nodes
                .scores(id)
                .map(<[Score]>::len)
                .filter(|k| *k > 0)
                .ok_or_else(|| ScoringError::MissingScore(format!("node scores for `{id}`")))
        })
        .collect::<Result<_, _>>()?;
    let space: f64 = sizes.iter().map(|k| *k as f64).product();
    if space > BRUTE_FORCE_LIMIT {
        return Err(InferenceError::TooLarge(space));
    }

    let mut digits = vec![0usize; ids.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let assignment: BTreeMap<AgentId, usize> =
            ids.iter().cloned().zip(digits.iter().copied()).collect();
        let value = joint_log_score(&assignment, nodes, edges, graph)?;
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, digits.clone()));
        }
        // odometer, last agent fastest
        let mut pos = digits.len();
        loop {
            if pos == 0 {
                let (log_score, digits) = best.expect("at least one assignment");
                return Ok(Assignment {
                    choices: ids.into_iter().zip(digits.into_iter().map(|d| d + 1)).collect(),
                    score: Score::from_ln(log_score),
                    log_score,
                });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < sizes[pos] {
                break;
            }
            digits[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreMatrix;
    use crate::topology::aid;

    #[test]
    fn guard_and_small_space() {
        let g = AgentGraph::from_edges(&["a"], &[]).unwrap();
        let mut n = NodeScoreTable::new();
        n.insert(aid("a"), [0.2, 0.9, 0.5].iter().map(|v| Score::new(*v).unwrap()).collect());
        let a = brute_force_map(&g, &n, &EdgeScoreTable::new()).unwrap();
        assert_eq!(a.choice(&aid("a")), Some(2));

        let ids: Vec<String> = (0..7).map(|i| format!("n{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let edges: Vec<(&str, &str)> = (1..7).map(|i| (refs[0], refs[i])).collect();
        let star = AgentGraph::from_edges(&refs, &edges).unwrap();
        let mut n = NodeScoreTable::new();
        for id in star.agent_ids() {
            n.insert(id.clone(), vec![Score::ONE; 8]);
        }
        let mut e = EdgeScoreTable::new();
        for (f, t) in star.edges() {
            e.insert(f.clone(), t.clone(), ScoreMatrix::from_values(&vec![vec![1.0; 8]; 8]).unwrap());
        }
        // 8^7 > 10^6
        assert!(matches!(brute_force_map(&star, &n, &e), Err(InferenceError::TooLarge(_))));
    }
}
