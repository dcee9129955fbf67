use std::collections::BTreeMap;

use mapro_core::inference::{brute_force_map, solve, JunctionTree};
use mapro_core::scoring::{joint_log_score, EdgeScoreTable, NodeScoreTable, Score, ScoreMatrix};
use mapro_core::topology::{aid, Agent, AgentGraph, AgentId};
use proptest::prelude::*;

// Coarse score levels so ties are common.
const LEVELS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

#[derive(Debug, Clone)]
struct Case {
    n: usize,
    k: usize,
    parents: Vec<Vec<usize>>,
    node: Vec<Vec<usize>>,
    edge: Vec<Vec<usize>>,
}

fn case() -> impl Strategy<Value = Case> {
    (2usize..=5, 2usize..=3).prop_flat_map(|(n, k)| {
        let parents = (1..n)
            .map(|j| proptest::sample::subsequence((0..j).collect::<Vec<_>>(), 1..=j.min(3)))
            .collect::<Vec<_>>();
        let node = proptest::collection::vec(proptest::collection::vec(0usize..4, k), n);
        let edge = proptest::collection::vec(proptest::collection::vec(0usize..4, k * k), n * 3);
        (Just(n), Just(k), parents, node, edge).prop_map(|(n, k, parents, node, edge)| Case { n, k, parents, node, edge })
    })
}

fn build(c: &Case) -> (AgentGraph, NodeScoreTable, EdgeScoreTable) {
    let id = |i: usize| aid(&format!("n{i}"));
    let mut b = AgentGraph::builder();
    for i in 0..c.n {
        b = b.agent(Agent::new(id(i))).unwrap();
    }
    for (j, ps) in c.parents.iter().enumerate() {
        for p in ps {
            b = b.edge(id(*p), id(j + 1)).unwrap();
        }
    }
    let graph = b.build().unwrap();
    let mut nodes = NodeScoreTable::new();
    for i in 0..c.n {
        nodes.insert(id(i), c.node[i].iter().map(|l| Score::new(LEVELS[*l]).unwrap()).collect());
    }
    let mut edges = EdgeScoreTable::new();
    for (e, (f, t)) in graph.edges().enumerate() {
        let rows: Vec<Vec<f64>> =
            (0..c.k).map(|r| (0..c.k).map(|col| LEVELS[c.edge[e][r * c.k + col]]).collect()).collect();
        edges.insert(f.clone(), t.clone(), ScoreMatrix::from_values(&rows).unwrap());
    }
    (graph, nodes, edges)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn solve_reaches_the_brute_force_maximum_even_with_ties(c in case()) {
        let (g, n, e) = build(&c);
        let sol = solve(&g, &n, &e).unwrap();
        let bf = brute_force_map(&g, &n, &e).unwrap();
        prop_assert!((sol.assignment.log_score - bf.log_score).abs() <= 1e-9 * bf.log_score.abs().max(1.0));
        let pos: BTreeMap<AgentId, usize> = sol.assignment.positions();
        let achieved = joint_log_score(&pos, &n, &e, &g).unwrap();
        prop_assert!((achieved - sol.assignment.log_score).abs() <= 1e-9 * achieved.abs().max(1.0));
    }

    #[test]
    fn junction_tree_covers_every_factor_once(c in case()) {
        let (g, n, e) = build(&c);
        let jt = JunctionTree::build(&g, &n, &e).unwrap();
        prop_assert!(jt.check_running_intersection().is_ok());
        let total: usize = jt.cliques().iter().map(|cl| cl.factors.len()).sum();
        prop_assert_eq!(total, g.len() + g.edge_count());
        let pos: BTreeMap<AgentId, usize> = g.agent_ids().map(|a| (a.clone(), 0)).collect();
        let want = joint_log_score(&pos, &n, &e, &g).unwrap();
        prop_assert!((jt.assigned_log_ratio(&pos).unwrap() - want).abs() <= 1e-9 * want.abs().max(1.0));
    }
}
