use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::topology::{AgentGraph, AgentId};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndirectedGraph {
    adj: BTreeMap<AgentId, BTreeSet<AgentId>>,
}

impl UndirectedGraph {
    pub fn new(nodes: impl IntoIterator<Item = AgentId>) -> Self {
        Self { adj: nodes.into_iter().map(|n| (n, BTreeSet::new())).collect() }
    }

    pub fn add_edge(&mut self, a: &AgentId, b: &AgentId) -> bool {
        if a == b {
            return false;
        }
        let added = self.adj.entry(a.clone()).or_default().insert(b.clone());
        self.adj.entry(b.clone()).or_default().insert(a.clone());
        added
    }

    pub fn has_edge(&self, a: &AgentId, b: &AgentId) -> bool {
        self.adj.get(a).is_some_and(|n| n.contains(b))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &AgentId> {
        self.adj.keys()
    }

    pub fn neighbors(&self, a: &AgentId) -> impl Iterator<Item = &AgentId> {
        self.adj.get(a).into_iter().flatten()
    }

    /// Edges as ordered pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> BTreeSet<(AgentId, AgentId)> {
        self.adj
            .iter()
            .flat_map(|(a, ns)| ns.iter().filter(move |b| a < *b).map(move |b| (a.clone(), b.clone())))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    fn remove_node(&mut self, a: &AgentId) {
        if let Some(ns) = self.adj.remove(a) {
            for n in ns {
                if let Some(set) = self.adj.get_mut(&n) {
                    set.remove(a);
                }
            }
        }
    }

    fn fill_in(&self, a: &AgentId) -> Vec<(AgentId, AgentId)> {
        let ns: Vec<&AgentId> = self.neighbors(a).collect();
        let mut missing = Vec::new();
        for (i, x) in ns.iter().enumerate() {
            for y in &ns[i + 1..] {
                if !self.has_edge(x, y) {
                    missing.push(((*x).clone(), (*y).clone()));
                }
            }
        }
        missing
    }
}

/// Undirected skeleton plus an edge between every pair of co-parents.
pub fn moralize(graph: &AgentGraph) -> UndirectedGraph {
    let mut g = UndirectedGraph::new(graph.agent_ids().cloned());
    for (from, to) in graph.edges() {
        g.add_edge(from, to);
    }
    for id in graph.agent_ids() {
        let parents = graph.parents(id);
        for (i, a) in parents.iter().enumerate() {
            for b in &parents[i + 1..] {
                g.add_edge(a, b);
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triangulation {
    pub chordal: UndirectedGraph,
    pub order: Vec<AgentId>,
    pub fill: Vec<(AgentId, AgentId)>,
    /// `{v} ∪ later neighbours of v`, one per elimination step.
    pub elimination_cliques: Vec<BTreeSet<AgentId>>,
}

impl Triangulation {
    /// Largest elimination clique size minus one.
    pub fn treewidth(&self) -> usize {
        self.elimination_cliques.iter().map(BTreeSet::len).max().unwrap_or(1) - 1
    }

    /// Maximal cliques of the chordal graph, in elimination order.
    pub fn maximal_cliques(&self) -> Vec<BTreeSet<AgentId>> {
        let mut out: Vec<BTreeSet<AgentId>> = Vec::new();
        for (i, c) in self.elimination_cliques.iter().enumerate() {
            let dominated = self
                .elimination_cliques
                .iter()
                .enumerate()
                .any(|(j, other)| j != i && c.is_subset(other) && (c.len() < other.len() || j < i));
            if !dominated {
                out.push(c.clone());
            }
        }
        out
    }
}

/// Greedy min-fill elimination; ties go to the smallest identifier.
pub fn triangulate(graph: &UndirectedGraph) -> Triangulation {
    let mut work = graph.clone();
    let mut chordal = graph.clone();
    let mut order = Vec::with_capacity(graph.node_count());
    let mut fill = Vec::new();
    let mut cliques = Vec::with_capacity(graph.node_count());
    while work.node_count() > 0 {
        let (v, missing) = work
            .nodes()
            .map(|v| (v.clone(), work.fill_in(v)))
            .min_by(|(a, fa), (b, fb)| fa.len().cmp(&fb.len()).then_with(|| a.cmp(b)))
            .expect("non-empty");
        let mut clique: BTreeSet<AgentId> = work.neighbors(&v).cloned().collect();
        clique.insert(v.clone());
        for (x, y) in missing {
            work.add_edge(&x, &y);
            if chordal.add_edge(&x, &y) {
                fill.push((x, y));
            }
        }
        work.remove_node(&v);
        order.push(v);
        cliques.push(clique);
    }
    Triangulation { chordal, order, fill, elimination_cliques: cliques }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::aid;

    fn pairs(g: &UndirectedGraph) -> Vec<(String, String)> {
        g.edges().into_iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn p(a: &str, b: &str) -> (String, String) {
        (a.into(), b.into())
    }

    fn cycle4() -> UndirectedGraph {
        let mut g = UndirectedGraph::new(["a", "b", "c", "d"].map(aid));
        for (x, y) in [("a", "b"), ("b", "c"), ("c", "d"), ("d", "a")] {
            g.add_edge(&aid(x), &aid(y));
        }
        g
    }

    /// Fill-in of eliminating in `order`, computed from scratch.
    fn fill_for_order(g: &UndirectedGraph, order: &[AgentId]) -> usize {
        let mut work = g.clone();
        let mut added = 0;
        for v in order {
            let ns: Vec<AgentId> = work.neighbors(v).cloned().collect();
            for i in 0..ns.len() {
                for j in i + 1..ns.len() {
                    if work.add_edge(&ns[i], &ns[j]) {
                        added += 1;
                    }
                }
            }
            work.remove_node(v);
        }
        added
    }

    fn permutations(items: &[AgentId]) -> Vec<Vec<AgentId>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, head.clone());
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn moralization_rules() {
        let v = AgentGraph::builder()
            .agent(crate::topology::Agent::new(aid("i")))
            .unwrap()
            .agent(crate::topology::Agent::new(aid("j")))
            .unwrap()
            .agent(crate::topology::Agent::new(aid("k")))
            .unwrap()
            .edge(aid("i"), aid("j"))
            .unwrap()
            .edge(aid("k"), aid("j"))
            .unwrap()
            .root(aid("i"))
            .build()
            .unwrap();
        assert_eq!(pairs(&moralize(&v)), [p("i", "j"), p("i", "k"), p("j", "k")]);

        let chain = AgentGraph::from_edges(&["a", "b", "c"], &[("a", "b"), ("b", "c")]).unwrap();
        assert_eq!(pairs(&moralize(&chain)), [p("a", "b"), p("b", "c")]);

        let diamond = AgentGraph::from_edges(
            &["a", "b", "c", "d"],
            &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
        )
        .unwrap();
        let m = moralize(&diamond);
        assert!(m.has_edge(&aid("b"), &aid("c")));
        assert_eq!(m.edge_count(), 5);
    }

    #[test]
    fn four_cycle_gets_one_chord() {
        let g = cycle4();
        let nodes: Vec<AgentId> = g.nodes().cloned().collect();
        let best = permutations(&nodes).iter().map(|o| fill_for_order(&g, o)).min().unwrap();
        assert_eq!(best, 1);
        let t = triangulate(&g);
        assert_eq!(t.fill.len(), best);
        assert_eq!(t.treewidth(), 2);
    }

    #[test]
    fn chordal_and_tree_inputs_need_no_fill() {
        let mut tri = UndirectedGraph::new(["a", "b", "c"].map(aid));
        for (x, y) in [("a", "b"), ("b", "c"), ("a", "c")] {
            tri.add_edge(&aid(x), &aid(y));
        }
        assert!(triangulate(&tri).fill.is_empty());

        let mut tree = UndirectedGraph::new(["a", "b", "c", "d"].map(aid));
        for (x, y) in [("a", "b"), ("a", "c"), ("c", "d")] {
            tree.add_edge(&aid(x), &aid(y));
        }
        let t = triangulate(&tree);
        assert!(t.fill.is_empty());
        assert_eq!(t.treewidth(), 1);
        assert_eq!(t.maximal_cliques().len(), 3);
    }
}
