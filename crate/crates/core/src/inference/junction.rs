use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::graphs::{moralize, triangulate, Triangulation};
use super::trace::{CliqueSummary, MessageDirection, MessageRecord, SolveMethod, SolveTrace};
use super::tree::{argmax, normalize};
use super::{Assignment, FactorModel, InferenceError, Solution};
use crate::scoring::{EdgeScoreTable, NodeScoreTable};
use crate::topology::{AgentGraph, AgentId, TopologyError};

/// Refuse clique tables larger than this many entries.
pub const CLIQUE_TABLE_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorRef {
    Node(AgentId),
    Edge(AgentId, AgentId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clique {
    pub label: String,
    /// Members in ascending identifier order.
    pub members: Vec<AgentId>,
    /// Factors absorbed into this clique's potential.
    pub factors: Vec<FactorRef>,
    vars: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
    /// Log potential indexed by configuration; first member most significant.
    potential: Vec<f64>,
}

impl Clique {
    pub fn table_size(&self) -> usize {
        self.size
    }

    fn digit(&self, config: usize, member: usize, model: &FactorModel) -> usize {
        (config / self.strides[member]) % model.sizes[self.vars[member]]
    }

    fn config_of(&self, positions: &[usize]) -> usize {
        self.vars.iter().zip(&self.strides).map(|(v, s)| positions[*v] * s).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separator {
    /// Indices of the two adjacent cliques.
    pub cliques: (usize, usize),
    pub members: Vec<AgentId>,
    vars: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JunctionTree {
    cliques: Vec<Clique>,
    separators: Vec<Separator>,
    treewidth: usize,
    model: FactorModel,
}

impl JunctionTree {
    /// Moralizes, triangulates (min-fill) and builds the clique tree.
    pub fn build(
        graph: &AgentGraph,
        nodes: &NodeScoreTable,
        edges: &EdgeScoreTable,
    ) -> Result<Self, InferenceError> {
        let tri = triangulate(&moralize(graph));
        Self::from_triangulation(graph, &tri, nodes, edges)
    }

    pub fn from_triangulation(
        graph: &AgentGraph,
        tri: &Triangulation,
        nodes: &NodeScoreTable,
        edges: &EdgeScoreTable,
    ) -> Result<Self, InferenceError> {
        let model = FactorModel::new(graph, nodes, edges)?;
        let member_sets = tri.maximal_cliques();

        let mut cliques = Vec::with_capacity(member_sets.len());
        for (ci, set) in member_sets.iter().enumerate() {
            let vars: Vec<usize> = set.iter().map(|id| model.index[id]).collect();
            let size_f: f64 = vars.iter().map(|v| model.sizes[*v] as f64).product();
            if size_f > CLIQUE_TABLE_LIMIT {
                let names: Vec<&str> = set.iter().map(AgentId::as_str).collect();
                return Err(InferenceError::CliqueTooLarge {
                    members: names.join(", "),
                    size: size_f,
                    limit: CLIQUE_TABLE_LIMIT,
                });
            }
            let mut strides = vec![1; vars.len()];
            for m in (0..vars.len().saturating_sub(1)).rev() {
                strides[m] = strides[m + 1] * model.sizes[vars[m + 1]];
            }
            cliques.push(Clique {
                label: format!("C{ci}"),
                members: set.iter().cloned().collect(),
                factors: Vec::new(),
                vars,
                strides,
                size: size_f as usize,
                potential: Vec::new(),
            });
        }

        // Each factor goes to the first clique containing its scope.
        let mut node_home = vec![usize::MAX; model.vars.len()];
        for (v, home) in node_home.iter_mut().enumerate() {
            *home = cliques
                .iter()
                .position(|c| c.vars.contains(&v))
                .ok_or_else(|| InferenceError::FactorHomeless(format!("g({})", model.vars[v])))?;
            cliques[*home].factors.push(FactorRef::Node(model.vars[v].clone()));
        }
        let mut edge_home = Vec::with_capacity(model.edges.len());
        for e in &model.edges {
            let home = cliques
                .iter()
                .position(|c| c.vars.contains(&e.from) && c.vars.contains(&e.to))
                .ok_or_else(|| {
                    InferenceError::FactorHomeless(format!(
                        "g({}, {})",
                        model.vars[e.from], model.vars[e.to]
                    ))
                })?;
            cliques[home].factors.push(FactorRef::Edge(
                model.vars[e.from].clone(),
                model.vars[e.to].clone(),
            ));
            edge_home.push(home);
        }

        for (ci, clique) in cliques.iter_mut().enumerate() {
            let mut pot = vec![0.0; clique.size];
            let mut positions = vec![0usize; model.vars.len()];
            for (x, slot) in pot.iter_mut().enumerate() {
                for (m, v) in clique.vars.iter().enumerate() {
                    positions[*v] = (x / clique.strides[m]) % model.sizes[*v];
                }
                let mut total = 0.0;
                for (v, home) in node_home.iter().enumerate() {
                    if *home == ci {
                        total += model.node[v][positions[v]];
                    }
                }
                for (e, home) in model.edges.iter().zip(&edge_home) {
                    if *home == ci {
                        total += model.edge_log(e, positions[e.from], positions[e.to]);
                    }
                }
                *slot = total;
            }
            clique.potential = pot;
        }

        // Maximum-weight spanning tree over intersection sizes (Kruskal).
        let mut candidates = Vec::new();
        for a in 0..cliques.len() {
            for b in a + 1..cliques.len() {
                let w = member_sets[a].intersection(&member_sets[b]).count();
                candidates.push((w, a, b));
            }
        }
        candidates.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut uf: Vec<usize> = (0..cliques.len()).collect();
        fn find(uf: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while uf[r] != r {
                r = uf[r];
            }
            let mut c = x;
            while uf[c] != r {
                let next = uf[c];
                uf[c] = r;
                c = next;
            }
            r
        }
        let mut separators = Vec::new();
        for (_, a, b) in candidates {
            let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
            if ra == rb {
                continue;
            }
            uf[ra] = rb;
            let shared: BTreeSet<&AgentId> = member_sets[a].intersection(&member_sets[b]).collect();
            let members: Vec<AgentId> = shared.into_iter().cloned().collect();
            let vars = members.iter().map(|id| model.index[id]).collect();
            separators.push(Separator { cliques: (a, b), members, vars });
        }

        let jt = Self { cliques, separators, treewidth: tri.treewidth(), model };
        jt.check_running_intersection()?;
        Ok(jt)
    }

    pub fn cliques(&self) -> &[Clique] {
        &self.cliques
    }

    pub fn separators(&self) -> &[Separator] {
        &self.separators
    }

    pub fn treewidth(&self) -> usize {
        self.treewidth
    }

    /// `(neighbour clique, separator index)` pairs.
    pub fn neighbors(&self, clique: usize) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .separators
            .iter()
            .enumerate()
            .filter_map(|(si, s)| match s.cliques {
                (a, b) if a == clique => Some((b, si)),
                (a, b) if b == clique => Some((a, si)),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Clique indices on the unique tree path from `a` to `b`, inclusive.
    pub fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let mut prev = vec![usize::MAX; self.cliques.len()];
        let mut queue = VecDeque::from([a]);
        prev[a] = a;
        while let Some(c) = queue.pop_front() {
            for (n, _) in self.neighbors(c) {
                if prev[n] == usize::MAX {
                    prev[n] = c;
                    queue.push_back(n);
                }
            }
        }
        let mut path = vec![b];
        let mut cur = b;
        while cur != a {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse();
        path
    }

    /// Every variable shared by two cliques is present on the path between
    /// them. Checked over all clique pairs.
    pub fn check_running_intersection(&self) -> Result<(), InferenceError> {
        for a in 0..self.cliques.len() {
            for b in a + 1..self.cliques.len() {
                let path = self.path(a, b);
                for v in self.cliques[a].vars.iter().filter(|v| self.cliques[b].vars.contains(v)) {
                    if path.iter().any(|c| !self.cliques[*c].vars.contains(v)) {
                        return Err(InferenceError::RunningIntersection(self.model.vars[*v].clone()));
                    }
                }
            }
        }
        Ok(())
    }

    fn positions_of(&self, assignment: &BTreeMap<AgentId, usize>) -> Result<Vec<usize>, InferenceError> {
        self.model
            .vars
            .iter()
            .map(|id| {
                assignment
                    .get(id)
                    .copied()
                    .filter(|p| *p < self.model.sizes[self.model.index[id]])
                    .ok_or_else(|| {
                        crate::scoring::ScoringError::MissingScore(format!("position for `{id}`")).into()
                    })
            })
            .collect()
    }

    /// `ln psi_C` of the absorbed factors, for 0-based positions.
    pub fn clique_log_potential(
        &self,
        clique: usize,
        assignment: &BTreeMap<AgentId, usize>,
    ) -> Result<f64, InferenceError> {
        let positions = self.positions_of(assignment)?;
        let c = &self.cliques[clique];
        Ok(c.potential[c.config_of(&positions)])
    }

    /// `sum_C ln psi_C - sum_S ln psi_S` with factors absorbed once each.
    /// Separators absorb no factors, so their potentials are 1.
    pub fn assigned_log_ratio(&self, assignment: &BTreeMap<AgentId, usize>) -> Result<f64, InferenceError> {
        (0..self.cliques.len()).map(|c| self.clique_log_potential(c, assignment)).sum()
    }

    /// Same ratio with every clique and separator carrying *all* factors
    /// inside its scope; exact only when running intersection holds.
    pub fn induced_log_ratio(&self, assignment: &BTreeMap<AgentId, usize>) -> Result<f64, InferenceError> {
        let positions = self.positions_of(assignment)?;
        let scope_log = |vars: &[usize]| -> f64 {
            let nodes: f64 = vars.iter().map(|v| self.model.node[*v][positions[*v]]).sum();
            let edges: f64 = self
                .model
                .edges
                .iter()
                .filter(|e| vars.contains(&e.from) && vars.contains(&e.to))
                .map(|e| self.model.edge_log(e, positions[e.from], positions[e.to]))
                .sum();
            nodes + edges
        };
        let cliques: f64 = self.cliques.iter().map(|c| scope_log(&c.vars)).sum();
        let seps: f64 = self.separators.iter().map(|s| scope_log(&s.vars)).sum();
        Ok(cliques - seps)
    }

    /// Clique-level max-product with witness decoding, rooted at the first
    /// clique containing `root`.
    pub fn solve(&self, root: &AgentId) -> Result<Solution, InferenceError> {
        let model = &self.model;
        let root_var = *model
            .index
            .get(root)
            .ok_or_else(|| TopologyError::UnknownAgent(root.clone()))?;
        let nc = self.cliques.len();
        let rc = self
            .cliques
            .iter()
            .position(|c| c.vars.contains(&root_var))
            .expect("every variable lives in a clique");

        // Root the clique tree.
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; nc];
        let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nc];
        let mut order = Vec::with_capacity(nc);
        let mut seen = vec![false; nc];
        let mut queue = VecDeque::from([rc]);
        seen[rc] = true;
        while let Some(c) = queue.pop_front() {
            order.push(c);
            for (n, si) in self.neighbors(c) {
                if !seen[n] {
                    seen[n] = true;
                    parent[n] = Some((c, si));
                    children[c].push((n, si));
                    queue.push_back(n);
                }
            }
        }

        // proj[(clique, sep)][x] = separator configuration of clique config x
        let mut proj: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (si, s) in self.separators.iter().enumerate() {
            let sep_strides = strides_for(&s.vars, &model.sizes);
            for c in [s.cliques.0, s.cliques.1] {
                let clique = &self.cliques[c];
                let table: Vec<usize> = (0..clique.size)
                    .map(|x| {
                        s.vars
                            .iter()
                            .zip(&sep_strides)
                            .map(|(v, st)| {
                                let m = clique.vars.iter().position(|cv| cv == v).expect("sep in clique");
                                clique.digit(x, m, model) * st
                            })
                            .sum()
                    })
                    .collect();
                proj.insert((c, si), table);
            }
        }
        let sep_size = |si: usize| -> usize {
            self.separators[si].vars.iter().map(|v| model.sizes[*v]).product()
        };

        struct Msg {
            table: Vec<f64>,
            offset: f64,
            witness: Vec<usize>,
            work: u64,
        }

        // Upward.
        let mut up: Vec<Option<Msg>> = (0..nc).map(|_| None).collect();
        for &c in order.iter().rev() {
            let Some((_, si)) = parent[c] else { continue };
            let clique = &self.cliques[c];
            let mut raw = vec![f64::NEG_INFINITY; sep_size(si)];
            let mut witness = vec![0; raw.len()];
            let mut offset = 0.0;
            for (b, bsi) in &children[c] {
                offset += up[*b].as_ref().expect("child first").offset;
                let _ = bsi;
            }
            let out_proj = &proj[&(c, si)];
            for x in 0..clique.size {
                let mut v = clique.potential[x];
                for (b, bsi) in &children[c] {
                    v += up[*b].as_ref().expect("child first").table[proj[&(c, *bsi)][x]];
                }
                let s = out_proj[x];
                if v > raw[s] {
                    raw[s] = v;
                    witness[s] = x;
                }
            }
            offset += normalize(&mut raw);
            up[c] = Some(Msg { table: raw, offset, witness, work: clique.size as u64 });
        }

        // Root belief and decoding.
        let root_clique = &self.cliques[rc];
        let mut belief = root_clique.potential.clone();
        let mut root_offset = 0.0;
        for (b, bsi) in &children[rc] {
            let m = up[*b].as_ref().expect("upward message");
            root_offset += m.offset;
            for (x, slot) in belief.iter_mut().enumerate() {
                *slot += m.table[proj[&(rc, *bsi)][x]];
            }
        }
        let mut config = vec![0usize; nc];
        config[rc] = argmax(&belief);
        let log_score = belief[config[rc]] + root_offset;
        for &c in &order {
            if let Some((p, si)) = parent[c] {
                let s = proj[&(p, si)][config[p]];
                config[c] = up[c].as_ref().expect("upward message").witness[s];
            }
        }
        let mut positions = vec![usize::MAX; model.vars.len()];
        for &c in &order {
            let clique = &self.cliques[c];
            for (m, v) in clique.vars.iter().enumerate() {
                let d = clique.digit(config[c], m, model);
                debug_assert!(positions[*v] == usize::MAX || positions[*v] == d);
                positions[*v] = d;
            }
        }

        // Downward.
        let mut down: Vec<Option<Msg>> = (0..nc).map(|_| None).collect();
        for &d in &order {
            for &(c, si) in &children[d] {
                let clique = &self.cliques[d];
                let mut raw = vec![f64::NEG_INFINITY; sep_size(si)];
                let mut witness = vec![0; raw.len()];
                let mut offset = 0.0;
                if let Some(m) = down[d].as_ref() {
                    offset += m.offset;
                }
                for (b, _) in children[d].iter().filter(|(b, _)| *b != c) {
                    offset += up[*b].as_ref().expect("upward message").offset;
                }
                let out_proj = &proj[&(d, si)];
                for x in 0..clique.size {
                    let mut v = clique.potential[x];
                    if let (Some(m), Some((_, psi))) = (down[d].as_ref(), parent[d]) {
                        v += m.table[proj[&(d, psi)][x]];
                    }
                    for (b, bsi) in children[d].iter().filter(|(b, _)| *b != c) {
                        v += up[*b].as_ref().expect("upward message").table[proj[&(d, *bsi)][x]];
                    }
                    let s = out_proj[x];
                    if v > raw[s] {
                        raw[s] = v;
                        witness[s] = x;
                    }
                }
                offset += normalize(&mut raw);
                down[c] = Some(Msg { table: raw, offset, witness, work: clique.size as u64 });
            }
        }

        // Clique beliefs, then per-agent max-marginals from the first clique
        // holding each agent.
        let mut beliefs = BTreeMap::new();
        let mut clique_beliefs = Vec::with_capacity(nc);
        for c in 0..nc {
            let clique = &self.cliques[c];
            let mut b = clique.potential.clone();
            let mut offset = 0.0;
            let mut incoming: Vec<(&Msg, usize)> = children[c]
                .iter()
                .map(|(ch, si)| (up[*ch].as_ref().expect("upward message"), *si))
                .collect();
            if let (Some(m), Some((_, si))) = (down[c].as_ref(), parent[c]) {
                incoming.push((m, si));
            }
            for (m, si) in incoming {
                offset += m.offset;
                for (x, slot) in b.iter_mut().enumerate() {
                    *slot += m.table[proj[&(c, si)][x]];
                }
            }
            clique_beliefs.push(b.into_iter().map(|v| v + offset).collect::<Vec<f64>>());
        }
        for (v, id) in model.vars.iter().enumerate() {
            let c = self.cliques.iter().position(|c| c.vars.contains(&v)).expect("covered");
            let clique = &self.cliques[c];
            let m = clique.vars.iter().position(|cv| *cv == v).expect("member");
            let mut mm = vec![f64::NEG_INFINITY; model.sizes[v]];
            for (x, val) in clique_beliefs[c].iter().enumerate() {
                let d = clique.digit(x, m, model);
                mm[d] = mm[d].max(*val);
            }
            beliefs.insert(id.clone(), mm);
        }

        let decode = |c: usize, x: usize| -> Vec<usize> {
            let clique = &self.cliques[c];
            (0..clique.vars.len()).map(|m| clique.digit(x, m, model)).collect()
        };
        let mut messages = Vec::with_capacity(2 * self.separators.len());
        for &c in order.iter().rev() {
            if let (Some((p, si)), Some(m)) = (parent[c], up[c].take()) {
                messages.push(MessageRecord {
                    from: self.cliques[c].label.clone(),
                    to: self.cliques[p].label.clone(),
                    direction: MessageDirection::Up,
                    scope: self.separators[si].members.clone(),
                    log_table: m.table,
                    log_offset: m.offset,
                    witness_scope: self.cliques[c].members.clone(),
                    witnesses: m.witness.iter().map(|x| decode(c, *x)).collect(),
                    work: m.work,
                });
            }
        }
        for &c in &order {
            if let (Some((p, si)), Some(m)) = (parent[c], down[c].take()) {
                messages.push(MessageRecord {
                    from: self.cliques[p].label.clone(),
                    to: self.cliques[c].label.clone(),
                    direction: MessageDirection::Down,
                    scope: self.separators[si].members.clone(),
                    log_table: m.table,
                    log_offset: m.offset,
                    witness_scope: self.cliques[p].members.clone(),
                    witnesses: m.witness.iter().map(|x| decode(p, *x)).collect(),
                    work: m.work,
                });
            }
        }

        let assignment = Assignment::from_positions(model, &positions, log_score);
        Ok(Solution {
            trace: SolveTrace {
                method: SolveMethod::JunctionTree,
                root: root_clique.label.clone(),
                messages,
                beliefs,
                cliques: self
                    .cliques
                    .iter()
                    .map(|c| CliqueSummary { label: c.label.clone(), members: c.members.clone() })
                    .collect(),
                treewidth: Some(self.treewidth),
                assignment: assignment.clone(),
            },
            assignment,
        })
    }
}

fn strides_for(vars: &[usize], sizes: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; vars.len()];
    for m in (0..vars.len().saturating_sub(1)).rev() {
        strides[m] = strides[m + 1] * sizes[vars[m + 1]];
    }
    strides
}
