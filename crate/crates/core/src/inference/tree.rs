use std::collections::VecDeque;

use super::trace::{MessageDirection, MessageRecord, SolveMethod, SolveTrace};
use super::{Assignment, FactorModel, InferenceError, Solution};
use crate::scoring::{EdgeScoreTable, NodeScoreTable};
use crate::topology::{AgentGraph, AgentId};

/// Index of the maximum; the first one wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Shifts `raw` so its max is zero; returns the shift.
pub(crate) fn normalize(raw: &mut [f64]) -> f64 {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in raw.iter_mut() {
        *v -= max;
    }
    max
}

struct Rooted {
    /// Undirected neighbour lists, each entry `(neighbour, edge factor index)`.
    adj: Vec<Vec<(usize, usize)>>,
    parent: Vec<Option<(usize, usize)>>,
    children: Vec<Vec<usize>>,
    /// Breadth-first order from the root.
    order: Vec<usize>,
}

fn root_tree(model: &FactorModel, root: usize) -> Result<Rooted, InferenceError> {
    let n = model.vars.len();
    if model.edges.len() + 1 != n {
        return Err(InferenceError::NotATree);
    }
    let mut adj = vec![Vec::new(); n];
    for (ei, e) in model.edges.iter().enumerate() {
        adj[e.from].push((e.to, ei));
        adj[e.to].push((e.from, ei));
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, ei) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some((u, ei));
                children[u].push(v);
                queue.push_back(v);
            }
        }
    }
    if order.len() != n {
        return Err(InferenceError::NotATree);
    }
    Ok(Rooted { adj, parent, children, order })
}

/// Log pair factor between neighbours `u` (at `pu`) and `v` (at `pv`),
/// whichever way the underlying edge points.
fn pair(model: &FactorModel, ei: usize, u: usize, pu: usize, pv: usize) -> f64 {
    let e = &model.edges[ei];
    if e.from == u {
        model.edge_log(e, pu, pv)
    } else {
        model.edge_log(e, pv, pu)
    }
}

struct Msg {
    table: Vec<f64>,
    offset: f64,
    witness: Vec<usize>,
    work: u64,
}

/// Max-product on a tree-shaped system rooted at `root`, followed by witness
/// backtracking. Emits one upward and one downward message per edge.
pub fn solve_tree(
    graph: &AgentGraph,
    nodes: &NodeScoreTable,
    edges: &EdgeScoreTable,
    root: &AgentId,
) -> Result<Solution, InferenceError> {
    let model = FactorModel::new(graph, nodes, edges)?;
    let r = *model
        .index
        .get(root)
        .ok_or_else(|| crate::topology::TopologyError::UnknownAgent(root.clone()))?;
    let tree = root_tree(&model, r)?;
    let n = model.vars.len();
    let k = &model.sizes;

    // Upward pass, children before parents: m_{i->j}(p_j) =
    // max_{p_i} g(p_i) g(p_i, p_j) prod_c m_{c->i}(p_i)
    let mut up: Vec<Option<Msg>> = (0..n).map(|_| None).collect();
    for &i in tree.order.iter().rev() {
        let Some((j, ei)) = tree.parent[i] else { continue };
        let mut local = model.node[i].clone();
        let mut offset = 0.0;
        for &c in &tree.children[i] {
            let m = up[c].as_ref().expect("child sent first");
            offset += m.offset;
            for (l, v) in local.iter_mut().zip(&m.table) {
                *l += v;
            }
        }
        let mut raw = vec![f64::NEG_INFINITY; k[j]];
        let mut witness = vec![0; k[j]];
        for (pj, (slot, wit)) in raw.iter_mut().zip(witness.iter_mut()).enumerate() {
            for (pi, l) in local.iter().enumerate() {
                let v = l + pair(&model, ei, i, pi, pj);
                if v > *slot {
                    *slot = v;
                    *wit = pi;
                }
            }
        }
        offset += normalize(&mut raw);
        up[i] = Some(Msg { table: raw, offset, witness, work: (k[i] * k[j]) as u64 });
    }

    // Root belief and decoding.
    let mut belief_root = model.node[r].clone();
    let mut root_offset = 0.0;
    for &c in &tree.children[r] {
        let m = up[c].as_ref().expect("upward message");
        root_offset += m.offset;
        for (b, v) in belief_root.iter_mut().zip(&m.table) {
            *b += v;
        }
    }
    let mut choice = vec![0usize; n];
    choice[r] = argmax(&belief_root);
    let log_score = belief_root[choice[r]] + root_offset;
    for &i in &tree.order {
        if let Some((j, _)) = tree.parent[i] {
            choice[i] = up[i].as_ref().expect("upward message").witness[choice[j]];
        }
    }

    // Downward pass: m_{j->i}(p_i) = max_{p_j} g(p_j) g(p_j, p_i)
    //   * m_{parent(j)->j}(p_j) * prod_{c in children(j), c != i} m_{c->j}(p_j)
    let mut down: Vec<Option<Msg>> = (0..n).map(|_| None).collect();
    for &j in &tree.order {
        for &i in &tree.children[j] {
            let ei = tree.parent[i].expect("child has parent").1;
            let mut local = model.node[j].clone();
            let mut offset = 0.0;
            if let Some(m) = down[j].as_ref() {
                offset += m.offset;
                for (l, v) in local.iter_mut().zip(&m.table) {
                    *l += v;
                }
            }
            for &c in tree.children[j].iter().filter(|c| **c != i) {
                let m = up[c].as_ref().expect("upward message");
                offset += m.offset;
                for (l, v) in local.iter_mut().zip(&m.table) {
                    *l += v;
                }
            }
            let mut raw = vec![f64::NEG_INFINITY; k[i]];
            let mut witness = vec![0; k[i]];
            for (pi, (slot, wit)) in raw.iter_mut().zip(witness.iter_mut()).enumerate() {
                for (pj, l) in local.iter().enumerate() {
                    let v = l + pair(&model, ei, j, pj, pi);
                    if v > *slot {
                        *slot = v;
                        *wit = pj;
                    }
                }
            }
            offset += normalize(&mut raw);
            down[i] = Some(Msg { table: raw, offset, witness, work: (k[i] * k[j]) as u64 });
        }
    }

    // Max-marginals.
    let mut beliefs = std::collections::BTreeMap::new();
    for i in 0..n {
        let mut b = model.node[i].clone();
        let mut offset = 0.0;
        let incoming = tree.children[i].iter().map(|c| up[*c].as_ref()).chain([down[i].as_ref()]);
        for m in incoming.flatten() {
            offset += m.offset;
            for (x, v) in b.iter_mut().zip(&m.table) {
                *x += v;
            }
        }
        beliefs.insert(model.vars[i].clone(), b.into_iter().map(|x| x + offset).collect());
    }

    let name = |i: usize| model.vars[i].to_string();
    let mut messages = Vec::with_capacity(2 * model.edges.len());
    for &i in tree.order.iter().rev() {
        if let (Some((j, _)), Some(m)) = (tree.parent[i], up[i].take()) {
            messages.push(MessageRecord {
                from: name(i),
                to: name(j),
                direction: MessageDirection::Up,
                scope: vec![model.vars[j].clone()],
                log_table: m.table,
                log_offset: m.offset,
                witness_scope: vec![model.vars[i].clone()],
                witnesses: m.witness.into_iter().map(|w| vec![w]).collect(),
                work: m.work,
            });
        }
    }
    for &i in &tree.order {
        if let (Some((j, _)), Some(m)) = (tree.parent[i], down[i].take()) {
            messages.push(MessageRecord {
                from: name(j),
                to: name(i),
                direction: MessageDirection::Down,
                scope: vec![model.vars[i].clone()],
                log_table: m.table,
                log_offset: m.offset,
                witness_scope: vec![model.vars[j].clone()],
                witnesses: m.witness.into_iter().map(|w| vec![w]).collect(),
                work: m.work,
            });
        }
    }
    debug_assert_eq!(tree.adj.iter().map(Vec::len).sum::<usize>(), 2 * model.edges.len());

    let assignment = Assignment::from_positions(&model, &choice, log_score);
    Ok(Solution {
        trace: SolveTrace {
            method: SolveMethod::Tree,
            root: root.to_string(),
            messages,
            beliefs,
            cliques: Vec::new(),
            treewidth: None,
            assignment: assignment.clone(),
        },
        assignment,
    })
}
