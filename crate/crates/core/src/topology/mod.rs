//! The multi-agent system as a directed acyclic graph of agents.
//!
//! Every downstream stage (scoring, inference, execution, blame propagation)
//! reads the graph through this module. Graphs are built with [`GraphBuilder`]
//! or loaded from a [`GraphDocument`]; after [`AgentGraph::validate`] the graph
//! is treated as immutable and can be shared freely.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod pool;

pub use pool::{Lineage, PoolError, PromptCandidate, PromptPool};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("edge {from} -> {to} would create a cycle")]
    Cycle { from: AgentId, to: AgentId },
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("edge {from} -> {to} already present")]
    DuplicateEdge { from: AgentId, to: AgentId },
    #[error("duplicate agent `{0}`")]
    DuplicateAgent(AgentId),
    #[error("agent identifier must be non-empty")]
    EmptyId,
    #[error("graph has no agents")]
    Empty,
    #[error("graph is disconnected: `{0}` is not reachable from the other agents")]
    Disconnected(AgentId),
    #[error("root `{0}` has incoming edges")]
    RootNotSource(AgentId),
    #[error("graph has several sources ({0}); the root must be named explicitly")]
    AmbiguousRoot(String),
    #[error("graph contains a directed cycle")]
    CycleDetected,
}

/// Opaque, non-empty agent identifier. Ordering is lexicographic and drives
/// every deterministic tie-break in the crate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    pub fn new(value: impl Into<String>) -> Result<Self, TopologyError> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(TopologyError::EmptyId);
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AgentId {
    type Error = TopologyError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        AgentId::new(value)
    }
}

impl From<AgentId> for String {
    fn from(id: AgentId) -> Self {
        id.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Shorthand used heavily in tests and fixtures. Panics on empty input.
pub fn aid(value: &str) -> AgentId {
    AgentId::new(value).expect("agent id must be non-empty")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agent {
    pub id: AgentId,
    #[serde(default)]
    pub role: String,
    #[serde(default)]
    pub base_prompt: String,
}

impl Agent {
    pub fn new(id: AgentId) -> Self {
        Self { id, role: String::new(), base_prompt: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentGraph {
    agents: BTreeMap<AgentId, Agent>,
    edges: BTreeSet<(AgentId, AgentId)>,
    root: AgentId,
}

impl AgentGraph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::default()
    }

    /// Convenience constructor: agents named by `ids`, edges given as pairs.
    /// The root is inferred when there is a single source.
    pub fn from_edges(ids: &[&str], edges: &[(&str, &str)]) -> Result<Self, TopologyError> {
        let mut b = GraphBuilder::default();
        for id in ids {
            b = b.agent(Agent::new(AgentId::new(*id)?))?;
        }
        for (from, to) in edges {
            b = b.edge(aid(from), aid(to))?;
        }
        b.build()
    }

    pub fn root(&self) -> &AgentId {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agent(&self, id: &AgentId) -> Option<&Agent> {
        self.agents.get(id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &Agent> {
        self.agents.values()
    }

    /// Agent identifiers in ascending order.
    pub fn agent_ids(&self) -> impl Iterator<Item = &AgentId> {
        self.agents.keys()
    }

    pub fn contains(&self, id: &AgentId) -> bool {
        self.agents.contains_key(id)
    }

    pub fn edges(&self) -> impl Iterator<Item = &(AgentId, AgentId)> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: &AgentId, to: &AgentId) -> bool {
        self.edges.contains(&(from.clone(), to.clone()))
    }

    /// Direct upstream producers of `id`, ascending.
    pub fn parents(&self, id: &AgentId) -> Vec<&AgentId> {
        self.edges.iter().filter(|(_, t)| t == id).map(|(f, _)| f).collect()
    }

    /// Direct downstream consumers of `id`, ascending.
    pub fn children(&self, id: &AgentId) -> Vec<&AgentId> {
        self.edges.iter().filter(|(f, _)| f == id).map(|(_, t)| t).collect()
    }

    pub fn sources(&self) -> Vec<&AgentId> {
        self.agents.keys().filter(|id| self.parents(id).is_empty()).collect()
    }

    pub fn sinks(&self) -> Vec<&AgentId> {
        self.agents.keys().filter(|id| self.children(id).is_empty()).collect()
    }

    pub fn max_in_degree(&self) -> usize {
        self.agents.keys().map(|id| self.parents(id).len()).max().unwrap_or(0)
    }

    /// Returns a new graph with `from -> to` added.
    pub fn add_edge(&self, from: AgentId, to: AgentId) -> Result<Self, TopologyError> {
        let mut next = self.clone();
        next.insert_edge(from, to)?;
        Ok(next)
    }

    fn insert_edge(&mut self, from: AgentId, to: AgentId) -> Result<(), TopologyError> {
        for id in [&from, &to] {
            if !self.agents.contains_key(id) {
                return Err(TopologyError::UnknownAgent(id.clone()));
            }
        }
        if self.has_edge(&from, &to) {
            return Err(TopologyError::DuplicateEdge { from, to });
        }
        // A new edge from -> to closes a cycle iff `from` is reachable from `to`.
        if from == to || self.reaches(&to, &from) {
            return Err(TopologyError::Cycle { from, to });
        }
        self.edges.insert((from, to));
        Ok(())
    }

    fn reaches(&self, start: &AgentId, target: &AgentId) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(cur) = stack.pop() {
            if cur == target {
                return true;
            }
            if seen.insert(cur) {
                stack.extend(self.children(cur));
            }
        }
        false
    }

    /// Kahn's algorithm with the smallest ready identifier taken first.
    pub fn topological_order(&self) -> Result<Vec<AgentId>, TopologyError> {
        let mut indegree: BTreeMap<&AgentId, usize> =
            self.agents.keys().map(|id| (id, 0)).collect();
        for (_, to) in &self.edges {
            *indegree.get_mut(to).expect("edge endpoint exists") += 1;
        }
        let mut ready: BTreeSet<&AgentId> =
            indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
        let mut order = Vec::with_capacity(self.agents.len());
        while let Some(next) = ready.pop_first() {
            order.push(next.clone());
            for child in self.children(next) {
                let d = indegree.get_mut(child).expect("child exists");
                *d -= 1;
                if *d == 0 {
                    ready.insert(child);
                }
            }
        }
        if order.len() != self.agents.len() {
            return Err(TopologyError::CycleDetected);
        }
        Ok(order)
    }

    /// Every edge flipped. The agent set and the root field are unchanged, so
    /// `g.reverse().reverse() == g`.
    pub fn reverse(&self) -> Self {
        Self {
            agents: self.agents.clone(),
            edges: self.edges.iter().map(|(f, t)| (t.clone(), f.clone())).collect(),
            root: self.root.clone(),
        }
    }

    /// Checks acyclicity, weak connectivity and that the root is a source.
    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.agents.is_empty() {
            return Err(TopologyError::Empty);
        }
        self.topological_order()?;
        if !self.parents(&self.root).is_empty() {
            return Err(TopologyError::RootNotSource(self.root.clone()));
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([&self.root]);
        while let Some(cur) = queue.pop_front() {
            if !seen.insert(cur) {
                continue;
            }
            queue.extend(self.children(cur));
            queue.extend(self.parents(cur));
        }
        if let Some(missing) = self.agents.keys().find(|id| !seen.contains(id)) {
            return Err(TopologyError::Disconnected(missing.clone()));
        }
        Ok(())
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            agents: self.agents.values().cloned().collect(),
            edges: self
                .edges
                .iter()
                .map(|(from, to)| EdgeSpec { from: from.clone(), to: to.clone() })
                .collect(),
            root: Some(self.root.clone()),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    agents: BTreeMap<AgentId, Agent>,
    edges: Vec<(AgentId, AgentId)>,
    root: Option<AgentId>,
}

impl GraphBuilder {
    pub fn agent(mut self, agent: Agent) -> Result<Self, TopologyError> {
        if self.agents.contains_key(&agent.id) {
            return Err(TopologyError::DuplicateAgent(agent.id));
        }
        self.agents.insert(agent.id.clone(), agent);
        Ok(self)
    }

    pub fn edge(mut self, from: AgentId, to: AgentId) -> Result<Self, TopologyError> {
        self.edges.push((from, to));
        Ok(self)
    }

    pub fn root(mut self, root: AgentId) -> Self {
        self.root = Some(root);
        self
    }

    /// Inserts edges one at a time (each checked for cycles), resolves the
    /// root and validates the result.
    pub fn build(self) -> Result<AgentGraph, TopologyError> {
        let first = self.agents.keys().next().cloned().ok_or(TopologyError::Empty)?;
        let mut graph =
            AgentGraph { agents: self.agents, edges: BTreeSet::new(), root: first };
        for (from, to) in self.edges {
            graph.insert_edge(from, to)?;
        }
        graph.root = match self.root {
            Some(root) => {
                if !graph.contains(&root) {
                    return Err(TopologyError::UnknownAgent(root));
                }
                root
            }
            None => {
                let sources = graph.sources();
                match sources.as_slice() {
                    [only] => (*only).clone(),
                    _ => {
                        let names: Vec<&str> = sources.iter().map(|s| s.as_str()).collect();
                        return Err(TopologyError::AmbiguousRoot(names.join(", ")));
                    }
                }
            }
        };
        graph.validate()?;
        Ok(graph)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: AgentId,
    pub to: AgentId,
}

/// On-disk graph declaration.
///
/// ```json
/// {
///   "agents": [{"id": "coder", "role": "...", "base_prompt": "..."}],
///   "edges": [{"from": "planner", "to": "coder"}],
///   "root": "planner"
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub agents: Vec<Agent>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub root: Option<AgentId>,
}

impl GraphDocument {
    pub fn into_graph(self) -> Result<AgentGraph, TopologyError> {
        let mut b = GraphBuilder::default();
        for agent in self.agents {
            b = b.agent(agent)?;
        }
        for e in self.edges {
            b = b.edge(e.from, e.to)?;
        }
        if let Some(root) = self.root {
            b = b.root(root);
        }
        b.build()
    }
}
