use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::topology::{AgentId, TopologyError};

/// Per-side exemplar cap for preference pools.
pub const DEMO_CAPACITY: usize = 3;

/// Preference pools are kept per agent and per hand-off edge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DemoKey {
    Agent(AgentId),
    Edge(AgentId, AgentId),
}

impl fmt::Display for DemoKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DemoKey::Agent(a) => write!(f, "{a}"),
            DemoKey::Edge(a, b) => write!(f, "{a}->{b}"),
        }
    }
}

impl FromStr for DemoKey {
    type Err = TopologyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once("->") {
            Some((a, b)) => Ok(DemoKey::Edge(AgentId::new(a)?, AgentId::new(b)?)),
            None => Ok(DemoKey::Agent(AgentId::new(s)?)),
        }
    }
}

impl TryFrom<String> for DemoKey {
    type Error = TopologyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DemoKey> for String {
    fn from(k: DemoKey) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub prompt: String,
    pub response: String,
    /// Seeded from a base prompt without a successful trace.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub provisional: bool,
}

impl Exemplar {
    pub fn new(prompt: impl Into<String>, response: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), response: response.into(), provisional: false }
    }
}

/// Accepted / rejected demonstrations with FIFO eviction at
/// [`DEMO_CAPACITY`] per side. The two sides never share a prompt text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePool {
    pub key: DemoKey,
    accepted: VecDeque<Exemplar>,
    rejected: VecDeque<Exemplar>,
}

impl PreferencePool {
    pub fn new(key: DemoKey) -> Self {
        Self { key, accepted: VecDeque::new(), rejected: VecDeque::new() }
    }

    pub fn accepted(&self) -> impl Iterator<Item = &Exemplar> {
        self.accepted.iter()
    }

    pub fn rejected(&self) -> impl Iterator<Item = &Exemplar> {
        self.rejected.iter()
    }

    pub fn accepted_len(&self) -> usize {
        self.accepted.len()
    }

    pub fn rejected_len(&self) -> usize {
        self.rejected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty() && self.rejected.is_empty()
    }

    pub fn push_accepted(&mut self, ex: Exemplar) {
        Self::push(&mut self.accepted, &mut self.rejected, ex);
    }

    pub fn push_rejected(&mut self, ex: Exemplar) {
        Self::push(&mut self.rejected, &mut self.accepted, ex);
    }

    fn push(side: &mut VecDeque<Exemplar>, other: &mut VecDeque<Exemplar>, ex: Exemplar) {
        other.retain(|e| e.prompt != ex.prompt);
        if let Some(existing) = side.iter_mut().find(|e| e.prompt == ex.prompt) {
            // refresh the response but keep position; a real trace also
            // clears the provisional flag
            existing.response = ex.response;
            existing.provisional &= ex.provisional;
            return;
        }
        side.push_back(ex);
        while side.len() > DEMO_CAPACITY {
            side.pop_front();
        }
    }

    /// Text substituted for `{demo}` in the reward prompts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = |label: &str, items: &VecDeque<Exemplar>| {
            for (i, ex) in items.iter().enumerate() {
                out.push_str(&format!(
                    "[{label} {}]\nPrompt: {}\nResponse: {}\n",
                    i + 1,
                    ex.prompt,
                    ex.response
                ));
            }
        };
        section("ACCEPTED", &self.accepted);
        section("REJECTED", &self.rejected);
        if out.is_empty() {
            out.push_str("(none)\n");
        }
        out.pop();
        out
    }
}

/// Most recent input / desirable output observed for an agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedIO {
    pub agent: Option<AgentId>,
    pub input: String,
    pub output: String,
}
