use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Assignment;
use crate::topology::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Tree,
    JunctionTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageDirection {
    /// Leaf-to-root pass; carries the witnesses used for decoding.
    Up,
    /// Root-to-leaf pass producing max-marginals.
    Down,
}

/// One max-product message.
///
/// `log_table[x] + log_offset` is the true log value for receiver-side
/// configuration `x` over `scope`; the table itself is shifted so its maximum
/// is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub from: String,
    pub to: String,
    pub direction: MessageDirection,
    pub scope: Vec<AgentId>,
    pub log_table: Vec<f64>,
    pub log_offset: f64,
    /// Variables the witnesses range over (the sender's side).
    pub witness_scope: Vec<AgentId>,
    /// For each entry of `log_table`, the maximizing 0-based positions of
    /// `witness_scope`.
    pub witnesses: Vec<Vec<usize>>,
    /// Number of (sender, receiver) configuration pairs evaluated.
    pub work: u64,
}

impl MessageRecord {
    pub fn log_value(&self, entry: usize) -> f64 {
        self.log_table[entry] + self.log_offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueSummary {
    pub label: String,
    pub members: Vec<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub method: SolveMethod,
    /// Root agent, or root clique label for junction trees.
    pub root: String,
    pub messages: Vec<MessageRecord>,
    /// Max-marginal log beliefs per agent and candidate position.
    pub beliefs: BTreeMap<AgentId, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cliques: Vec<CliqueSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treewidth: Option<usize>,
    pub assignment: Assignment,
}

/// Number of messages exchanged during the solve.
pub fn message_count(trace: &SolveTrace) -> usize {
    trace.messages.len()
}

impl SolveTrace {
    pub fn total_work(&self) -> u64 {
        self.messages.iter().map(|m| m.work).sum()
    }
}

fn fmt_table(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

impl fmt::Display for SolveTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let method = match self.method {
            SolveMethod::Tree => "tree max-product",
            SolveMethod::JunctionTree => "junction-tree max-product",
        };
        writeln!(f, "method: {method}")?;
        writeln!(f, "root:   {}", self.root)?;
        if let Some(w) = self.treewidth {
            writeln!(f, "treewidth: {w}")?;
        }
        for c in &self.cliques {
            let m: Vec<&str> = c.members.iter().map(AgentId::as_str).collect();
            writeln!(f, "  clique {} = {{{}}}", c.label, m.join(", "))?;
        }
        writeln!(f, "messages ({}):", self.messages.len())?;
        for m in &self.messages {
            let dir = match m.direction {
                MessageDirection::Up => "up  ",
                MessageDirection::Down => "down",
            };
            let scope: Vec<&str> = m.scope.iter().map(AgentId::as_str).collect();
            writeln!(
                f,
                "  {dir} {} -> {} over ({}) offset {:.4} table {} work {}",
                m.from,
                m.to,
                scope.join(", "),
                m.log_offset,
                fmt_table(&m.log_table),
                m.work
            )?;
            if m.direction == MessageDirection::Up {
                let w: Vec<String> = m
                    .witnesses
                    .iter()
                    .map(|w| {
                        let ks: Vec<String> = w.iter().map(|p| (p + 1).to_string()).collect();
                        ks.join("/")
                    })
                    .collect();
                writeln!(f, "       witnesses [{}]", w.join(", "))?;
            }
        }
        writeln!(f, "max-marginal beliefs (log):")?;
        for (id, b) in &self.beliefs {
            writeln!(f, "  {id}: {}", fmt_table(b))?;
        }
        writeln!(f, "assignment (score {:.6}):", self.assignment.score.value())?;
        for (id, k) in &self.assignment.choices {
            writeln!(f, "  {id} = candidate {k}")?;
        }
        Ok(())
    }
}
