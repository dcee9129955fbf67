#![allow(dead_code)]

use std::collections::BTreeMap;

use mapro_core::harness::gateway::AuditLog;
use mapro_core::harness::{MockRule, RunSettings, Task, TaskBatch, Verifier};
use mapro_core::orchestrator::{base_prompts, initialize, Components, OptimizationState};
use mapro_core::topology::{aid, Agent, AgentGraph, AgentId};

/// A mock world whose unique passing assignment is known in advance.
pub struct Planted {
    pub graph: AgentGraph,
    pub targets: BTreeMap<AgentId, String>,
    pub tasks: TaskBatch,
    pub settings: RunSettings,
}

impl Planted {
    pub fn components(&self) -> Components {
        Components::from_settings(&self.settings, AuditLog::in_memory()).unwrap()
    }

    pub async fn init(&self) -> OptimizationState {
        initialize(
            &self.graph,
            &base_prompts(&self.graph),
            self.tasks.clone(),
            self.settings.k,
            self.settings.seed,
            &self.components(),
        )
        .await
        .unwrap()
    }
}

pub fn base_prompt(id: &str) -> String {
    format!("You are the {id} agent. Read the input carefully. Produce a short answer.")
}

pub fn target_prompt(id: &str) -> String {
    format!("{} Always cite the {id} checklist.", base_prompt(id))
}

pub fn tasks(n: usize) -> TaskBatch {
    TaskBatch::new(
        (0..n)
            .map(|i| Task {
                id: format!("t{i:02}"),
                input: format!("Problem number {i}."),
                verifier: Verifier::Exact("PASS".into()),
            })
            .collect(),
    )
    .unwrap()
}

/// Each agent passes only with its target prompt: the base prompt plus one
/// agent-specific sentence.
pub fn planted(ids: &[&str], edges: &[(&str, &str)], root: Option<&str>, seed: u64) -> Planted {
    let mut b = AgentGraph::builder();
    for id in ids {
        let mut a = Agent::new(aid(id));
        a.role = format!("{id} role");
        a.base_prompt = base_prompt(id);
        b = b.agent(a).unwrap();
    }
    for (f, t) in edges {
        b = b.edge(aid(f), aid(t)).unwrap();
    }
    if let Some(r) = root {
        b = b.root(aid(r));
    }
    let graph = b.build().unwrap();
    let targets: BTreeMap<AgentId, String> = ids.iter().map(|id| (aid(id), target_prompt(id))).collect();
    let mut settings = RunSettings { k: 4, seed, ..RunSettings::default() };
    settings.mock.targets = targets.clone();
    settings.mock.rules = targets.iter().map(|(a, t)| (a.clone(), MockRule::Exact(t.clone()))).collect();
    Planted { graph, targets, tasks: tasks(4), settings }
}

pub fn planted_chain(seed: u64) -> Planted {
    planted(&["a", "b", "c"], &[("a", "b"), ("b", "c")], None, seed)
}

pub fn planted_diamond(seed: u64) -> Planted {
    planted(&["a", "b", "c", "d"], &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")], None, seed)
}
