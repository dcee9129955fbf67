use std::collections::BTreeMap;

use futures::future::{join_all, try_join_all};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BestRecord, Components, OptimizationState, OrchestratorError, TrajectoryRecord, SNAPSHOT_VERSION};
use crate::harness::{execute_assignment, AgentCall, CallMode, TaskBatch, TranscriptEntry, Verdict};
use crate::inference::{message_count, solve, Assignment, SolveTrace};
use crate::refinement::{
    collect_global_feedback, collect_local_feedback, mutate_pool, should_terminate, update_demos,
    update_preferences, DemoCandidate, GlobalFeedback, RefinementError, TerminationPolicy,
};
use crate::scoring::{
    score_edges, score_nodes, DemoKey, EdgeScoreTable, Exemplar, ExpectedIO, NodeScoreTable, PreferencePool,
    Score, ScoreTables, DEMO_CAPACITY,
};
use crate::topology::{AgentGraph, AgentId, PromptPool};

/// Random assignments tried when bootstrapping demonstrations.
pub const BOOTSTRAP_DRAWS: usize = 3;

const SYNTHETIC_RESPONSE: &str = "(synthetic negative)";

fn edge_pair_text(upstream: &str, downstream: &str) -> String {
    format!("Upstream prompt: {upstream}\nDownstream prompt: {downstream}")
}

fn demo_pool(demos: &BTreeMap<DemoKey, PreferencePool>, key: DemoKey) -> PreferencePool {
    demos.get(&key).cloned().unwrap_or_else(|| PreferencePool::new(key))
}

async fn run_batch(
    c: &Components,
    graph: &AgentGraph,
    assignment: &Assignment,
    pools: &BTreeMap<AgentId, PromptPool>,
    tasks: &TaskBatch,
) -> Vec<Verdict> {
    // join_all keeps input order, which is ascending task id
    join_all(
        tasks
            .tasks()
            .iter()
            .map(|t| execute_assignment(c.executor.as_ref(), graph, assignment, pools, t)),
    )
    .await
}

/// First transcript entry for `agent`, preferring verdicts matching `prefer`.
fn pick_entry<'a>(
    verdicts: impl Iterator<Item = &'a Verdict> + Clone,
    agent: &AgentId,
    prefer: impl Fn(&Verdict) -> bool,
) -> Option<&'a TranscriptEntry> {
    let find = |v: &'a Verdict| v.transcript.iter().find(|e| &e.agent == agent);
    verdicts.clone().filter(|v| prefer(v)).find_map(find).or_else(|| verdicts.clone().find_map(find))
}

/// Base prompts as declared on the graph's agents.
pub fn base_prompts(graph: &AgentGraph) -> BTreeMap<AgentId, String> {
    graph.agents().map(|a| (a.id.clone(), a.base_prompt.clone())).collect()
}

/// Builds the initial state: `K` candidates per agent (base prompt first)
/// and demonstration pools bootstrapped from random draws over the batch.
pub async fn initialize(
    graph: &AgentGraph,
    base_prompts: &BTreeMap<AgentId, String>,
    tasks: TaskBatch,
    k: usize,
    seed: u64,
    c: &Components,
) -> Result<OptimizationState, OrchestratorError> {
    graph.validate()?;
    if k < 2 {
        return Err(OrchestratorError::Precondition(format!("pool size must be at least 2, got {k}")));
    }
    let ids: Vec<AgentId> = graph.agent_ids().cloned().collect();
    for id in &ids {
        if base_prompts.get(id).is_none_or(|p| p.trim().is_empty()) {
            return Err(OrchestratorError::Precondition(format!("no base prompt for `{id}`")));
        }
    }

    let variants = try_join_all(ids.iter().map(|id| c.judge.vary(&base_prompts[id], k - 1))).await?;
    let mut pools = BTreeMap::new();
    for (id, vs) in ids.iter().zip(variants) {
        if vs.len() != k - 1 {
            return Err(RefinementError::VariantCountMismatch { expected: k - 1, got: vs.len() }.into());
        }
        let entries = std::iter::once(base_prompts[id].clone()).chain(vs).map(|t| (t, None));
        pools.insert(id.clone(), PromptPool::new(id.clone(), k, entries)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<(Assignment, Vec<Verdict>)> = Vec::with_capacity(BOOTSTRAP_DRAWS);
    for _ in 0..BOOTSTRAP_DRAWS {
        let choices: BTreeMap<AgentId, usize> = ids.iter().map(|id| (id.clone(), rng.random_range(1..=k))).collect();
        let assignment = Assignment { choices, score: Score::ONE, log_score: 0.0 };
        let verdicts = run_batch(c, graph, &assignment, &pools, &tasks).await;
        draws.push((assignment, verdicts));
    }

    let text = |id: &AgentId, k: usize| pools[id].get(k).map(|c| c.text.clone()).unwrap_or_default();
    let mut demos: BTreeMap<DemoKey, PreferencePool> = BTreeMap::new();
    for id in &ids {
        demos.insert(DemoKey::Agent(id.clone()), PreferencePool::new(DemoKey::Agent(id.clone())));
    }
    for (a, b) in graph.edges() {
        let key = DemoKey::Edge(a.clone(), b.clone());
        demos.insert(key.clone(), PreferencePool::new(key));
    }

    let all_verdicts = draws.iter().flat_map(|(_, v)| v.iter());
    let mut expected_io = BTreeMap::new();
    for id in &ids {
        let io = match pick_entry(all_verdicts.clone(), id, |v| v.passed) {
            Some(e) => ExpectedIO { agent: Some(id.clone()), input: e.input.clone(), output: e.output.clone() },
            None => ExpectedIO {
                agent: Some(id.clone()),
                input: if graph.parents(id).is_empty() { tasks.tasks()[0].input.clone() } else { String::new() },
                output: String::new(),
            },
        };
        expected_io.insert(id.clone(), io);
    }

    let mut warnings = Vec::new();
    let mut any_success = false;
    for (assignment, verdicts) in &draws {
        for v in verdicts.iter().filter(|v| v.passed) {
            any_success = true;
            let out: BTreeMap<&AgentId, &str> = v.transcript.iter().map(|e| (&e.agent, e.output.as_str())).collect();
            for id in &ids {
                let p = text(id, assignment.choices[id]);
                let r = out.get(id).copied().unwrap_or_default();
                demos.get_mut(&DemoKey::Agent(id.clone())).expect("seeded").push_accepted(Exemplar::new(p, r));
            }
            for (a, b) in graph.edges() {
                let p = edge_pair_text(&text(a, assignment.choices[a]), &text(b, assignment.choices[b]));
                let r = out.get(a).copied().unwrap_or_default();
                demos
                    .get_mut(&DemoKey::Edge(a.clone(), b.clone()))
                    .expect("seeded")
                    .push_accepted(Exemplar::new(p, r));
            }
        }
    }
    if !any_success {
        let msg = "no bootstrap draw solved any task; seeding positives with provisional base prompts".to_string();
        tracing::warn!("{msg}");
        warnings.push(msg);
        for id in &ids {
            let mut ex = Exemplar::new(base_prompts[id].clone(), expected_io[id].output.clone());
            ex.provisional = true;
            demos.get_mut(&DemoKey::Agent(id.clone())).expect("seeded").push_accepted(ex);
        }
        for (a, b) in graph.edges() {
            let mut ex = Exemplar::new(edge_pair_text(&base_prompts[a], &base_prompts[b]), expected_io[a].output.clone());
            ex.provisional = true;
            demos.get_mut(&DemoKey::Edge(a.clone(), b.clone())).expect("seeded").push_accepted(ex);
        }
    }

    let goods: Vec<Vec<String>> = ids
        .iter()
        .map(|id| demos[&DemoKey::Agent(id.clone())].accepted().map(|e| e.prompt.clone()).collect())
        .collect();
    let negatives =
        try_join_all(ids.iter().zip(&goods).map(|(_, g)| c.judge.negative_variants(g, DEMO_CAPACITY))).await?;
    let negatives: BTreeMap<&AgentId, Vec<String>> = ids.iter().zip(negatives).collect();
    for id in &ids {
        let pool = demos.get_mut(&DemoKey::Agent(id.clone())).expect("seeded");
        for n in &negatives[id] {
            if !pool.accepted().any(|e| &e.prompt == n) {
                pool.push_rejected(Exemplar::new(n.clone(), SYNTHETIC_RESPONSE));
            }
        }
    }
    for (a, b) in graph.edges() {
        let good_down = demos[&DemoKey::Agent(b.clone())]
            .accepted()
            .next()
            .map(|e| e.prompt.clone())
            .unwrap_or_else(|| base_prompts[b].clone());
        let pool = demos.get_mut(&DemoKey::Edge(a.clone(), b.clone())).expect("seeded");
        for n in &negatives[a] {
            pool.push_rejected(Exemplar::new(edge_pair_text(n, &good_down), SYNTHETIC_RESPONSE));
        }
    }

    Ok(OptimizationState {
        schema_version: SNAPSHOT_VERSION,
        iteration: 0,
        k,
        seed,
        graph: graph.to_document(),
        tasks,
        pools,
        demos,
        expected_io,
        history: Vec::new(),
        best: None,
        frozen: false,
        trajectory: Vec::new(),
        warnings,
    })
}

/// Everything one iteration produced besides the new state.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub state: OptimizationState,
    pub tables: ScoreTables,
    pub trace: SolveTrace,
    pub verdicts: Vec<Verdict>,
    pub global: GlobalFeedback,
}

/// One full cycle on a copy of `state`; on error the caller's state is
/// untouched.
pub async fn run_iteration(state: &OptimizationState, c: &Components) -> Result<IterationOutcome, OrchestratorError> {
    if state.frozen {
        return Err(OrchestratorError::Frozen);
    }
    let graph = state.agent_graph()?;
    let mut next = state.clone();
    let ids: Vec<AgentId> = graph.agent_ids().cloned().collect();
    let role = |id: &AgentId| graph.agent(id).map(|a| a.role.clone()).unwrap_or_default();

    // Probe every candidate on the agent's recorded input.
    let probe_calls: Vec<AgentCall> = ids
        .iter()
        .flat_map(|id| {
            let input = state.expected_io.get(id).map(|io| io.input.clone()).unwrap_or_default();
            let role = role(id);
            state.pools[id].candidates().iter().map(move |cand| AgentCall {
                agent: id.clone(),
                role: role.clone(),
                prompt: cand.text.clone(),
                input: input.clone(),
                task: None,
                mode: CallMode::Probe,
            })
        })
        .collect();
    let probe_out = join_all(probe_calls.iter().map(|call| c.executor.run_agent(call))).await;
    let mut probes: BTreeMap<AgentId, Vec<String>> = BTreeMap::new();
    for (call, out) in probe_calls.iter().zip(probe_out) {
        let text = out.unwrap_or_else(|e| format!("(probe failed: {e})"));
        probes.entry(call.agent.clone()).or_default().push(text);
    }

    // Reward tables.
    let empty_io = ExpectedIO::default();
    let node_scores = try_join_all(ids.iter().map(|id| {
        let demos = demo_pool(&state.demos, DemoKey::Agent(id.clone()));
        let io = state.expected_io.get(id).unwrap_or(&empty_io);
        let role = role(id);
        let pool = &state.pools[id];
        async move { score_nodes(c.scorer.as_ref(), &role, pool, io, &demos).await }
    }))
    .await?;
    let edge_list: Vec<(AgentId, AgentId)> = graph.edges().cloned().collect();
    let edge_scores = try_join_all(edge_list.iter().map(|(a, b)| {
        let demos = demo_pool(&state.demos, DemoKey::Edge(a.clone(), b.clone()));
        let role = role(b);
        let ups = &probes[a];
        let pool = &state.pools[b];
        async move { score_edges(c.scorer.as_ref(), (a, b), ups, &role, pool, &demos).await }
    }))
    .await?;
    let mut nodes = NodeScoreTable::new();
    for (id, s) in ids.iter().zip(&node_scores) {
        nodes.insert(id.clone(), s.clone());
    }
    let mut edges = EdgeScoreTable::new();
    for ((a, b), m) in edge_list.iter().zip(edge_scores) {
        edges.insert(a.clone(), b.clone(), m);
    }

    // MAP selection and batch execution.
    let solution = solve(&graph, &nodes, &edges)?;
    let assignment = solution.assignment.clone();
    let verdicts = run_batch(c, &graph, &assignment, &state.pools, &state.tasks).await;
    let passed = verdicts.iter().filter(|v| v.passed).count();
    let pass_rate = passed as f64 / verdicts.len() as f64;

    for id in &ids {
        if let Some(e) = pick_entry(verdicts.iter(), id, |v| v.passed) {
            next.expected_io.insert(
                id.clone(),
                ExpectedIO { agent: Some(id.clone()), input: e.input.clone(), output: e.output.clone() },
            );
        }
    }

    let chosen: BTreeMap<AgentId, _> = ids
        .iter()
        .map(|id| (id.clone(), state.pools[id].get(assignment.choices[id]).expect("choice in pool").clone()))
        .collect();
    if next.best.as_ref().is_none_or(|b| pass_rate > b.pass_rate) {
        next.best = Some(BestRecord {
            assignment: assignment.clone(),
            pass_rate,
            iteration: state.iteration,
            prompts: chosen.clone(),
        });
    }

    // Demonstration refresh.
    let judge = c.judge.as_ref();
    let node_demos = try_join_all(ids.iter().zip(&node_scores).map(|(id, scores)| {
        let demos = demo_pool(&state.demos, DemoKey::Agent(id.clone()));
        let pool = &state.pools[id];
        let responses = &probes[id];
        async move { update_preferences(judge, pool, scores, responses, &demos).await }
    }))
    .await?;
    for (id, d) in ids.iter().zip(node_demos) {
        next.demos.insert(DemoKey::Agent(id.clone()), d);
    }
    for (a, b) in &edge_list {
        let (ka, kb) = (assignment.choices[a], assignment.choices[b]);
        let key = DemoKey::Edge(a.clone(), b.clone());
        let item = DemoCandidate {
            prompt: edge_pair_text(&chosen[a].text, &chosen[b].text),
            response: probes[a][ka - 1].clone(),
            score: edges.get(a, b, ka - 1, kb - 1).expect("complete table"),
        };
        let updated = update_demos(judge, &demo_pool(&state.demos, key.clone()), &[item]).await?;
        next.demos.insert(key, updated);
    }

    // Feedback.
    let errors: Vec<String> = verdicts.iter().filter_map(Verdict::error_text).collect();
    let global = collect_global_feedback(judge, &errors).await?;
    let local = if errors.is_empty() {
        BTreeMap::new()
    } else {
        let transcripts: BTreeMap<AgentId, TranscriptEntry> = ids
            .iter()
            .map(|id| {
                let entry = pick_entry(verdicts.iter(), id, |v| !v.passed).cloned().unwrap_or_else(|| TranscriptEntry {
                    agent: id.clone(),
                    prompt: chosen[id].text.clone(),
                    input: state.expected_io.get(id).map(|io| io.input.clone()).unwrap_or_default(),
                    output: String::new(),
                });
                (id.clone(), entry)
            })
            .collect();
        collect_local_feedback(judge, &graph, &global, &transcripts).await?
    };

    // Mutation.
    let generation = state.iteration + 1;
    let new_pools = try_join_all(
        ids.iter()
            .map(|id| mutate_pool(judge, &chosen[id], &global, local.get(id), state.k - 1, generation)),
    )
    .await?;
    for (id, p) in ids.iter().zip(new_pools) {
        next.pools.insert(id.clone(), p);
    }

    next.history.push(pass_rate);
    next.trajectory.push(TrajectoryRecord {
        iteration: state.iteration,
        pass_rate,
        best_pass_rate: next.best.as_ref().map(|b| b.pass_rate).unwrap_or(pass_rate),
        joint_score: assignment.score.value(),
        chosen: assignment.choices.clone(),
        method: solution.trace.method,
        message_count: message_count(&solution.trace),
        passed,
        tasks: verdicts.len(),
    });
    next.iteration += 1;
    tracing::info!(iteration = state.iteration, pass_rate, "iteration complete");

    Ok(IterationOutcome { state: next, tables: ScoreTables { nodes, edges }, trace: solution.trace, verdicts, global })
}

/// Iterates until the stopping rule fires or `max_iterations` iterations
/// have completed in total, then freezes the state.
pub async fn run_loop(
    state: OptimizationState,
    c: &Components,
    policy: &TerminationPolicy,
    max_iterations: usize,
) -> Result<OptimizationState, OrchestratorError> {
    run_loop_observed(state, c, policy, max_iterations, |_| {}).await
}

/// [`run_loop`] that reports every completed iteration to `observe`.
pub async fn run_loop_observed(
    state: OptimizationState,
    c: &Components,
    policy: &TerminationPolicy,
    max_iterations: usize,
    mut observe: impl FnMut(&IterationOutcome),
) -> Result<OptimizationState, OrchestratorError> {
    policy.validate()?;
    if max_iterations == 0 {
        return Err(OrchestratorError::Precondition("max_iterations must be at least 1".into()));
    }
    if state.frozen {
        return Err(OrchestratorError::Frozen);
    }
    let mut s = state;
    while s.iteration < max_iterations && !should_terminate(&s.history, policy) {
        let out = run_iteration(&s, c).await?;
        observe(&out);
        s = out.state;
    }
    s.freeze();
    Ok(s)
}
