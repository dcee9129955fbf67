mod common;

use std::collections::BTreeMap;

use async_trait::async_trait;
use common::{planted_chain, planted_diamond};
use mapro_core::harness::{
    execute_assignment, render_report, AgentCall, Executor, ExecutorError, MockExecutor,
};
use mapro_core::inference::Assignment;
use mapro_core::orchestrator::{
    base_prompts, initialize, restore, run_iteration, run_loop, snapshot, Components, OrchestratorError,
};
use mapro_core::refinement::{should_terminate, MockJudge, TerminationPolicy};
use mapro_core::scoring::mock::MockScorer;
use mapro_core::scoring::{DemoKey, Score};
use mapro_core::topology::AgentId;

fn policy() -> TerminationPolicy {
    TerminationPolicy::new(3, 0.0).unwrap()
}

#[tokio::test]
async fn planted_chain_reaches_target_prompts() {
    let p = planted_chain(7);
    let c = p.components();
    let state = run_loop(p.init().await, &c, &policy(), 10).await.unwrap();
    let best = state.best.as_ref().unwrap();
    assert_eq!(best.pass_rate, 1.0);
    let finals: BTreeMap<AgentId, String> = state.final_prompts();
    assert_eq!(finals, p.targets);
    assert!(state.frozen);
}

#[tokio::test]
async fn planted_assignment_is_the_only_passing_one_in_final_pools() {
    let p = planted_diamond(3);
    let c = p.components();
    let state = run_loop(p.init().await, &c, &policy(), 10).await.unwrap();
    let graph = state.agent_graph().unwrap();
    let ids: Vec<AgentId> = graph.agent_ids().cloned().collect();
    let task = &state.tasks.tasks()[0];
    let mut digits = vec![1usize; ids.len()];
    let mut passing = Vec::new();
    loop {
        let choices: BTreeMap<AgentId, usize> = ids.iter().cloned().zip(digits.iter().copied()).collect();
        let a = Assignment { choices: choices.clone(), score: Score::ONE, log_score: 0.0 };
        if execute_assignment(c.executor.as_ref(), &graph, &a, &state.pools, task).await.passed {
            passing.push(choices);
        }
        let mut i = ids.len();
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            if digits[i] < state.k {
                digits[i] += 1;
                break;
            }
            digits[i] = 1;
        }
        if digits.iter().all(|d| *d == 1) {
            break;
        }
    }
    assert_eq!(passing.len(), 1, "{passing:?}");
    for (id, k) in &passing[0] {
        assert_eq!(state.pools[id].get(*k).unwrap().text, p.targets[id]);
    }
}

#[tokio::test]
async fn same_seed_gives_identical_snapshots() {
    let run = || async {
        let p = planted_diamond(11);
        let c = p.components();
        snapshot(&run_loop(p.init().await, &c, &policy(), 4).await.unwrap())
    };
    assert_eq!(run().await, run().await);
}

#[tokio::test]
async fn resume_from_snapshot_matches_uninterrupted_run() {
    let p = planted_chain(5);
    let c = p.components();
    let mut straight = p.init().await;
    for _ in 0..4 {
        straight = run_iteration(&straight, &c).await.unwrap().state;
    }

    let mut first = p.init().await;
    for _ in 0..2 {
        first = run_iteration(&first, &c).await.unwrap().state;
    }
    let doc = snapshot(&first);
    // fresh components: no scorer cache carried over
    let c2 = p.components();
    let mut resumed = restore(&doc).unwrap();
    for _ in 0..2 {
        resumed = run_iteration(&resumed, &c2).await.unwrap().state;
    }
    assert_eq!(snapshot(&resumed), snapshot(&straight));
}

#[tokio::test]
async fn restore_rejects_other_versions() {
    let p = planted_chain(1);
    let doc = snapshot(&p.init().await);
    let bumped = doc.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert!(matches!(restore(&bumped), Err(OrchestratorError::SchemaMismatch(_))));
    assert!(matches!(restore("{}"), Err(OrchestratorError::SchemaMismatch(_))));
}

#[tokio::test]
async fn frozen_state_refuses_iterations() {
    let p = planted_chain(2);
    let c = p.components();
    let state = run_loop(p.init().await, &c, &policy(), 2).await.unwrap();
    assert!(state.frozen);
    assert_eq!(run_iteration(&state, &c).await.unwrap_err(), OrchestratorError::Frozen);
    assert!(matches!(run_loop(state, &c, &policy(), 5).await, Err(OrchestratorError::Frozen)));
}

#[tokio::test]
async fn single_iteration_cap() {
    let p = planted_chain(9);
    let c = p.components();
    let state = run_loop(p.init().await, &c, &policy(), 1).await.unwrap();
    assert_eq!(state.iteration, 1);
    assert_eq!(state.history.len(), 1);
    assert!(render_report(&state).is_ok());
}

#[tokio::test]
async fn loop_stops_exactly_when_rule_first_fires() {
    let p = planted_diamond(4);
    let c = p.components();
    let pol = policy();
    let state = run_loop(p.init().await, &c, &pol, 10).await.unwrap();
    let h = &state.history;
    assert!(h.len() < 10, "planted run should plateau: {h:?}");
    assert!(should_terminate(h, &pol));
    assert!(!should_terminate(&h[..h.len() - 1], &pol));
}

struct Broken;

#[async_trait]
impl Executor for Broken {
    fn id(&self) -> String {
        "broken".into()
    }

    async fn run_agent(&self, _call: &AgentCall) -> Result<String, ExecutorError> {
        Err(ExecutorError::Failed("exit status 1".into()))
    }
}

#[tokio::test]
async fn bootstrap_without_successes_uses_provisional_demos() {
    let p = planted_chain(0);
    let c = Components::new(
        MockScorer::with_targets(p.targets.clone()),
        Broken,
        MockJudge::default(),
    );
    let state = initialize(&p.graph, &base_prompts(&p.graph), p.tasks.clone(), 3, 0, &c).await.unwrap();
    assert_eq!(state.warnings.len(), 1);
    for id in p.graph.agent_ids() {
        let pool = &state.demos[&DemoKey::Agent(id.clone())];
        let first = pool.accepted().next().unwrap();
        assert!(first.provisional);
        assert_eq!(first.prompt, p.graph.agent(id).unwrap().base_prompt);
        assert!(pool.rejected_len() > 0);
    }
    let out = run_iteration(&state, &c).await.unwrap();
    assert_eq!(out.state.history, vec![0.0]);
    assert!(out.verdicts.iter().all(|v| !v.passed && v.error.is_some()));
}

#[tokio::test]
async fn initialize_validates_inputs() {
    let p = planted_chain(0);
    let c = Components::new(MockScorer::default(), MockExecutor::default(), MockJudge::default());
    let err = initialize(&p.graph, &base_prompts(&p.graph), p.tasks.clone(), 1, 0, &c).await.unwrap_err();
    assert!(matches!(err, OrchestratorError::Precondition(_)));
    let mut prompts = base_prompts(&p.graph);
    prompts.remove(&mapro_core::topology::aid("b"));
    let err = initialize(&p.graph, &prompts, p.tasks.clone(), 3, 0, &c).await.unwrap_err();
    assert!(matches!(err, OrchestratorError::Precondition(_)));
}

#[tokio::test]
async fn report_lists_edits_and_trajectory() {
    let p = planted_chain(7);
    let c = p.components();
    let state = run_loop(p.init().await, &c, &policy(), 10).await.unwrap();
    let r = render_report(&state).unwrap();
    assert_eq!(r.trajectory_jsonl.lines().count(), state.iteration);
    let finals: BTreeMap<String, String> = serde_json::from_str(&r.final_prompts_json).unwrap();
    assert_eq!(finals.len(), 3);
    assert!(r.summary_md.contains("Adding"));
    assert!(r.summary_md.contains("Always cite the a checklist."));
    let dir = tempfile::tempdir().unwrap();
    let written = mapro_core::harness::write_report(&r, dir.path()).unwrap();
    assert_eq!(written.len(), 3);
    assert!(written.iter().all(|p| p.is_file()));
}
