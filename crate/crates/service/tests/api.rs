use std::collections::BTreeMap;
use std::time::Duration;

use mapro_client::api::{JobState, OptimizeRequest, RunSpec, SolveRequest};
use mapro_client::{ClientError, MaproClient};
use mapro_core::harness::{MockRule, RunSettings, Task, Verifier};
use mapro_core::scoring::{EdgeScoreTable, NodeScoreTable, Score, ScoreMatrix, ScoreTables};
use mapro_core::topology::{aid, Agent, AgentId, EdgeSpec, GraphDocument};
use mapro_service::{router, AppState};

async fn start() -> MaproClient {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(AppState::new())).await.unwrap() });
    MaproClient::new(format!("http://{addr}"))
}

fn base(id: &str) -> String {
    format!("You are the {id} agent. Answer briefly.")
}

fn target(id: &str) -> String {
    format!("{} Check the {id} list.", base(id))
}

fn chain_spec() -> RunSpec {
    let ids = ["plan", "code", "test"];
    let agents = ids
        .iter()
        .map(|id| {
            let mut a = Agent::new(aid(id));
            a.role = format!("{id} step");
            a.base_prompt = base(id);
            a
        })
        .collect();
    let edges = vec![
        EdgeSpec { from: aid("plan"), to: aid("code") },
        EdgeSpec { from: aid("code"), to: aid("test") },
    ];
    let mut settings = RunSettings { k: 3, seed: 17, max_iterations: 8, ..RunSettings::default() };
    let targets: BTreeMap<AgentId, String> = ids.iter().map(|id| (aid(id), target(id))).collect();
    settings.mock.rules = targets.iter().map(|(a, t)| (a.clone(), MockRule::Exact(t.clone()))).collect();
    settings.mock.targets = targets;
    let tasks = (0..3)
        .map(|i| Task { id: format!("t{i}"), input: format!("case {i}"), verifier: Verifier::Exact("PASS".into()) })
        .collect();
    RunSpec { settings, graph: GraphDocument { agents, edges, root: None }, tasks, audit_log: None }
}

fn api_status(e: ClientError) -> u16 {
    match e {
        ClientError::Api { status, .. } => status,
        other => panic!("expected an API error, got {other}"),
    }
}

#[tokio::test]
async fn health_reports_ok() {
    let c = start().await;
    assert_eq!(c.health().await.unwrap().status, "ok");
}

#[tokio::test]
async fn solve_matches_brute_force() {
    let c = start().await;
    let graph = GraphDocument {
        agents: vec![Agent::new(aid("a")), Agent::new(aid("b"))],
        edges: vec![EdgeSpec { from: aid("a"), to: aid("b") }],
        root: None,
    };
    let mut nodes = NodeScoreTable::new();
    nodes.insert(aid("a"), vec![Score::new(0.9).unwrap(), Score::new(0.5).unwrap()]);
    nodes.insert(aid("b"), vec![Score::new(0.4).unwrap(), Score::new(0.8).unwrap()]);
    let mut edges = EdgeScoreTable::new();
    edges.insert(aid("a"), aid("b"), ScoreMatrix::from_values(&[vec![0.1, 0.2], vec![0.9, 0.9]]).unwrap());
    let req = SolveRequest { graph, tables: ScoreTables { nodes, edges }, brute_force: true };
    let out = c.solve(&req).await.unwrap();
    // a1 b2: 0.9*0.8*0.2 = 0.144; a2 b2: 0.5*0.8*0.9 = 0.36
    assert_eq!(out.assignment.choices, BTreeMap::from([(aid("a"), 2), (aid("b"), 2)]));
    assert!((out.assignment.score.value() - 0.36).abs() < 1e-12);
    assert_eq!(out.brute_force.unwrap().choices, out.assignment.choices);
    assert_eq!(out.trace.messages.len(), 2);

    let mut bad = req.clone();
    bad.tables.edges = EdgeScoreTable::new();
    assert_eq!(api_status(c.solve(&bad).await.unwrap_err()), 422);
}

#[tokio::test]
async fn step_by_step_run_and_artifacts() {
    let c = start().await;
    let run = c.create_run(&chain_spec()).await.unwrap();
    assert_eq!((run.iteration, run.k, run.job.clone()), (0, 3, JobState::Idle));
    assert_eq!(api_status(c.scores(&run.id).await.unwrap_err()), 404);
    assert_eq!(api_status(c.report(&run.id).await.unwrap_err()), 400);

    let r0 = c.iterate(&run.id).await.unwrap();
    assert_eq!(r0.iteration, 0);
    assert_eq!(r0.tasks, 3);
    assert!(!r0.global_feedback.is_empty());
    let scores = c.scores(&run.id).await.unwrap();
    assert_eq!(scores.iteration, 0);
    assert_eq!(scores.tables.nodes.scores(&aid("plan")).unwrap().len(), 3);
    assert_eq!(scores.trace.assignment.choices, r0.chosen);

    c.iterate(&run.id).await.unwrap();
    let status = c.status(&run.id).await.unwrap();
    assert_eq!(status.history.len(), 2);
    let report = c.report(&run.id).await.unwrap();
    assert_eq!(report.trajectory_jsonl.lines().count(), 2);
    assert!(report.summary_md.contains("Pass rate"));
}

#[tokio::test]
async fn background_optimization_converges_and_freezes() {
    let c = start().await;
    let spec = chain_spec();
    let run = c.create_run(&spec).await.unwrap();
    let started = c.optimize(&run.id, &OptimizeRequest::default()).await.unwrap();
    assert!(matches!(started.job, JobState::Running | JobState::Finished));
    let mut seen = Vec::new();
    let done = c.wait(&run.id, Duration::from_millis(10), |s| seen.push(s.iteration)).await.unwrap();
    assert_eq!(done.job, JobState::Finished);
    assert!(done.frozen);
    assert_eq!(done.best_pass_rate, Some(1.0));
    assert!(seen.windows(2).all(|w| w[0] < w[1]));

    let report = c.report(&run.id).await.unwrap();
    let finals: BTreeMap<AgentId, String> = serde_json::from_str(&report.final_prompts_json).unwrap();
    assert_eq!(finals, spec.settings.mock.targets);

    assert_eq!(api_status(c.iterate(&run.id).await.unwrap_err()), 409);
    assert_eq!(api_status(c.optimize(&run.id, &OptimizeRequest::default()).await.unwrap_err()), 409);
}

#[tokio::test]
async fn snapshot_restore_continues_identically() {
    let c = start().await;
    let spec = chain_spec();
    let a = c.create_run(&spec).await.unwrap();
    let b = c.create_run(&spec).await.unwrap();
    c.iterate(&a.id).await.unwrap();
    let snap = c.snapshot(&a.id).await.unwrap();
    let restored = c.restore(&snap).await.unwrap();
    assert_ne!(restored.id, a.id);
    assert_eq!(restored.history, snap.state.history);

    for _ in 0..2 {
        c.iterate(&b.id).await.unwrap();
    }
    c.iterate(&restored.id).await.unwrap();
    let straight = c.snapshot(&b.id).await.unwrap();
    let resumed = c.snapshot(&restored.id).await.unwrap();
    assert_eq!(resumed.state, straight.state);

    let mut bad = snap.clone();
    bad.state.schema_version = 99;
    assert_eq!(api_status(c.restore(&bad).await.unwrap_err()), 422);
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let c = start().await;
    assert_eq!(api_status(c.status("missing").await.unwrap_err()), 404);
    assert_eq!(api_status(c.iterate("missing").await.unwrap_err()), 404);

    let mut spec = chain_spec();
    spec.settings.k = 1;
    assert_eq!(api_status(c.create_run(&spec).await.unwrap_err()), 400);
    let mut spec = chain_spec();
    spec.tasks.clear();
    assert_eq!(api_status(c.create_run(&spec).await.unwrap_err()), 400);
    let mut spec = chain_spec();
    spec.graph.edges.push(EdgeSpec { from: aid("test"), to: aid("plan") });
    assert_eq!(api_status(c.create_run(&spec).await.unwrap_err()), 400);

    let run = c.create_run(&chain_spec()).await.unwrap();
    let req = OptimizeRequest { max_iterations: Some(0), ..Default::default() };
    assert_eq!(api_status(c.optimize(&run.id, &req).await.unwrap_err()), 400);
    c.delete(&run.id).await.unwrap();
    assert_eq!(api_status(c.status(&run.id).await.unwrap_err()), 404);
    assert_eq!(c.list_runs().await.unwrap().len(), 0);
}
