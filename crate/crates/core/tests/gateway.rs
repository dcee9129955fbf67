use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use mapro_core::harness::gateway::{AuditLog, ChatGateway, ChatMessage, GatewayError};
use mapro_core::harness::llm::{LlmScorer, PARSE_ATTEMPTS};
use mapro_core::harness::EndpointConfig;
use mapro_core::scoring::{DemoKey, ExpectedIO, NodeScoreRequest, PreferencePool, RewardScorer, ScoringError};
use mapro_core::topology::aid;
use serde_json::{json, Value};

#[derive(Default)]
struct Script {
    replies: Mutex<VecDeque<(u16, Value, u64)>>,
    seen: Mutex<Vec<(Option<String>, Value)>>,
}

fn ok(content: &str) -> (u16, Value, u64) {
    (
        200,
        json!({
            "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 2, "total_tokens": 12}
        }),
        0,
    )
}

fn status(code: u16) -> (u16, Value, u64) {
    (code, json!({"error": {"message": "nope"}}), 0)
}

async fn handler(State(s): State<Arc<Script>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_string());
    s.seen.lock().unwrap().push((auth, body));
    let (code, reply, delay) = s.replies.lock().unwrap().pop_front().unwrap_or_else(|| status(500));
    if delay > 0 {
        tokio::time::sleep(Duration::from_millis(delay)).await;
    }
    (StatusCode::from_u16(code).unwrap(), Json(reply))
}

async fn serve(replies: Vec<(u16, Value, u64)>) -> (String, Arc<Script>) {
    let script = Arc::new(Script { replies: Mutex::new(replies.into()), ..Default::default() });
    let app = Router::new().route("/v1/chat/completions", post(handler)).with_state(script.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), script)
}

fn config(base: &str, key_env: &str) -> EndpointConfig {
    let mut c = EndpointConfig::new(base, "test-model");
    c.backoff_ms = 1;
    c.retries = 2;
    c.api_key_env = key_env.into();
    c
}

#[tokio::test]
async fn success_returns_content_and_usage() {
    let (base, script) = serve(vec![ok("hello")]).await;
    let gw = ChatGateway::new(config(&base, "MAPRO_TEST_UNSET_1"), AuditLog::in_memory()).unwrap();
    let reply = gw.chat(&gw.request(vec![ChatMessage::user("hi")])).await.unwrap();
    assert_eq!(reply.content, "hello");
    assert_eq!(reply.finish_reason.as_deref(), Some("stop"));
    assert_eq!(reply.usage.unwrap().total_tokens, 12);
    let seen = script.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].0, None);
    assert_eq!(seen[0].1["model"], "test-model");
    assert_eq!(seen[0].1["temperature"], 0.2);
    assert_eq!(seen[0].1["max_tokens"], 2048);
    assert_eq!(gw.audit().entries().len(), 1);
}

#[tokio::test]
async fn rate_limit_is_retried_and_every_attempt_logged() {
    let (base, script) = serve(vec![status(429), ok("second time")]).await;
    let gw = ChatGateway::new(config(&base, "MAPRO_TEST_UNSET_2"), AuditLog::in_memory()).unwrap();
    let reply = gw.chat(&gw.request(vec![ChatMessage::user("hi")])).await.unwrap();
    assert_eq!(reply.content, "second time");
    assert_eq!(script.seen.lock().unwrap().len(), 2);
    let log = gw.audit().entries();
    assert_eq!(log.len(), 2);
    assert_eq!((log[0].attempt, log[0].status), (1, Some(429)));
    assert_eq!((log[1].attempt, log[1].status), (2, Some(200)));
    assert_eq!(log[0].call, log[1].call);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (base, script) = serve(vec![status(401), ok("unused")]).await;
    let gw = ChatGateway::new(config(&base, "MAPRO_TEST_UNSET_3"), AuditLog::in_memory()).unwrap();
    let err = gw.chat(&gw.request(vec![ChatMessage::user("hi")])).await.unwrap_err();
    assert_eq!(err, GatewayError::HttpStatus(401));
    assert_eq!(script.seen.lock().unwrap().len(), 1);
    assert_eq!(gw.audit().entries().len(), 1);
}

#[tokio::test]
async fn server_errors_stop_after_retry_budget() {
    let (base, script) = serve(vec![status(503), status(502), status(500), ok("too late")]).await;
    let gw = ChatGateway::new(config(&base, "MAPRO_TEST_UNSET_4"), AuditLog::in_memory()).unwrap();
    let err = gw.chat(&gw.request(vec![ChatMessage::user("hi")])).await.unwrap_err();
    assert_eq!(err, GatewayError::HttpStatus(500));
    assert_eq!(script.seen.lock().unwrap().len(), 3);
}

#[tokio::test]
async fn slow_endpoint_times_out() {
    let (base, _script) = serve(vec![(200, json!({}), 2000)]).await;
    let mut c = config(&base, "MAPRO_TEST_UNSET_5");
    c.timeout_secs = 0.2;
    let gw = ChatGateway::new(c, AuditLog::in_memory()).unwrap();
    let err = gw.chat(&gw.request(vec![ChatMessage::user("hi")])).await.unwrap_err();
    assert_eq!(err, GatewayError::Timeout);
}

#[tokio::test]
async fn api_key_is_sent_but_never_logged() {
    let secret = "sk-test-7f3a9c21";
    // SAFETY: unique variable name, read once by this test only
    unsafe { std::env::set_var("MAPRO_TEST_KEY_6", secret) };
    let (base, script) = serve(vec![ok(&format!("echo {secret}"))]).await;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let gw = ChatGateway::new(config(&base, "MAPRO_TEST_KEY_6"), AuditLog::to_file(path.clone())).unwrap();
    gw.chat(&gw.request(vec![ChatMessage::user(format!("my key is {secret}"))])).await.unwrap();
    assert_eq!(script.seen.lock().unwrap()[0].0.as_deref(), Some(format!("Bearer {secret}").as_str()));
    let on_disk = std::fs::read_to_string(&path).unwrap();
    assert_eq!(on_disk.lines().count(), 1);
    assert!(!on_disk.contains(secret));
    assert!(on_disk.contains("[REDACTED]"));
    let in_memory = serde_json::to_string(&gw.audit().entries()).unwrap();
    assert!(!in_memory.contains(secret));
}

fn node_request() -> NodeScoreRequest {
    NodeScoreRequest {
        agent: aid("coder"),
        role: "writes code".into(),
        candidates: vec!["Write code.".into(), "Write a function named solution.".into()],
        io: ExpectedIO { agent: Some(aid("coder")), input: "sum a list".into(), output: "def solution(xs): ...".into() },
        demos: PreferencePool::new(DemoKey::Agent(aid("coder"))),
    }
}

#[tokio::test]
async fn llm_scorer_parses_two_decimal_lines() {
    let (base, script) = serve(vec![ok("0.62\n0.30")]).await;
    let gw = Arc::new(ChatGateway::new(config(&base, "MAPRO_TEST_UNSET_7"), AuditLog::in_memory()).unwrap());
    let scores = LlmScorer::new(gw).score_node(&node_request()).await.unwrap();
    assert_eq!(scores.iter().map(|s| s.value()).collect::<Vec<_>>(), vec![0.62, 0.30]);
    let seen = script.seen.lock().unwrap();
    let user = seen[0].1["messages"][1]["content"].as_str().unwrap();
    assert!(user.contains("<prompt 2>"));
    assert!(user.contains("sum a list"));
}

#[tokio::test]
async fn llm_scorer_gives_up_on_malformed_replies() {
    let replies = (0..PARSE_ATTEMPTS).map(|_| ok("0.6\n0.30")).collect();
    let (base, script) = serve(replies).await;
    let gw = Arc::new(ChatGateway::new(config(&base, "MAPRO_TEST_UNSET_8"), AuditLog::in_memory()).unwrap());
    let err = LlmScorer::new(gw).score_node(&node_request()).await.unwrap_err();
    assert!(matches!(err, ScoringError::MalformedReply(_)), "{err:?}");
    assert_eq!(script.seen.lock().unwrap().len(), PARSE_ATTEMPTS);
}
