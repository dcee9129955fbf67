//! Components backed by a chat-completions endpoint.

use std::sync::Arc;

use async_trait::async_trait;
use serde_json::json;

use super::executor::{AgentCall, Executor, ExecutorError};
use super::gateway::{ChatGateway, ChatMessage, GatewayError};
use crate::refinement::parse::{parse_local_reply, parse_numbered_items, parse_preference, parse_string_array};
use crate::refinement::{
    CritiqueRequest, LanguageJudge, LocalFeedbackReply, LocalFeedbackRequest, MutationRequest, Preference,
    RefinementError,
};
use crate::scoring::{parse_two_decimal_scores, EdgeScoreRequest, NodeScoreRequest, RewardScorer, Score, ScoringError};
use crate::templates::{self, candidate_block, truncate_tail};

/// Characters of agent input/output kept in reward and feedback payloads.
pub const TRANSCRIPT_LIMIT: usize = 4000;
/// Attempts for replies that fail strict parsing.
pub const PARSE_ATTEMPTS: usize = 3;

const CRITIC_SYS: &str = "You are a critic deciding whether a prompt and the response it produced form a good \
demonstration for a reward model. Answer with ACCEPT or REJECT on the first line.";

fn clip(text: &str) -> String {
    truncate_tail(text, TRANSCRIPT_LIMIT).0
}

fn scoring_err(e: GatewayError) -> ScoringError {
    ScoringError::ScorerUnavailable(e.to_string())
}

fn judge_err(e: GatewayError) -> RefinementError {
    RefinementError::JudgeUnavailable(e.to_string())
}

pub struct LlmScorer {
    gateway: Arc<ChatGateway>,
}

impl LlmScorer {
    pub fn new(gateway: Arc<ChatGateway>) -> Self {
        Self { gateway }
    }

    async fn scores(&self, system: &str, user: String, n: usize) -> Result<Vec<Score>, ScoringError> {
        let req = self.gateway.request(vec![ChatMessage::system(system), ChatMessage::user(user)]);
        let mut last = None;
        for _ in 0..PARSE_ATTEMPTS {
            let reply = self.gateway.chat(&req).await.map_err(scoring_err)?;
            match parse_two_decimal_scores(&reply.content, n) {
                Ok(s) => return Ok(s),
                Err(e) => {
                    tracing::warn!("reward reply rejected: {e}");
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

pub fn node_user_message(req: &NodeScoreRequest) -> String {
    let prefix = templates::agent_reward_prefix(&clip(&req.io.input), &clip(&req.io.output), &req.demos.render());
    let heading = format!("Agent role: {}\nCandidate role prompts:", req.role);
    format!("{prefix}\n\n{}", candidate_block(&heading, &req.candidates))
}

pub fn edge_user_message(req: &EdgeScoreRequest) -> String {
    let prefix = templates::edge_reward_prefix(req.from.as_str(), req.to.as_str(), &req.demos.render());
    let heading = format!(
        "Message from {} (under its candidate {}):\n{}\n\nCandidate prompts for {} ({}):",
        req.from,
        req.upstream_index,
        clip(&req.upstream_output),
        req.to,
        req.downstream_role
    );
    format!("{prefix}\n\n{}", candidate_block(&heading, &req.candidates))
}

#[async_trait]
impl RewardScorer for LlmScorer {
    fn id(&self) -> String {
        format!("llm:{}", self.gateway.model())
    }

    async fn score_node(&self, req: &NodeScoreRequest) -> Result<Vec<Score>, ScoringError> {
        self.scores(templates::NODE_HEADER, node_user_message(req), req.candidates.len()).await
    }

    async fn score_edge_row(&self, req: &EdgeScoreRequest) -> Result<Vec<Score>, ScoringError> {
        self.scores(templates::EDGE_HEADER, edge_user_message(req), req.candidates.len()).await
    }
}

pub struct LlmJudge {
    gateway: Arc<ChatGateway>,
}

impl LlmJudge {
    pub fn new(gateway: Arc<ChatGateway>) -> Self {
        Self { gateway }
    }

    async fn ask(&self, system: &str, user: String) -> Result<String, RefinementError> {
        let req = self.gateway.request(vec![ChatMessage::system(system), ChatMessage::user(user)]);
        Ok(self.gateway.chat(&req).await.map_err(judge_err)?.content)
    }

    async fn ask_array(&self, system: &str, user: String, n: usize) -> Result<Vec<String>, RefinementError> {
        let mut last = None;
        for _ in 0..PARSE_ATTEMPTS {
            let reply = self.ask(system, user.clone()).await?;
            match parse_string_array(&reply, Some(n)) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    tracing::warn!("judge reply rejected: {e}");
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

fn bullet_list(items: &[String]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join("\n")
}

#[async_trait]
impl LanguageJudge for LlmJudge {
    fn id(&self) -> String {
        format!("llm:{}", self.gateway.model())
    }

    async fn critique(&self, req: &CritiqueRequest) -> Result<Preference, RefinementError> {
        let user = format!(
            "Pool: {}\nReward score: {:.2}\n<prompt>\n{}\n</prompt>\n<response>\n{}\n</response>",
            req.key,
            req.score.value(),
            req.prompt,
            clip(&req.response)
        );
        parse_preference(&self.ask(CRITIC_SYS, user).await?)
    }

    async fn global_feedback(&self, errors: &[String]) -> Result<Vec<String>, RefinementError> {
        let clipped: Vec<String> = errors.iter().map(|e| clip(e)).collect();
        let user = format!("Error messages:\n{}", bullet_list(&clipped));
        Ok(parse_numbered_items(&self.ask(templates::GLOBAL_FEEDBACK_SYS, user).await?))
    }

    async fn local_feedback(&self, req: &LocalFeedbackRequest) -> Result<LocalFeedbackReply, RefinementError> {
        let blames: Vec<String> = req
            .blames
            .iter()
            .filter(|b| !b.text.trim().is_empty())
            .map(|b| format!("from {}: {}", b.from, b.text))
            .collect();
        let upstream: Vec<&str> = req.upstream.iter().map(|u| u.as_str()).collect();
        let mut user = format!(
            "1) Global feedback:\n{}\n\n2) Blame statements:\n{}\n\n3) Current prompt of `{}` ({}):\n<prompt>\n{}\n</prompt>\n\nInput it received:\n{}\n\nOutput it produced:\n{}",
            bullet_list(req.global.items()),
            bullet_list(&blames),
            req.agent,
            req.role,
            req.prompt,
            clip(&req.input),
            clip(&req.output),
        );
        if !upstream.is_empty() {
            user.push_str(&format!(
                "\n\nAfter the list, add one line `BLAME <agent>: <statement>` for each upstream agent: {}.",
                upstream.join(", ")
            ));
        }
        Ok(parse_local_reply(&self.ask(templates::LOCAL_FEEDBACK_SYS, user).await?))
    }

    async fn mutate(&self, req: &MutationRequest) -> Result<Vec<String>, RefinementError> {
        let user = format!(
            "<prompt>{}</prompt>\n\nOverall fix feedback:\n{}\n\nLocal feedback:\n{}",
            req.prompt,
            bullet_list(&req.global),
            bullet_list(&req.local)
        );
        self.ask_array(&templates::mutation_strategy_sys(req.n), user, req.n).await
    }

    async fn vary(&self, prompt: &str, n: usize) -> Result<Vec<String>, RefinementError> {
        self.ask_array(&templates::variation(n), format!("<prompt>{prompt}</prompt>"), n).await
    }

    async fn negative_variants(&self, good: &[String], n: usize) -> Result<Vec<String>, RefinementError> {
        let user = json!({ "good_examples": good, "mode": "node", "n": n }).to_string();
        self.ask_array(&templates::neg_variation(n), user, n).await
    }
}

/// Runs each agent as one chat call: the prompt as system message, the
/// assembled input as user message.
pub struct LlmExecutor {
    gateway: Arc<ChatGateway>,
}

impl LlmExecutor {
    pub fn new(gateway: Arc<ChatGateway>) -> Self {
        Self { gateway }
    }
}

#[async_trait]
impl Executor for LlmExecutor {
    fn id(&self) -> String {
        format!("llm:{}", self.gateway.model())
    }

    async fn run_agent(&self, call: &AgentCall) -> Result<String, ExecutorError> {
        let req = self
            .gateway
            .request(vec![ChatMessage::system(call.prompt.clone()), ChatMessage::user(call.input.clone())]);
        Ok(self.gateway.chat(&req).await?.content)
    }
}
