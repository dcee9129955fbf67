//! Offline judge. Works on `FAIL [agent] text` failure lines produced by
//! the mock executor.

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::judge::{CritiqueRequest, LanguageJudge, LocalFeedbackReply, LocalFeedbackRequest, MutationRequest, Preference};
use super::{join_sentences, sentences, RefinementError, GLOBAL_FEEDBACK_LIMIT};
use crate::topology::AgentId;

pub fn failure_line(agent: &AgentId, text: &str) -> String {
    format!("FAIL [{agent}] {text}")
}

/// `(agent, text)` for a `FAIL [agent] text` line.
pub fn parse_failure_line(line: &str) -> Option<(&str, &str)> {
    let rest = line.trim().strip_prefix("FAIL [")?;
    let (agent, text) = rest.split_once("] ")?;
    Some((agent, text.trim()))
}

/// Failure text for a prompt holding the right sentences in the wrong order.
pub const ORDER_HINT: &str = "Keep the sentences in their original order.";

pub const DROP_PREFIX: &str = "drop: ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockJudge {
    /// Critic accepts candidates scoring at least this much.
    pub accept_threshold: f64,
}

impl Default for MockJudge {
    fn default() -> Self {
        Self { accept_threshold: 0.5 }
    }
}

fn push_unique(out: &mut Vec<String>, avoid: &str, s: String) {
    if !s.trim().is_empty() && s != avoid && !out.contains(&s) {
        out.push(s);
    }
}

/// Layout-only rewrites: rotations, a numbered form, then tagged copies.
fn layouts(prompt: &str, out: &mut Vec<String>, n: usize) {
    let sents = sentences(prompt);
    for r in 1..sents.len() {
        let mut rot = sents.clone();
        rot.rotate_left(r);
        push_unique(out, prompt, join_sentences(&rot));
    }
    if sents.len() > 1 {
        let numbered: Vec<String> = sents.iter().enumerate().map(|(i, s)| format!("{}) {s}", i + 1)).collect();
        push_unique(out, prompt, numbered.join(" "));
    }
    let mut c = 1;
    while out.len() < n {
        push_unique(out, prompt, format!("{prompt} (variant {c})"));
        c += 1;
    }
}

fn own_fixes(agent: &AgentId, lines: impl Iterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    for line in lines {
        for l in line.lines() {
            if let Some((a, text)) = parse_failure_line(l) {
                if a == agent.as_str() && !out.iter().any(|x: &String| x == text) {
                    out.push(text.to_string());
                }
            }
        }
    }
    out
}

#[async_trait]
impl LanguageJudge for MockJudge {
    fn id(&self) -> String {
        format!("mock-judge:{}", self.accept_threshold)
    }

    async fn critique(&self, req: &CritiqueRequest) -> Result<Preference, RefinementError> {
        Ok(if req.score.value() >= self.accept_threshold { Preference::Accept } else { Preference::Reject })
    }

    /// Most frequent distinct error lines, first occurrence breaking ties.
    async fn global_feedback(&self, errors: &[String]) -> Result<Vec<String>, RefinementError> {
        let mut counts: Vec<(String, usize)> = Vec::new();
        for line in errors.iter().flat_map(|e| e.lines()).map(str::trim).filter(|l| !l.is_empty()) {
            match counts.iter_mut().find(|(l, _)| l == line) {
                Some((_, c)) => *c += 1,
                None => counts.push((line.to_string(), 1)),
            }
        }
        counts.sort_by_key(|c| std::cmp::Reverse(c.1));
        Ok(counts.into_iter().take(GLOBAL_FEEDBACK_LIMIT).map(|(l, _)| l).collect())
    }

    async fn local_feedback(&self, req: &LocalFeedbackRequest) -> Result<LocalFeedbackReply, RefinementError> {
        let fixes = own_fixes(
            &req.agent,
            req.global.items().iter().cloned().chain(req.blames.iter().map(|b| b.text.clone())),
        );
        let mut per_upstream: BTreeMap<&AgentId, Vec<&str>> = BTreeMap::new();
        for line in req.input.lines() {
            if let Some((a, _)) = parse_failure_line(line) {
                if let Some(u) = req.upstream.iter().find(|u| u.as_str() == a) {
                    per_upstream.entry(u).or_default().push(line.trim());
                }
            }
        }
        let blames = req
            .upstream
            .iter()
            .map(|u| (u.clone(), per_upstream.get(u).map(|l| l.join("\n")).unwrap_or_default()))
            .collect();
        Ok(LocalFeedbackReply { fixes, blames })
    }

    /// One edit per variant: feedback sentences first, then deletions, then
    /// layout rewrites until `n` distinct variants exist.
    async fn mutate(&self, req: &MutationRequest) -> Result<Vec<String>, RefinementError> {
        let sents = sentences(&req.prompt);
        let mut fixes: Vec<String> = Vec::new();
        for item in &req.local {
            match item.strip_prefix("blame from ") {
                Some(rest) => {
                    let body = rest.split_once(": ").map(|(_, b)| b).unwrap_or(rest);
                    for f in own_fixes(&req.agent, std::iter::once(body.to_string())) {
                        if !fixes.contains(&f) {
                            fixes.push(f);
                        }
                    }
                }
                None if !fixes.contains(item) => fixes.push(item.clone()),
                None => {}
            }
        }
        let mut out = Vec::new();
        for fix in &fixes {
            if let Some(target) = fix.strip_prefix(DROP_PREFIX) {
                let kept: Vec<String> = sents.iter().filter(|s| s.as_str() != target).cloned().collect();
                if kept.len() < sents.len() {
                    push_unique(&mut out, &req.prompt, join_sentences(&kept));
                }
            } else if fix != ORDER_HINT && !sents.iter().any(|s| s == fix) && !fix.is_empty() {
                push_unique(&mut out, &req.prompt, format!("{} {fix}", req.prompt.trim_end()));
            }
        }
        if sents.len() > 1 {
            for i in 0..sents.len() {
                let mut kept = sents.clone();
                kept.remove(i);
                push_unique(&mut out, &req.prompt, join_sentences(&kept));
            }
        }
        layouts(&req.prompt, &mut out, req.n);
        out.truncate(req.n);
        Ok(out)
    }

    async fn vary(&self, prompt: &str, n: usize) -> Result<Vec<String>, RefinementError> {
        let mut out = Vec::new();
        layouts(prompt, &mut out, n);
        out.truncate(n);
        Ok(out)
    }

    /// Sentence deletions over the good prompts, then halved prompts.
    async fn negative_variants(&self, good: &[String], n: usize) -> Result<Vec<String>, RefinementError> {
        let mut out = Vec::new();
        for g in good {
            let sents = sentences(g);
            if sents.len() > 1 {
                for i in 0..sents.len() {
                    let mut kept = sents.clone();
                    kept.remove(i);
                    push_unique(&mut out, g, join_sentences(&kept));
                }
            }
        }
        for g in good {
            let words: Vec<&str> = g.split_whitespace().collect();
            let half = words.len().div_ceil(2);
            push_unique(&mut out, g, words[..half].join(" "));
        }
        let mut c = 1;
        while out.len() < n {
            let base = good.first().map(String::as_str).unwrap_or("Respond.");
            push_unique(&mut out, base, format!("{base} Ignore the task {c}."));
            c += 1;
        }
        out.truncate(n);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::aid;

    #[test]
    fn failure_lines_round_trip() {
        let l = failure_line(&aid("coder"), "Name it solution.");
        assert_eq!(parse_failure_line(&l), Some(("coder", "Name it solution.")));
        assert_eq!(parse_failure_line("PASS"), None);
    }

    #[tokio::test]
    async fn mutate_yields_distinct_variants() {
        let j = MockJudge::default();
        for prompt in ["One.", "One. Two.", "One. Two. Three."] {
            let req = MutationRequest {
                agent: aid("a"),
                prompt: prompt.into(),
                global: vec![],
                local: vec!["drop: Two.".into(), "Four.".into()],
                n: 4,
            };
            let v = j.mutate(&req).await.unwrap();
            assert_eq!(v.len(), 4);
            assert!(!v.iter().any(|x| x == prompt));
            let mut d = v.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), 4);
        }
        assert_eq!(j.vary("Only one.", 4).await.unwrap().len(), 4);
        assert_eq!(j.negative_variants(&["A b c. D e.".into()], 3).await.unwrap().len(), 3);
    }
}
