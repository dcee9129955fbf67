use std::collections::BTreeMap;

use super::judge::{CritiqueRequest, LanguageJudge, LocalFeedbackRequest, MutationRequest, Preference};
use super::{infer_action, Blame, GlobalFeedback, LocalFeedback, RefinementError};
use crate::harness::TranscriptEntry;
use crate::scoring::{Exemplar, PreferencePool, Score};
use crate::topology::{AgentGraph, AgentId, Lineage, PromptCandidate, PromptPool};

#[derive(Debug, Clone, PartialEq)]
pub struct DemoCandidate {
    pub prompt: String,
    pub response: String,
    pub score: Score,
}

/// Routes each candidate to the accepted or rejected side by the critic's
/// verdict, in order. Pools keep their capacity and disjointness.
pub async fn update_demos(
    critic: &dyn LanguageJudge,
    demos: &PreferencePool,
    items: &[DemoCandidate],
) -> Result<PreferencePool, RefinementError> {
    let mut out = demos.clone();
    for item in items {
        let req = CritiqueRequest {
            key: demos.key.clone(),
            prompt: item.prompt.clone(),
            response: item.response.clone(),
            score: item.score,
        };
        let ex = Exemplar::new(item.prompt.clone(), item.response.clone());
        match critic.critique(&req).await? {
            Preference::Accept => out.push_accepted(ex),
            Preference::Reject => out.push_rejected(ex),
        }
    }
    Ok(out)
}

/// Node-level refresh: `scores` and `responses` are aligned with pool order.
pub async fn update_preferences(
    critic: &dyn LanguageJudge,
    pool: &PromptPool,
    scores: &[Score],
    responses: &[String],
    demos: &PreferencePool,
) -> Result<PreferencePool, RefinementError> {
    if scores.len() != pool.len() || responses.len() != pool.len() {
        return Err(RefinementError::Precondition(format!(
            "pool of {} candidates with {} scores and {} responses",
            pool.len(),
            scores.len(),
            responses.len()
        )));
    }
    let items: Vec<DemoCandidate> = pool
        .candidates()
        .iter()
        .zip(scores)
        .zip(responses)
        .map(|((c, s), r)| DemoCandidate { prompt: c.text.clone(), response: r.clone(), score: *s })
        .collect();
    update_demos(critic, demos, &items).await
}

pub async fn collect_global_feedback(
    judge: &dyn LanguageJudge,
    errors: &[String],
) -> Result<GlobalFeedback, RefinementError> {
    if errors.iter().all(|e| e.trim().is_empty()) {
        return Ok(GlobalFeedback::default());
    }
    Ok(GlobalFeedback::new(judge.global_feedback(errors).await?))
}

/// Walks the graph in reverse topological order so every agent sees the
/// blames of all its consumers before blaming its own producers.
pub async fn collect_local_feedback(
    judge: &dyn LanguageJudge,
    graph: &AgentGraph,
    global: &GlobalFeedback,
    transcripts: &BTreeMap<AgentId, TranscriptEntry>,
) -> Result<BTreeMap<AgentId, LocalFeedback>, RefinementError> {
    let mut order = graph
        .topological_order()
        .map_err(|e| RefinementError::Precondition(e.to_string()))?;
    order.reverse();
    let mut received: BTreeMap<AgentId, Vec<Blame>> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for agent in order {
        let Some(t) = transcripts.get(&agent) else {
            return Err(RefinementError::Precondition(format!("no transcript for `{agent}`")));
        };
        let upstream: Vec<AgentId> = graph.parents(&agent).into_iter().cloned().collect();
        let blames = received.remove(&agent).unwrap_or_default();
        let req = LocalFeedbackRequest {
            agent: agent.clone(),
            role: graph.agent(&agent).map(|a| a.role.clone()).unwrap_or_default(),
            prompt: t.prompt.clone(),
            input: t.input.clone(),
            output: t.output.clone(),
            global: global.clone(),
            blames: blames.clone(),
            upstream: upstream.clone(),
        };
        let reply = judge.local_feedback(&req).await?;
        for up in &upstream {
            let text = reply
                .blames
                .iter()
                .find(|(a, _)| a == up)
                .map(|(_, t)| t.clone())
                .unwrap_or_default();
            received.entry(up.clone()).or_default().push(Blame { from: agent.clone(), text });
        }
        out.insert(agent.clone(), LocalFeedback { agent, blames, fixes: reply.fixes });
    }
    Ok(out)
}

/// New pool `{selected} ∪ {n variants}` with `selected` at index 1.
pub async fn mutate_pool(
    mutator: &dyn LanguageJudge,
    selected: &PromptCandidate,
    global: &GlobalFeedback,
    local: Option<&LocalFeedback>,
    n: usize,
    generation: usize,
) -> Result<PromptPool, RefinementError> {
    let mut local_items = Vec::new();
    if let Some(l) = local {
        local_items.extend(l.fixes.iter().cloned());
        local_items.extend(
            l.blames
                .iter()
                .filter(|b| !b.text.trim().is_empty())
                .map(|b| format!("blame from {}: {}", b.from, b.text)),
        );
    }
    let req = MutationRequest {
        agent: selected.agent.clone(),
        prompt: selected.text.clone(),
        global: global.items().to_vec(),
        local: local_items,
        n,
    };
    let variants = mutator.mutate(&req).await?;
    if variants.len() != n {
        return Err(RefinementError::VariantCountMismatch { expected: n, got: variants.len() });
    }
    let mut entries = vec![(selected.text.clone(), selected.lineage.clone())];
    for v in variants {
        let action = infer_action(&selected.text, &v);
        entries.push((
            v,
            Some(Lineage {
                parent_index: selected.index,
                parent_text: selected.text.clone(),
                action,
                generation,
            }),
        ));
    }
    Ok(PromptPool::new(selected.agent.clone(), n + 1, entries)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refinement::{MockJudge, MutationAction};
    use crate::scoring::DemoKey;
    use crate::topology::aid;

    fn s(v: f64) -> Score {
        Score::new(v).unwrap()
    }

    #[tokio::test]
    async fn critic_routes_by_threshold() {
        let judge = MockJudge::default();
        let pool = PromptPool::from_texts(aid("a"), 2, ["good", "bad"]).unwrap();
        let demos = PreferencePool::new(DemoKey::Agent(aid("a")));
        let out = update_preferences(&judge, &pool, &[s(0.9), s(0.2)], &["r1".into(), "r2".into()], &demos)
            .await
            .unwrap();
        assert_eq!(out.accepted().map(|e| e.prompt.as_str()).collect::<Vec<_>>(), ["good"]);
        assert_eq!(out.rejected().map(|e| e.prompt.as_str()).collect::<Vec<_>>(), ["bad"]);

        // re-adding does not duplicate
        let again = update_preferences(&judge, &pool, &[s(0.9), s(0.2)], &["r1".into(), "r2".into()], &out)
            .await
            .unwrap();
        assert_eq!(again.accepted_len(), 1);
        assert_eq!(again.rejected_len(), 1);
    }

    #[tokio::test]
    async fn equal_scores_keep_newest_three() {
        let judge = MockJudge::default();
        let texts: Vec<String> = (1..=5).map(|i| format!("p{i}")).collect();
        let pool = PromptPool::from_texts(aid("a"), 5, texts.clone()).unwrap();
        let out = update_preferences(
            &judge,
            &pool,
            &[s(0.7); 5],
            &texts,
            &PreferencePool::new(DemoKey::Agent(aid("a"))),
        )
        .await
        .unwrap();
        assert_eq!(out.accepted().map(|e| e.prompt.as_str()).collect::<Vec<_>>(), ["p3", "p4", "p5"]);
        assert_eq!(out.rejected_len(), 0);
    }

    #[tokio::test]
    async fn global_feedback_cases() {
        let judge = MockJudge::default();
        assert!(collect_global_feedback(&judge, &[]).await.unwrap().is_empty());
        let errors: Vec<String> =
            ["E1", "E2", "E1", "E3", "E4"].iter().map(|e| format!("FAIL [x] {e}")).collect();
        let g = collect_global_feedback(&judge, &errors).await.unwrap();
        // E1 occurs twice and leads; then first occurrences of E2, E3
        assert_eq!(g.items(), ["FAIL [x] E1", "FAIL [x] E2", "FAIL [x] E3"]);
        let one = collect_global_feedback(&judge, &errors[..1]).await.unwrap();
        assert!(one.items().len() <= 1);
    }

    fn transcripts(graph: &AgentGraph) -> BTreeMap<AgentId, TranscriptEntry> {
        graph
            .agent_ids()
            .map(|id| {
                (
                    id.clone(),
                    TranscriptEntry {
                        agent: id.clone(),
                        prompt: format!("prompt {id}"),
                        input: String::new(),
                        output: String::new(),
                    },
                )
            })
            .collect()
    }

    fn blame_pairs(fb: &BTreeMap<AgentId, LocalFeedback>) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = fb
            .values()
            .flat_map(|l| l.blames.iter().map(move |b| (b.from.to_string(), l.agent.to_string())))
            .collect();
        v.sort();
        v
    }

    #[tokio::test]
    async fn blames_follow_reversed_edges() {
        let judge = MockJudge::default();
        let chain = AgentGraph::from_edges(&["a", "b", "c"], &[("a", "b"), ("b", "c")]).unwrap();
        let fb = collect_local_feedback(&judge, &chain, &GlobalFeedback::default(), &transcripts(&chain))
            .await
            .unwrap();
        assert_eq!(blame_pairs(&fb), [("b".into(), "a".into()), ("c".into(), "b".into())]);
        assert!(fb[&aid("c")].blames.is_empty());

        let diamond = AgentGraph::from_edges(
            &["a", "b", "c", "d"],
            &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
        )
        .unwrap();
        let fb = collect_local_feedback(&judge, &diamond, &GlobalFeedback::default(), &transcripts(&diamond))
            .await
            .unwrap();
        let pairs = blame_pairs(&fb);
        assert!(pairs.contains(&("d".into(), "b".into())));
        assert!(pairs.contains(&("d".into(), "c".into())));
        assert_eq!(pairs.len(), diamond.edge_count());

        let single = AgentGraph::from_edges(&["a"], &[]).unwrap();
        let g = GlobalFeedback::new(["FAIL [a] Use tabs.".to_string()]);
        let fb = collect_local_feedback(&judge, &single, &g, &transcripts(&single)).await.unwrap();
        assert!(fb[&aid("a")].blames.is_empty());
        assert_eq!(fb[&aid("a")].fixes, ["Use tabs."]);
    }

    #[tokio::test]
    async fn mutation_contract() {
        let judge = MockJudge::default();
        let selected = PromptCandidate {
            agent: aid("a"),
            index: 3,
            text: "Write a function.".into(),
            lineage: None,
        };
        let local = LocalFeedback { agent: aid("a"), blames: vec![], fixes: vec!["Name it solution.".into()] };
        let pool = mutate_pool(&judge, &selected, &GlobalFeedback::default(), Some(&local), 4, 1)
            .await
            .unwrap();
        assert_eq!(pool.len(), 5);
        assert_eq!(pool.get(1).unwrap().text, selected.text);
        let added = pool.get(2).unwrap();
        assert_eq!(added.text, "Write a function. Name it solution.");
        let lineage = added.lineage.as_ref().unwrap();
        assert_eq!(lineage.action, MutationAction::AddSentence);
        assert_eq!(lineage.parent_index, 3);
    }

    #[tokio::test]
    async fn wrong_variant_count() {
        struct Short;
        #[async_trait::async_trait]
        impl LanguageJudge for Short {
            fn id(&self) -> String {
                "short".into()
            }
            async fn critique(&self, _: &CritiqueRequest) -> Result<Preference, RefinementError> {
                Ok(Preference::Accept)
            }
            async fn global_feedback(&self, _: &[String]) -> Result<Vec<String>, RefinementError> {
                Ok(vec![])
            }
            async fn local_feedback(
                &self,
                _: &LocalFeedbackRequest,
            ) -> Result<super::super::LocalFeedbackReply, RefinementError> {
                Ok(Default::default())
            }
            async fn mutate(&self, _: &MutationRequest) -> Result<Vec<String>, RefinementError> {
                Ok(vec!["x".into(), "y".into(), "z".into()])
            }
            async fn vary(&self, _: &str, _: usize) -> Result<Vec<String>, RefinementError> {
                Ok(vec![])
            }
            async fn negative_variants(&self, _: &[String], _: usize) -> Result<Vec<String>, RefinementError> {
                Ok(vec![])
            }
        }
        let selected = PromptCandidate { agent: aid("a"), index: 1, text: "p".into(), lineage: None };
        let err = mutate_pool(&Short, &selected, &GlobalFeedback::default(), None, 4, 1).await.unwrap_err();
        assert_eq!(err, RefinementError::VariantCountMismatch { expected: 4, got: 3 });
    }
}
