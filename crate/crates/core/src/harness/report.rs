//! Run artifacts: trajectory, final prompts and a human-readable summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::orchestrator::{OptimizationState, OrchestratorError};
use crate::refinement::sentences;
use crate::refinement::MutationAction;
use crate::topology::PromptCandidate;

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const FINAL_PROMPTS_FILE: &str = "final_prompts.json";
pub const SUMMARY_FILE: &str = "summary.md";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub trajectory_jsonl: String,
    pub final_prompts_json: String,
    pub summary_md: String,
}

fn multiset_diff(a: &[String], b: &[String]) -> Vec<String> {
    let mut rest: Vec<&String> = b.iter().collect();
    let mut out = Vec::new();
    for s in a {
        match rest.iter().position(|r| *r == s) {
            Some(i) => {
                rest.remove(i);
            }
            None => out.push(s.clone()),
        }
    }
    out
}

fn describe_edit(c: &PromptCandidate) -> Option<String> {
    let lin = c.lineage.as_ref()?;
    let before = sentences(&lin.parent_text);
    let after = sentences(&c.text);
    let added = multiset_diff(&after, &before);
    let removed = multiset_diff(&before, &after);
    let quote = |v: &[String]| v.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", ");
    let detail = match lin.action {
        MutationAction::AddSentence => format!("added {}", quote(&added)),
        MutationAction::DeleteSentence => format!("removed {}", quote(&removed)),
        MutationAction::ReplaceSentence => format!("{} -> {}", quote(&removed), quote(&added)),
        MutationAction::Reorganize => "sentences rearranged".to_string(),
    };
    Some(format!(
        "{} (generation {}, from candidate {}): {}",
        lin.action.label(),
        lin.generation,
        lin.parent_index,
        detail
    ))
}

/// Renders the three artifacts. The state must have completed at least one
/// iteration.
pub fn render_report(state: &OptimizationState) -> Result<ReportBundle, OrchestratorError> {
    if state.trajectory.is_empty() {
        return Err(OrchestratorError::Precondition("no iterations have completed".into()));
    }
    let mut trajectory_jsonl = String::new();
    for r in &state.trajectory {
        trajectory_jsonl.push_str(&serde_json::to_string(r).expect("records serialize"));
        trajectory_jsonl.push('\n');
    }
    let prompts: BTreeMap<_, _> = state.final_prompts();
    let final_prompts_json = serde_json::to_string_pretty(&prompts).expect("prompts serialize");

    let mut md = String::new();
    let _ = writeln!(md, "# Optimization summary\n");
    let _ = writeln!(md, "Iterations: {}  ", state.iteration);
    let _ = writeln!(md, "Tasks: {}  ", state.tasks.len());
    let _ = writeln!(md, "Pool size: {}  ", state.k);
    let _ = writeln!(md, "Seed: {}\n", state.seed);
    for w in &state.warnings {
        let _ = writeln!(md, "> warning: {w}\n");
    }
    let _ = writeln!(md, "## Pass rate\n");
    let _ = writeln!(md, "| iteration | pass rate | best so far | joint score | method | chosen |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for r in &state.trajectory {
        let chosen = r.chosen.iter().map(|(a, k)| format!("{a}={k}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            md,
            "| {} | {:.3} | {:.3} | {:.4e} | {:?} | {} |",
            r.iteration, r.pass_rate, r.best_pass_rate, r.joint_score, r.method, chosen
        );
    }
    if let Some(b) = &state.best {
        let _ = writeln!(md, "\nBest pass rate {:.3} at iteration {}.", b.pass_rate, b.iteration);
    }

    let _ = writeln!(md, "\n## Final prompts\n");
    for (agent, text) in &prompts {
        let _ = writeln!(md, "### {agent}\n\n```text\n{text}\n```\n");
    }

    let _ = writeln!(md, "## Prompt edits\n");
    let mut any = false;
    if let Some(b) = &state.best {
        for (agent, cand) in &b.prompts {
            if let Some(line) = describe_edit(cand) {
                let _ = writeln!(md, "- `{agent}` selected: {line}");
                any = true;
            }
        }
    }
    for (agent, pool) in &state.pools {
        for c in pool.candidates() {
            if let Some(line) = describe_edit(c) {
                let _ = writeln!(md, "- `{agent}` candidate {}: {line}", c.index);
                any = true;
            }
        }
    }
    if !any {
        let _ = writeln!(md, "No edits recorded.");
    }

    Ok(ReportBundle { trajectory_jsonl, final_prompts_json, summary_md: md })
}

pub fn write_report(bundle: &ReportBundle, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        (TRAJECTORY_FILE, &bundle.trajectory_jsonl),
        (FINAL_PROMPTS_FILE, &bundle.final_prompts_json),
        (SUMMARY_FILE, &bundle.summary_md),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}
