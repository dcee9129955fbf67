use super::MutationAction;

/// Splits prompt text into sentences. A sentence ends at `.`, `!` or `?`
/// followed by whitespace, or at a line break. Terminators are kept.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\n' {
            push(&mut out, &mut cur);
            continue;
        }
        cur.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            push(&mut out, &mut cur);
        }
    }
    push(&mut out, &mut cur);
    out
}

fn push(out: &mut Vec<String>, cur: &mut String) {
    let s = cur.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    cur.clear();
}

pub fn join_sentences(parts: &[String]) -> String {
    parts.join(" ")
}

/// Classifies an edit by comparing sentence multisets.
pub fn infer_action(parent: &str, variant: &str) -> MutationAction {
    let old = sentences(parent);
    let new = sentences(variant);
    let removed = multiset_minus(&old, &new);
    let added = multiset_minus(&new, &old);
    match (removed, added) {
        (0, 1) => MutationAction::AddSentence,
        (1, 0) => MutationAction::DeleteSentence,
        (1, 1) => MutationAction::ReplaceSentence,
        _ => MutationAction::Reorganize,
    }
}

fn multiset_minus(a: &[String], b: &[String]) -> usize {
    let mut rest: Vec<&String> = b.iter().collect();
    let mut missing = 0;
    for s in a {
        match rest.iter().position(|r| *r == s) {
            Some(i) => {
                rest.swap_remove(i);
            }
            None => missing += 1,
        }
    }
    missing
}
