//! Strict parsers for judge replies.

use super::{LocalFeedbackReply, Preference, RefinementError};
use crate::topology::AgentId;

/// The whole reply must be one JSON array of strings.
pub fn parse_string_array(reply: &str, expected: Option<usize>) -> Result<Vec<String>, RefinementError> {
    let items: Vec<String> = serde_json::from_str(reply.trim())
        .map_err(|e| RefinementError::MalformedReply(format!("expected a JSON array of strings: {e}")))?;
    if let Some(n) = expected {
        if items.len() != n {
            return Err(RefinementError::VariantCountMismatch { expected: n, got: items.len() });
        }
    }
    if items.iter().any(|s| s.trim().is_empty()) {
        return Err(RefinementError::MalformedReply("empty string in array".into()));
    }
    Ok(items)
}

/// Numbered bullets (`1.`, `2)`); falls back to all non-empty lines.
pub fn parse_numbered_items(reply: &str) -> Vec<String> {
    let lines: Vec<&str> = reply.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let numbered: Vec<String> = lines
        .iter()
        .filter_map(|l| {
            let digits = l.chars().take_while(char::is_ascii_digit).count();
            let rest = &l[digits..];
            (digits > 0 && (rest.starts_with('.') || rest.starts_with(')'))).then(|| rest[1..].trim().to_string())
        })
        .filter(|s| !s.is_empty())
        .collect();
    if numbered.is_empty() {
        lines.into_iter().map(String::from).collect()
    } else {
        numbered
    }
}

/// `•` lines are fixes; `BLAME <agent>: text` lines are blames.
pub fn parse_local_reply(reply: &str) -> LocalFeedbackReply {
    let mut out = LocalFeedbackReply::default();
    for line in reply.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix('•') {
            let fix = rest.trim();
            if !fix.is_empty() {
                out.fixes.push(fix.to_string());
            }
        } else if let Some(rest) = line.strip_prefix("BLAME ") {
            if let Some((agent, text)) = rest.split_once(':') {
                if let Ok(id) = AgentId::new(agent.trim()) {
                    out.blames.push((id, text.trim().to_string()));
                }
            }
        }
    }
    out
}

/// First word must be ACCEPT or REJECT (any case).
pub fn parse_preference(reply: &str) -> Result<Preference, RefinementError> {
    let word: String = reply
        .trim()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    match word.as_str() {
        "ACCEPT" => Ok(Preference::Accept),
        "REJECT" => Ok(Preference::Reject),
        _ => Err(RefinementError::MalformedReply(format!("expected ACCEPT or REJECT, got {reply:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrays() {
        assert_eq!(parse_string_array(r#"["a","b"]"#, Some(2)).unwrap(), ["a", "b"]);
        assert!(matches!(
            parse_string_array("```json\n[\"a\"]\n```", None),
            Err(RefinementError::MalformedReply(_))
        ));
        assert_eq!(
            parse_string_array(r#"["a","b","c"]"#, Some(4)).unwrap_err(),
            RefinementError::VariantCountMismatch { expected: 4, got: 3 }
        );
    }

    #[test]
    fn bullets_and_blames() {
        assert_eq!(parse_numbered_items("1. Fix A\n2) Fix B\n\n"), ["Fix A", "Fix B"]);
        assert_eq!(parse_numbered_items("just text"), ["just text"]);
        let r = parse_local_reply("• tighten format\nBLAME planner: vague spec\nnoise");
        assert_eq!(r.fixes, ["tighten format"]);
        assert_eq!(r.blames[0].1, "vague spec");
        assert_eq!(parse_preference(" accept.").unwrap(), Preference::Accept);
        assert!(parse_preference("maybe").is_err());
    }
}
