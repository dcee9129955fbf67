use super::{Score, ScoringError};

/// Parses one score per non-empty line, in order.
pub fn parse_score_lines(reply: &str, expected_count: usize) -> Result<Vec<Score>, ScoringError> {
    if expected_count == 0 {
        return Err(ScoringError::MalformedReply("expected_count must be at least 1".into()));
    }
    let lines: Vec<&str> = reply.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() != expected_count {
        return Err(ScoringError::MalformedReply(format!(
            "expected {expected_count} score lines, got {}",
            lines.len()
        )));
    }
    lines
        .iter()
        .map(|line| {
            let v: f64 = line
                .parse()
                .map_err(|_| ScoringError::MalformedReply(format!("not a number: {line:?}")))?;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(ScoringError::MalformedReply(format!("score {v} outside [0, 1]")));
            }
            Score::new(v)
        })
        .collect()
}

/// Stricter variant for LLM replies: every line is a two-decimal number
/// (`0.62`) and the values are pairwise distinct.
pub fn parse_two_decimal_scores(
    reply: &str,
    expected_count: usize,
) -> Result<Vec<Score>, ScoringError> {
    let scores = parse_score_lines(reply, expected_count)?;
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let two_decimals = matches!(line.split_once('.'), Some((int, frac))
            if int.len() == 1
                && int.bytes().all(|b| b.is_ascii_digit())
                && frac.len() == 2
                && frac.bytes().all(|b| b.is_ascii_digit()));
        if !two_decimals {
            return Err(ScoringError::MalformedReply(format!("{line:?} is not a two-decimal score")));
        }
    }
    let mut hundredths: Vec<i64> = scores.iter().map(|s| (s.value() * 100.0).round() as i64).collect();
    hundredths.sort_unstable();
    if hundredths.windows(2).any(|w| w[0] == w[1]) {
        return Err(ScoringError::MalformedReply("scores are not pairwise distinct".into()));
    }
    Ok(scores)
}
