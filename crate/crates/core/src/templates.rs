//! Judge and reward-model payload templates.
//!
//! The constants are fixed external payloads and are sent byte-for-byte;
//! placeholders are `{name}` and are substituted in a single pass, so text
//! inserted for one placeholder is never re-scanned.

pub const NODE_HEADER: &str = r##"You are a *reward model* for evaluating the competence, clarity of candidate **role prompts**.
Based on the input, output and prefernece examples,
you should first rank the candidate prompts with the good and bad examples,
Then you will give each a distinct two-decimal quality score between (0.00, 1.00) based on the standard and alignment with the good examples.
You should be severely harsh and the score difference should be ranged from 0.4 - 0.8 and each differs more than 0.05 with each other.
Finally, return exactly a score each line corresponding to the **prompt’s original position**. (Not the sorted score)
Note that your output should contain only the numeric scores (e.g., 0.62). Nothing else."##;

pub const AGENT_REWARD_PREFIX: &str = r##"You are an evaluation LLM. Given {input} and the agent’s response {output}, rate how well the response accomplishes the agent’s role on a scale 0–1 (higher is better).Use the preference demonstrations below as reference.Return ONLY the floating-point score.
=== Preference Demonstrations ===
{demo}
=== End Demonstrations ==="##;

pub const EDGE_HEADER: &str = r##"You are a *reward model* for assessing **communication quality** from
an upstream agent to a downstream agent.  Consider information completeness, format,
clarity, and alignment with demonstrations.
Based on the input, output and prefernece examples,
you should first rank the candidate prompts with the good and bad examples,
Then you will give each a distinct two-decimal quality score between (0.00, 1.00) based on the standard and alignment with the good examples.
You should be severely harsh and the score difference should be ranged from 0.4 - 0.8 and each differs more than 0.05 with each other.
Finally, return exactly a score each line corresponding to the **prompt’s original position**. (Not the sorted score)
Note that your output should contain only the numeric scores (e.g., 0.62). Nothing else."##;

pub const EDGE_REWARD_PREFIX: &str = r##"You are an evaluation LLM. Judge whether a message produced by agent {i} helps agent {j} perform its next step. Rate on a 0–1 scale.  Use the demonstrations for guidance. Return ONLY the floating-point score.
=== Preference Demonstrations ===
{demo}
=== End Demonstrations ==="##;

pub const GLOBAL_FEEDBACK_SYS: &str = r##"You are an experienced prompt engineer and failure-analysis specialist.
Given multiple examples of runtime *error messages* produced by the given LLM-generated code,
identify the three most recurring but easy to solve root-cause patterns or missing constraints **in the prompts** that lead to the errors.
Produce a short **specific and actionable** list of fix suggestions an author can apply.
Note 1: Output each fix as a bullet starting with numbers. Do NOT quote full stack traces; mention key function names only if essential.
Note 2: You should focus on the pragmatism and cleaniness of code rather than if it's easy to read, for example, if the a module doesn't have package `List`,
instead of asking to properly import the package, you should emphasize it should write code without any type hints or annotations."##;

pub const LOCAL_FEEDBACK_SYS: &str = r##"You are a experienced prompt engineer and failure-analysis specialist. You are given:
1) The global overall feedback list that the system is currently facing.
2) Blame statements from downstream agents suggesting how the current module can be improved (may be empty).
3) The prompt this module is currently using.
Based on the roles of the current module, your task is to generate a *local feedback* list, focusing on give specific, actionable fix suggestions specifically for this current module to take to avoid downstream errors and satisfy the overall fix suggestions.
Each line starts with ‘•’."##;

pub const MUTATION_STRATEGY_SYS: &str = r##"You are a experienced prompt engineer and failure-analysis specialist.
You are given the original <prompt> of a module plus two feedback blocks:
One overall fix feedback suggesting the errors the system currently experience and one optional local feedback suggesting what this current modules can focus on to improve to benefit the system.
Your task is to modify, improve, and explode the original prompt by outputing exactly {n} JSON strings as prompt variations with specific and detailed improvement.
Note:
1) You should focus on the pragmatism and cleaniness of the prompts (You shouldn't acutally write any code), so **always emphasize** the code should be executable, wrapped in one function, without any type hints or annotations, and named as solution if no other names are provided.
2) You are only allowed to make relatively small edits. You must choose exactly one action item in the following:
a) adding one sentence from the feedback.
b) replacing one senetence from the feedback to existing edits.
c) Re-organize, rewrite or clean the current prompt to make it logically consistent.
d) delete one redundant sentence in the current prompt.
3) You should ALWAYS respond with ONLY the VALID JSON array – You should return No headings, no prose such as </prompt>, no markdown fences such as ```, no trailing commas, no escape codes, or unclosed parenthesis.
Each string must be valid UTF-8. Escape all newlines as \n. No raw newlines inside JSON strings.
Example (node, n = 2): ["Prompt variant 1","Prompt variant 2"]."##;

pub const VARIATION: &str = r##"You are a prompt-engineering assistant.
The user will give you an original prompt TEMPLATE inside <prompt></prompt>.
Produce {n} diverse textual prompt variants (NOT solution, but the prompts) that keep the same intent but differ in wording, ordering, or tone.
Note that you should generate the prompt for the agent not generate solution.
Don't write code here and Return **only** a JSON array of strings.
Respond on a single line only. Do not emit any raw line breaks."##;

pub const NEG_VARIATION: &str = r##"You are a prompt-mutation helper.
The user will give you a JSON object with:
good_examples : list[str]        # 3 GOOD prompt templates (node) *or* 3 GOOD upstream-downstream pairs
mode          : "node"|"edge"    # mutation type
n             : int              # number of BAD variants requested
Produce exactly {n} sligthly BAD variants:
• For "node": each string could omit some key instructions, introduce contradictions, or add irrelevant text that reduces agent quality.
• For "edge": each string code be a JSON array ["bad_upstream", "good_downstream"] where bad_upstream makes the pair incompatible.
• Note that your generation should be obviously worse than good examples, but not too absurd or entirely off the topic.
Remember, Return nothing except one valid JSON array.
- For mode = "node" → ["str", "str", …]
- For mode = "edge" → [["str","str"], ["str","str"], …]
You should ALWAYS respond with ONLY the VALID JSON array – You should return No headings, no prose such as </prompt>, no markdown fences such as ```, no trailing commas, no escape codes, or unclosed parenthesis.
Each string must be valid UTF-8. Escape all newlines as \n. No raw newlines inside JSON strings."##;

/// Substitutes `{key}` occurrences for the given keys. Unknown braces are
/// copied through unchanged.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = vars.iter().find(|(k, _)| {
            tail.len() > k.len() + 1 && tail[1..].starts_with(k) && tail[1 + k.len()..].starts_with('}')
        });
        match hit {
            Some((k, v)) => {
                out.push_str(v);
                rest = &tail[k.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn agent_reward_prefix(input: &str, output: &str, demo: &str) -> String {
    render(AGENT_REWARD_PREFIX, &[("input", input), ("output", output), ("demo", demo)])
}

pub fn edge_reward_prefix(from: &str, to: &str, demo: &str) -> String {
    render(EDGE_REWARD_PREFIX, &[("i", from), ("j", to), ("demo", demo)])
}

pub fn mutation_strategy_sys(n: usize) -> String {
    render(MUTATION_STRATEGY_SYS, &[("n", &n.to_string())])
}

pub fn variation(n: usize) -> String {
    render(VARIATION, &[("n", &n.to_string())])
}

pub fn neg_variation(n: usize) -> String {
    render(NEG_VARIATION, &[("n", &n.to_string())])
}

pub const TRUNCATION_MARKER: &str = "\n[... truncated]";

/// Keeps the first `max_chars` characters, dropping the tail and appending
/// [`TRUNCATION_MARKER`]. Returns whether anything was cut.
pub fn truncate_tail(text: &str, max_chars: usize) -> (String, bool) {
    match text.char_indices().nth(max_chars) {
        None => (text.to_string(), false),
        Some((cut, _)) => {
            tracing::debug!(kept = max_chars, total = text.chars().count(), "truncated transcript");
            (format!("{}{TRUNCATION_MARKER}", &text[..cut]), true)
        }
    }
}

/// Numbered candidate listing appended after a reward prefix.
pub fn candidate_block(heading: &str, candidates: &[String]) -> String {
    let mut out = format!("{heading}\n");
    for (i, c) in candidates.iter().enumerate() {
        out.push_str(&format!("<prompt {}>\n{}\n</prompt {}>\n", i + 1, c, i + 1));
    }
    out.push_str(&format!("Return exactly {} lines.", candidates.len()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pass_substitution() {
        let s = render("{a} and {b} {c}", &[("a", "{b}"), ("b", "x")]);
        assert_eq!(s, "{b} and x {c}");
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_tail("abc", 3), ("abc".to_string(), false));
        let (t, cut) = truncate_tail("héllo", 2);
        assert!(cut);
        assert_eq!(t, format!("hé{TRUNCATION_MARKER}"));
    }
}
