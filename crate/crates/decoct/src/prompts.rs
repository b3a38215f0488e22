//! Shipped prompt templates and slot filling.
//!
//! Templates live under `assets/prompts/` with slots in curly braces and
//! are compiled into the binary. Filling is a single pass: unknown slots
//! are left literal and filled values are never re-expanded.

use crate::model::{TaskKind, TrajectoryOutcome};

pub const LESSON_MATH: &str = include_str!("../assets/prompts/lesson_math.txt");
pub const LESSON_WEBSHOP: &str = include_str!("../assets/prompts/lesson_webshop.txt");
pub const LESSON_SWE: &str = include_str!("../assets/prompts/lesson_swe.txt");
pub const CONCEPT_MATH: &str = include_str!("../assets/prompts/concept_math.txt");
pub const CONCEPT_WEBSHOP: &str = include_str!("../assets/prompts/concept_webshop.txt");
pub const CONCEPT_SWE: &str = include_str!("../assets/prompts/concept_swe.txt");
pub const INFERENCE: &str = include_str!("../assets/prompts/inference.txt");
pub const RERANK: &str = include_str!("../assets/prompts/rerank.txt");

/// Lesson-distillation template for a task family.
pub fn lesson_template(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Reasoning => LESSON_MATH,
        TaskKind::Webshop => LESSON_WEBSHOP,
        TaskKind::Swe => LESSON_SWE,
    }
}

/// Concept-description template for a task family.
pub fn concept_template(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Reasoning => CONCEPT_MATH,
        TaskKind::Webshop => CONCEPT_WEBSHOP,
        TaskKind::Swe => CONCEPT_SWE,
    }
}

/// Instruction dropped into the inference template's
/// `{task_dependent_instruction}` slot.
pub fn default_instruction(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Reasoning => {
            "Solve the target problem step by step and state the final answer clearly."
        }
        TaskKind::Webshop => {
            "Complete the shopping task, choosing each action based on the current page."
        }
        TaskKind::Swe => {
            "Resolve the issue: locate the fault, edit the code, and verify the fix with tests."
        }
    }
}

/// Replaces `{name}` slots with their values in one left-to-right pass.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match slots.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                return out;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders a record's attempts for the `{formatted_rollouts}` /
/// `{formatted_trajectories}` slot.
pub fn format_attempts(outcomes: &[TrajectoryOutcome]) -> String {
    outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            format!(
                "## Attempt {} (reward = {})\n{}",
                i + 1,
                o.reward,
                o.trajectory
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_replaces_known_and_keeps_unknown() {
        let t = "a {x} b {y} c {x}";
        assert_eq!(fill(t, &[("x", "1")]), "a 1 b {y} c 1");
    }

    #[test]
    fn fill_does_not_reexpand_values() {
        let t = "{a} {b}";
        assert_eq!(fill(t, &[("a", "{b}"), ("b", "2")]), "{b} 2");
    }

    #[test]
    fn templates_carry_expected_slots() {
        for (t, slot) in [
            (LESSON_MATH, "{gt_solution}"),
            (LESSON_MATH, "{formatted_rollouts}"),
            (LESSON_WEBSHOP, "{task_instruction}"),
            (LESSON_WEBSHOP, "{formatted_trajectories}"),
            (LESSON_SWE, "{issue_text}"),
            (CONCEPT_MATH, "{lesson}"),
            (CONCEPT_WEBSHOP, "{problem_statement}"),
            (CONCEPT_SWE, "{lesson}"),
            (INFERENCE, "{examples}"),
            (INFERENCE, "{problem_statement}"),
            (RERANK, "{query_problem_statement}"),
            (RERANK, "{formatted_candidates}"),
            (RERANK, "{max_k}"),
            (RERANK, "{top_k}"),
        ] {
            assert!(t.contains(slot), "missing {slot}");
        }
        // the gt slot exists only in the math lesson template
        assert!(!LESSON_WEBSHOP.contains("{gt_solution}"));
        assert!(!LESSON_SWE.contains("{gt_solution}"));
    }

    #[test]
    fn concept_templates_demand_three_lines() {
        for t in [CONCEPT_MATH, CONCEPT_WEBSHOP, CONCEPT_SWE] {
            assert!(t.contains("Respond with EXACTLY three lines"));
        }
    }

    #[test]
    fn format_attempts_numbers_from_one() {
        let outs = vec![
            TrajectoryOutcome {
                trajectory: "first".into(),
                reward: 1.0,
                step_count: None,
                token_count: Some(5),
            },
            TrajectoryOutcome {
                trajectory: "second".into(),
                reward: 0.0,
                step_count: None,
                token_count: Some(5),
            },
        ];
        let s = format_attempts(&outs);
        assert!(s.starts_with("## Attempt 1 (reward = 1)\nfirst"));
        assert!(s.contains("## Attempt 2 (reward = 0)\nsecond"));
    }
}
