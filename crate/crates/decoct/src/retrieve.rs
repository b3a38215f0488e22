//! Flat similarity retrieval and context construction: the minimal
//! baseline the concept tree is compared against.

use crate::error::Result;
use crate::model::{Memory, MemoryEntry, RetrievedContext, TaskKind};
use crate::prompts;
use crate::vector::{inner, Vector};

/// Default K per task family.
pub fn default_k(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Reasoning => 8,
        TaskKind::Webshop => 4,
        TaskKind::Swe => 4,
    }
}

/// Exact-scan top-K by inner product over problem embeddings.
///
/// Descending similarity, ties broken by entry index; returns
/// `min(K, N)` entries.
pub fn top_k<'m>(
    query_embedding: &Vector,
    memory: &'m Memory,
    k: usize,
) -> Result<Vec<&'m MemoryEntry>> {
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(memory.len());
    for (i, entry) in memory.entries.iter().enumerate() {
        scored.push((i, inner(query_embedding, &entry.problem_embedding)?));
    }
    // stable sort keeps index order within equal scores
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite similarity"));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, _)| &memory.entries[i])
        .collect())
}

/// Inference template plus the instruction dropped into its
/// `{task_dependent_instruction}` slot.
#[derive(Debug, Clone)]
pub struct ContextTemplate {
    pub template: String,
    pub instruction: String,
}

impl ContextTemplate {
    pub fn for_task(kind: TaskKind) -> Self {
        ContextTemplate {
            template: prompts::INFERENCE.to_string(),
            instruction: prompts::default_instruction(kind).to_string(),
        }
    }
}

impl Default for ContextTemplate {
    fn default() -> Self {
        Self::for_task(TaskKind::Reasoning)
    }
}

/// Fills the inference template with the retrieved entries (problem +
/// payload, in retrieval order) followed by the target problem. Byte
/// output is a deterministic function of the query and the ordered
/// entries.
pub fn build_context(
    query: &str,
    entries: &[&MemoryEntry],
    template: &ContextTemplate,
) -> RetrievedContext {
    let examples = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            format!(
                "## Example {}\nProblem:\n{}\n\nExperience:\n{}",
                i + 1,
                e.problem,
                e.payload
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let prompt_text = prompts::fill(
        &template.template,
        &[
            ("task_dependent_instruction", template.instruction.as_str()),
            ("examples", examples.as_str()),
            ("problem_statement", query),
        ],
    );
    RetrievedContext {
        query: query.to_string(),
        entry_ids: entries.iter().map(|e| e.id.clone()).collect(),
        prompt_text,
    }
}
