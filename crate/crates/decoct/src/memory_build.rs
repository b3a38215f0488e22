//! Offline memory construction: success filtering, representative
//! trajectory selection, lesson distillation, and concept extraction.

use crate::error::{Error, Result};
use crate::model::{
    ExperienceRecord, Memory, MemoryEntry, MemoryKind, PayloadKind, TaskKind,
};
use crate::providers::{bounded_map, ChatRequest, Embedder, Providers};
use crate::prompts;
use crate::vector::normalize;

/// Keeps exactly the records with at least one positive-reward outcome,
/// preserving order. Graded rewards count as success whenever > 0.
pub fn filter_records(records: &[ExperienceRecord]) -> Vec<ExperienceRecord> {
    records
        .iter()
        .filter(|r| r.outcomes.iter().any(|o| o.reward > 0.0))
        .cloned()
        .collect()
}

/// One entry per record: the highest-reward trajectory (ties to the lowest
/// outcome index) plus the embedded problem statement.
pub fn build_raw_memory(
    records: &[ExperienceRecord],
    embedder: &dyn Embedder,
    memory_id: &str,
) -> Result<Memory> {
    let mut memory = Memory::new(memory_id, MemoryKind::Raw);
    memory.push_provenance(&format!("build_raw_memory: embedder={}", embedder.provider_id()));
    if records.is_empty() {
        return Ok(memory);
    }
    let problems: Vec<String> = records.iter().map(|r| r.problem.clone()).collect();
    let embeddings = embedder.embed_batch(&problems)?;
    for (record, embedding) in records.iter().zip(embeddings) {
        let (_, best) = record.best_outcome().ok_or_else(|| {
            Error::InvalidArgument(format!("record {}: no outcomes", record.id))
        })?;
        memory.entries.push(MemoryEntry {
            id: record.id.clone(),
            problem: record.problem.clone(),
            payload_kind: PayloadKind::RawTrajectory,
            payload: best.trajectory.clone(),
            problem_embedding: embedding,
            payload_embedding: None,
            concept_description: None,
            concept_embedding: None,
        });
    }
    Ok(memory)
}

/// A record that could not be distilled, and why.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SkipEntry {
    pub record_id: String,
    pub reason: String,
}

/// Lesson memory plus the records that had to be skipped.
#[derive(Debug)]
pub struct DistillOutput {
    pub memory: Memory,
    pub skipped: Vec<SkipEntry>,
}

fn distill_prompt(record: &ExperienceRecord) -> String {
    let attempts = prompts::format_attempts(&record.outcomes);
    match record.task_kind {
        TaskKind::Reasoning => {
            // records carry no separate reference solution; the best
            // successful trajectory stands in for the gt_solution slot
            let gt = record
                .best_outcome()
                .map(|(_, o)| o.trajectory.as_str())
                .unwrap_or("");
            prompts::fill(
                prompts::LESSON_MATH,
                &[
                    ("problem_statement", record.problem.as_str()),
                    ("gt_solution", gt),
                    ("formatted_rollouts", attempts.as_str()),
                ],
            )
        }
        TaskKind::Webshop => prompts::fill(
            prompts::LESSON_WEBSHOP,
            &[
                ("task_instruction", record.problem.as_str()),
                ("formatted_trajectories", attempts.as_str()),
            ],
        ),
        TaskKind::Swe => prompts::fill(
            prompts::LESSON_SWE,
            &[
                ("issue_text", record.problem.as_str()),
                ("formatted_trajectories", attempts.as_str()),
            ],
        ),
    }
}

/// Distills each record's attempts into one reusable lesson via the chat
/// model at temperature 0, then embeds problems and lessons. Records whose
/// chat call fails or returns blank text land in the skip report instead
/// of aborting the build.
pub fn distill_lessons(
    records: &[ExperienceRecord],
    providers: &Providers<'_>,
) -> Result<DistillOutput> {
    let mut memory = Memory::new("lesson", MemoryKind::Lesson);
    memory.push_provenance(&format!(
        "distill_lessons: chat={} embedder={}",
        providers.chat.provider_id(),
        providers.embedder.provider_id()
    ));
    if records.is_empty() {
        return Ok(DistillOutput {
            memory,
            skipped: Vec::new(),
        });
    }
    let lessons = bounded_map(
        records.iter().collect::<Vec<_>>(),
        providers.max_in_flight,
        |_, record| {
            let prompt = distill_prompt(record);
            providers
                .chat
                .chat(&ChatRequest::user(prompt, 0.0))
                .map(|r| r.text)
        },
    );

    let mut kept: Vec<(&ExperienceRecord, String)> = Vec::new();
    let mut skipped = Vec::new();
    for (record, lesson) in records.iter().zip(lessons) {
        match lesson {
            Ok(text) if text.trim().is_empty() => skipped.push(SkipEntry {
                record_id: record.id.clone(),
                reason: "EmptyLesson: model returned blank text".into(),
            }),
            Ok(text) => kept.push((record, text)),
            Err(e) => skipped.push(SkipEntry {
                record_id: record.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if !kept.is_empty() {
        let problems: Vec<String> = kept.iter().map(|(r, _)| r.problem.clone()).collect();
        let lesson_texts: Vec<String> = kept.iter().map(|(_, l)| l.clone()).collect();
        let problem_embs = providers.embedder.embed_batch(&problems)?;
        let lesson_embs = providers.embedder.embed_batch(&lesson_texts)?;
        for (((record, lesson), pe), le) in
            kept.into_iter().zip(problem_embs).zip(lesson_embs)
        {
            memory.entries.push(MemoryEntry {
                id: record.id.clone(),
                problem: record.problem.clone(),
                payload_kind: PayloadKind::Lesson,
                payload: lesson,
                problem_embedding: pe,
                payload_embedding: Some(le),
                concept_description: None,
                concept_embedding: None,
            });
        }
    }
    Ok(DistillOutput { memory, skipped })
}

/// Number of characters kept when falling back to the problem text as the
/// concept description.
const CONCEPT_FALLBACK_CHARS: usize = 200;

fn concept_prompt(kind: TaskKind, problem: &str, lesson: &str) -> String {
    prompts::fill(
        prompts::concept_template(kind),
        &[("problem_statement", problem), ("lesson", lesson)],
    )
}

/// Accepts exactly three non-empty lines prefixed Topic: / Problem: /
/// Technique:, returning the canonical three-line description.
fn parse_concept_description(reply: &str) -> Option<String> {
    let lines: Vec<&str> = reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.len() != 3 {
        return None;
    }
    for (line, prefix) in lines.iter().zip(["Topic:", "Problem:", "Technique:"]) {
        if !line.starts_with(prefix) {
            return None;
        }
    }
    Some(lines.join("\n"))
}

/// Adds a concept description and its embedding to every entry. Malformed
/// model output gets one retry; a second failure falls back to the problem
/// text truncated to 200 characters and is flagged in provenance.
pub fn extract_concepts(
    memory: &Memory,
    task_kind: TaskKind,
    providers: &Providers<'_>,
) -> Result<Memory> {
    let mut out = memory.clone();
    out.push_provenance(&format!(
        "extract_concepts: chat={} embedder={}",
        providers.chat.provider_id(),
        providers.embedder.provider_id()
    ));
    if out.is_empty() {
        return Ok(out);
    }
    let descriptions = bounded_map(
        out.entries.iter().collect::<Vec<_>>(),
        providers.max_in_flight,
        |_, entry| {
            let prompt = concept_prompt(task_kind, &entry.problem, &entry.payload);
            for _attempt in 0..2 {
                match providers.chat.chat(&ChatRequest::user(prompt.clone(), 0.0)) {
                    Ok(reply) => {
                        if let Some(desc) = parse_concept_description(&reply.text) {
                            return (desc, false);
                        }
                    }
                    Err(_) => {}
                }
            }
            let fallback: String = entry.problem.chars().take(CONCEPT_FALLBACK_CHARS).collect();
            (fallback, true)
        },
    );
    let texts: Vec<String> = descriptions.iter().map(|(d, _)| d.clone()).collect();
    let embeddings = providers.embedder.embed_batch(&texts)?;
    let mut fallback_ids = Vec::new();
    for ((entry, (desc, fell_back)), emb) in out
        .entries
        .iter_mut()
        .zip(descriptions)
        .zip(embeddings)
    {
        if fell_back {
            fallback_ids.push(entry.id.clone());
        }
        entry.concept_description = Some(desc);
        entry.concept_embedding = Some(normalize(&emb)?);
    }
    for id in fallback_ids {
        out.push_provenance(&format!("concept_fallback: {id}"));
    }
    Ok(out)
}
