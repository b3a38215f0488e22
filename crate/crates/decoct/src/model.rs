//! Domain types shared by every module.
//!
//! All types are immutable after construction and safe to share across
//! concurrent readers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::Vector;

/// Task family a record or memory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Reasoning,
    Webshop,
    Swe,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Reasoning => "reasoning",
            TaskKind::Webshop => "webshop",
            TaskKind::Swe => "swe",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reasoning" => Ok(TaskKind::Reasoning),
            "webshop" => Ok(TaskKind::Webshop),
            "swe" => Ok(TaskKind::Swe),
            other => Err(Error::InvalidArgument(format!("unknown task kind {other}"))),
        }
    }
}

/// One sampled attempt: a trajectory plus its scalar reward.
///
/// Reasoning tasks carry a token count; agentic tasks carry a step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub trajectory: String,
    pub reward: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
}

impl TrajectoryOutcome {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reward) {
            return Err(Error::InvalidArgument(format!(
                "reward {} outside [0, 1]",
                self.reward
            )));
        }
        Ok(())
    }
}

/// A problem with its `m` sampled (trajectory, reward) attempts: the unit
/// of raw experience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub id: String,
    pub problem: String,
    pub outcomes: Vec<TrajectoryOutcome>,
    pub task_kind: TaskKind,
}

impl ExperienceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.outcomes.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "record {}: needs at least one outcome",
                self.id
            )));
        }
        for o in &self.outcomes {
            o.validate()?;
        }
        Ok(())
    }

    /// Highest-reward outcome, ties broken by lowest index.
    pub fn best_outcome(&self) -> Option<(usize, &TrajectoryOutcome)> {
        let mut best: Option<(usize, &TrajectoryOutcome)> = None;
        for (i, o) in self.outcomes.iter().enumerate() {
            match best {
                Some((_, b)) if o.reward <= b.reward => {}
                _ => best = Some((i, o)),
            }
        }
        best
    }
}

/// What a memory entry's payload holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    /// One successful trajectory kept verbatim.
    RawTrajectory,
    /// A distilled lesson.
    Lesson,
}

/// A problem paired with one reusable payload plus its embeddings: the unit
/// of organized memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: String,
    pub problem: String,
    pub payload_kind: PayloadKind,
    pub payload: String,
    pub problem_embedding: Vector,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload_embedding: Option<Vector>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concept_description: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concept_embedding: Option<Vector>,
}

/// Organization stage of a memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    Raw,
    Lesson,
    Consolidated,
}

impl MemoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MemoryKind::Raw => "raw",
            MemoryKind::Lesson => "lesson",
            MemoryKind::Consolidated => "consolidated",
        }
    }
}

/// An ordered collection of memory entries plus build metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memory {
    pub id: String,
    pub kind: MemoryKind,
    /// Free-text build metadata, one fact per line (provider ids, alpha,
    /// seeds, source memory id).
    pub provenance: String,
    pub entries: Vec<MemoryEntry>,
}

impl Memory {
    pub fn new(id: impl Into<String>, kind: MemoryKind) -> Self {
        Memory {
            id: id.into(),
            kind,
            provenance: String::new(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push_provenance(&mut self, line: &str) {
        if !self.provenance.is_empty() {
            self.provenance.push('\n');
        }
        self.provenance.push_str(line);
    }

    pub fn entry_by_id(&self, id: &str) -> Option<&MemoryEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Embedding dimension shared by all entries, if any entry exists.
    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.problem_embedding.dim())
    }

    /// Checks entry-id uniqueness and embedding-dimension agreement.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let dim = self.dim();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "memory {}: duplicate entry id {}",
                    self.id, e.id
                )));
            }
            if e.payload.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "entry {}: empty payload",
                    e.id
                )));
            }
            for (name, emb) in [
                ("problem", Some(&e.problem_embedding)),
                ("payload", e.payload_embedding.as_ref()),
                ("concept", e.concept_embedding.as_ref()),
            ] {
                if let (Some(emb), Some(dim)) = (emb, dim) {
                    if emb.dim() != dim {
                        return Err(Error::DimMismatch {
                            left: emb.dim(),
                            right: dim,
                        });
                    }
                    if !emb.is_unit() {
                        return Err(Error::InvalidVector(format!(
                            "entry {}: {name} embedding is not unit-norm",
                            e.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Retrieval output: the ordered selection and the context text handed to
/// the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub query: String,
    /// Ids of the selected entries, in retrieval order.
    pub entry_ids: Vec<String>,
    /// The final concatenated prompt, deterministically derived from the
    /// query and the ordered entries.
    pub prompt_text: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(reward: f64) -> TrajectoryOutcome {
        TrajectoryOutcome {
            trajectory: format!("t{reward}"),
            reward,
            step_count: None,
            token_count: Some(10),
        }
    }

    #[test]
    fn best_outcome_breaks_ties_by_lowest_index() {
        let rec = ExperienceRecord {
            id: "r1".into(),
            problem: "p".into(),
            outcomes: vec![outcome(1.0), outcome(0.0), outcome(1.0), outcome(0.0)],
            task_kind: TaskKind::Reasoning,
        };
        let (idx, _) = rec.best_outcome().unwrap();
        assert_eq!(idx, 0);

        let rec2 = ExperienceRecord {
            outcomes: vec![outcome(0.5), outcome(0.9)],
            ..rec
        };
        assert_eq!(rec2.best_outcome().unwrap().0, 1);
    }

    #[test]
    fn reward_range_is_enforced() {
        assert!(outcome(1.5).validate().is_err());
        assert!(outcome(-0.1).validate().is_err());
        assert!(outcome(0.0).validate().is_ok());
    }

    #[test]
    fn memory_validate_rejects_duplicate_ids() {
        let e = MemoryEntry {
            id: "a".into(),
            problem: "p".into(),
            payload_kind: PayloadKind::Lesson,
            payload: "l".into(),
            problem_embedding: Vector::new(vec![1.0, 0.0]).unwrap(),
            payload_embedding: None,
            concept_description: None,
            concept_embedding: None,
        };
        let mut m = Memory::new("m", MemoryKind::Lesson);
        m.entries.push(e.clone());
        m.entries.push(e);
        assert!(m.validate().is_err());
    }
}
