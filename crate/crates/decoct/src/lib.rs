//! decoct: an experience-memory engine for LLM agents.
//!
//! The engine turns raw agent experience (problems, trajectories, rewards)
//! into context for test-time inference:
//!
//! - **distill**: compress each record's attempts into one reusable lesson
//! - **consolidate**: k-means the memory down to Ñ representative entries
//! - **index**: organize entries into a hierarchical concept tree
//! - **retrieve**: flat top-K or tree retrieval with LLM re-ranking
//! - **analyze**: relevance/diversity quality scores, Monte-Carlo entropy
//!   and information gain, and the context-efficiency bound
//!
//! Entry points live in the per-stage modules; the `decoct` binary exposes
//! them as subcommands.

pub mod cli;
pub mod consolidate;
pub mod error;
pub mod infotheory;
pub mod memory_build;
pub mod metrics;
pub mod model;
pub mod prompts;
pub mod providers;
pub mod retrieve;
pub mod store;
pub mod tree;
pub mod vector;

pub use error::{Error, ProviderError, Result, StoreError};
pub use model::{
    ExperienceRecord, Memory, MemoryEntry, MemoryKind, PayloadKind, RetrievedContext, TaskKind,
    TrajectoryOutcome,
};
pub use vector::Vector;
