//! Hierarchical concept tree: recursive spherical k-means over concept
//! embeddings, leaf-affinity retrieval, candidate pooling, and LLM
//! re-ranking.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderError, Result};
use crate::model::{Memory, MemoryEntry, TaskKind};
use crate::providers::{ChatModel, ChatRequest, Providers};
use crate::prompts;
use crate::retrieve::{build_context, ContextTemplate};
use crate::vector::{dist2, inner, mean, normalize, Vector};

/// Tree construction and retrieval settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Tree depth L.
    pub depth: u32,
    /// Target leaf size s; nodes at or below it stop splitting.
    pub target_leaf_size: usize,
    /// Leaves selected per query (n_ℓ).
    pub n_leaves: usize,
    /// Cap on the pooled candidate set (K_cand).
    pub candidate_cap: usize,
    /// Cap on re-ranked selections (max_k).
    pub max_selected: usize,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            depth: 2,
            target_leaf_size: 50,
            n_leaves: 5,
            candidate_cap: 300,
            max_selected: 8,
            seed: 0,
        }
    }
}

impl TreeConfig {
    /// Per-task leaf sizes: 50 for reasoning, 20 for WebShop, 10 for SWE.
    pub fn for_task(kind: TaskKind) -> Self {
        let target_leaf_size = match kind {
            TaskKind::Reasoning => 50,
            TaskKind::Webshop => 20,
            TaskKind::Swe => 10,
        };
        TreeConfig {
            target_leaf_size,
            ..TreeConfig::default()
        }
    }
}

/// Branching factor `b = ceil((floor(N / s))^(1/L))`, computed exactly in
/// integer arithmetic; 1 when `floor(N / s) = 0`.
pub fn branching_factor(n: u64, s: u64, l: u32) -> u64 {
    let s = s.max(1);
    let l = l.max(1);
    let m = n / s;
    if m == 0 {
        return 1;
    }
    // smallest b with b^l >= m; float guess, then integer correction
    let mut b = ((m as f64).powf(1.0 / f64::from(l)).round() as u64).max(1);
    while b > 1 && pow_at_least(b - 1, l, m) {
        b -= 1;
    }
    while !pow_at_least(b, l, m) {
        b += 1;
    }
    b
}

/// `base^exp >= target`, overflow-free.
fn pow_at_least(base: u64, exp: u32, target: u64) -> bool {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.saturating_mul(u128::from(base));
        if acc >= u128::from(target) {
            return true;
        }
    }
    acc >= u128::from(target)
}

/// Internal node or leaf. A node with no children is a leaf and owns its
/// member entry ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub centroid: Vector,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<String>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// An L-level hierarchy over concept embeddings. Every memory entry id
/// appears in exactly one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptTree {
    pub source_memory_id: String,
    pub config: TreeConfig,
    pub branching: u64,
    /// Absent for an empty memory.
    pub root: Option<TreeNode>,
}

/// Leaf reference with its depth-first id.
#[derive(Debug, Clone, Copy)]
pub struct LeafRef<'t> {
    pub id: usize,
    pub centroid: &'t Vector,
    pub members: &'t [String],
}

impl ConceptTree {
    /// Leaves in depth-first order; the position is the leaf id.
    pub fn leaves(&self) -> Vec<LeafRef<'_>> {
        let mut out = Vec::new();
        if let Some(root) = &self.root {
            collect_leaves(root, &mut out);
        }
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn depth(&self) -> u32 {
        fn node_depth(node: &TreeNode) -> u32 {
            node.children.iter().map(node_depth).max().map_or(0, |d| d + 1)
        }
        self.root.as_ref().map_or(0, node_depth)
    }

    pub fn dim(&self) -> Option<usize> {
        self.root.as_ref().map(|r| r.centroid.dim())
    }
}

fn collect_leaves<'t>(node: &'t TreeNode, out: &mut Vec<LeafRef<'t>>) {
    if node.is_leaf() {
        let id = out.len();
        out.push(LeafRef {
            id,
            centroid: &node.centroid,
            members: &node.members,
        });
    } else {
        for child in &node.children {
            collect_leaves(child, out);
        }
    }
}

// ---------------------------------------------------------------------
// spherical k-means: unit points, cosine assignment, normalized means
// ---------------------------------------------------------------------

/// Restarts per node split; the lowest-objective run wins.
const SPHERICAL_RESTARTS: u64 = 4;

/// Exact cosine ties (symmetric point sets) are broken by a per-restart
/// hash, so different restarts explore different resolutions while each
/// single run stays stable enough for Lloyd to converge.
fn tie_rank(restart_salt: u64, point: usize, centroid: usize) -> u64 {
    let mut h = restart_salt ^ 0x9e37_79b9_7f4a_7c15;
    for v in [point as u64, centroid as u64] {
        h ^= v.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h = h.rotate_left(23).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    }
    h
}

fn spherical_kmeans_once(
    points: &[&Vector],
    k: usize,
    seed: u64,
    max_iters: u32,
    tol: f64,
) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding; squared Euclidean distance on unit vectors orders
    // identically to 1 - cosine
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| dist2(p, points[chosen[0]]).expect("equal dims"))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, points[next]).expect("equal dims");
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    let mut centroids: Vec<Vector> = chosen.into_iter().map(|i| points[i].clone()).collect();
    let mut assignments = vec![0usize; n];

    for _ in 0..max_iters {
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let sim = inner(p, c).expect("equal dims");
                if sim > best_sim
                    || (sim == best_sim && tie_rank(seed, i, j) < tie_rank(seed, i, best))
                {
                    best_sim = sim;
                    best = j;
                }
            }
            assignments[i] = best;
        }
        // re-seed empty clusters with the member least aligned to its own
        // centroid, exempting sole members
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let mut worst: Option<(usize, f64)> = None;
            for (i, p) in points.iter().enumerate() {
                if counts[assignments[i]] <= 1 {
                    continue;
                }
                let sim = inner(p, &centroids[assignments[i]]).expect("equal dims");
                match worst {
                    Some((_, w)) if sim >= w => {}
                    _ => worst = Some((i, sim)),
                }
            }
            let Some((idx, _)) = worst else { break };
            centroids[empty] = points[idx].clone();
            assignments[idx] = empty;
        }
        let mut movement: f64 = 0.0;
        for j in 0..k {
            let members: Vec<&Vector> = points
                .iter()
                .enumerate()
                .filter(|(i, _)| assignments[*i] == j)
                .map(|(_, p)| &**p)
                .collect();
            let m = mean(&members).expect("cluster nonempty");
            let new_centroid = normalize(&m).unwrap_or_else(|_| centroids[j].clone());
            movement = movement.max(dist2(&centroids[j], &new_centroid).unwrap().sqrt());
            centroids[j] = new_centroid;
        }
        if movement < tol {
            break;
        }
    }
    // objective: total cosine dissimilarity to the final membership means
    let mut objective = 0.0;
    for j in 0..k {
        let members: Vec<&Vector> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| assignments[*i] == j)
            .map(|(_, p)| &**p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = mean(&members).expect("nonempty");
        if let Ok(c) = normalize(&m) {
            for p in members {
                objective += 1.0 - inner(p, &c).expect("equal dims");
            }
        }
    }
    (assignments, objective)
}

fn spherical_kmeans(
    points: &[&Vector],
    k: usize,
    seed: u64,
    max_iters: u32,
    tol: f64,
) -> Vec<usize> {
    debug_assert!(k >= 1 && k <= points.len());
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..SPHERICAL_RESTARTS {
        let run = spherical_kmeans_once(points, k, seed.wrapping_add(r), max_iters, tol);
        match &best {
            Some((_, obj)) if run.1 >= *obj => {}
            _ => best = Some(run),
        }
    }
    best.expect("at least one restart").0
}

/// Builds the L-level tree over concept embeddings. The branching factor
/// is computed once at the root and reused at every level; a node stops
/// splitting at depth L or once its member count is at most the target
/// leaf size. Deterministic for a fixed seed.
pub fn build_tree(memory: &Memory, config: &TreeConfig) -> Result<ConceptTree> {
    let n = memory.len();
    let b = branching_factor(n as u64, config.target_leaf_size as u64, config.depth);
    if n == 0 {
        return Ok(ConceptTree {
            source_memory_id: memory.id.clone(),
            config: config.clone(),
            branching: b,
            root: None,
        });
    }
    let mut embeddings: Vec<&Vector> = Vec::with_capacity(n);
    for entry in &memory.entries {
        embeddings.push(
            entry
                .concept_embedding
                .as_ref()
                .ok_or_else(|| Error::MissingEmbedding {
                    entry_id: entry.id.clone(),
                    which: "concept",
                })?,
        );
    }
    let mut split_counter = 0u64;
    let root = build_node(
        memory,
        &embeddings,
        (0..n).collect(),
        0,
        b,
        config,
        &mut split_counter,
    );
    Ok(ConceptTree {
        source_memory_id: memory.id.clone(),
        config: config.clone(),
        branching: b,
        root: Some(root),
    })
}

fn build_node(
    memory: &Memory,
    embeddings: &[&Vector],
    indices: Vec<usize>,
    depth: u32,
    b: u64,
    config: &TreeConfig,
    split_counter: &mut u64,
) -> TreeNode {
    let members: Vec<&Vector> = indices.iter().map(|&i| embeddings[i]).collect();
    let raw_mean = mean(&members).expect("node nonempty");
    let centroid = normalize(&raw_mean).unwrap_or_else(|_| members[0].clone());

    if depth >= config.depth || indices.len() <= config.target_leaf_size || b <= 1 {
        return TreeNode {
            centroid,
            children: Vec::new(),
            members: indices
                .iter()
                .map(|&i| memory.entries[i].id.clone())
                .collect(),
        };
    }
    let k = (b as usize).min(indices.len());
    let seed = config.seed.wrapping_add(*split_counter);
    *split_counter += 1;
    let assignments = spherical_kmeans(&members, k, seed, 100, 1e-6);
    let mut children = Vec::with_capacity(k);
    for j in 0..k {
        let child_indices: Vec<usize> = indices
            .iter()
            .zip(&assignments)
            .filter(|(_, &a)| a == j)
            .map(|(&i, _)| i)
            .collect();
        if child_indices.is_empty() {
            continue;
        }
        children.push(build_node(
            memory,
            embeddings,
            child_indices,
            depth + 1,
            b,
            config,
            split_counter,
        ));
    }
    TreeNode {
        centroid,
        children,
        members: Vec::new(),
    }
}

/// Cosine affinity of the query to every leaf centroid, sorted descending
/// with ties broken by leaf id.
pub fn leaf_affinity(query_embedding: &Vector, tree: &ConceptTree) -> Result<Vec<(usize, f64)>> {
    if let Some(dim) = tree.dim() {
        if dim != query_embedding.dim() {
            return Err(Error::DimMismatch {
                left: query_embedding.dim(),
                right: dim,
            });
        }
    }
    let mut scores: Vec<(usize, f64)> = tree
        .leaves()
        .iter()
        .map(|leaf| (leaf.id, inner(query_embedding, leaf.centroid).expect("dim checked")))
        .collect();
    scores.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite affinity")
            .then(a.0.cmp(&b.0))
    });
    Ok(scores)
}

/// A pooled candidate with its source leaf and query similarity.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub entry_id: String,
    pub problem: String,
    pub leaf_id: usize,
    pub similarity: f64,
}

/// Union of the top `n_leaves` leaves' members, capped at `candidate_cap`
/// by query similarity; descending similarity, ties by entry id.
pub fn pool_candidates(
    tree: &ConceptTree,
    affinities: &[(usize, f64)],
    memory: &Memory,
    query_embedding: &Vector,
    config: &TreeConfig,
) -> Result<Vec<Candidate>> {
    let by_id: std::collections::HashMap<&str, &MemoryEntry> = memory
        .entries
        .iter()
        .map(|e| (e.id.as_str(), e))
        .collect();
    let leaves = tree.leaves();
    let mut pool = Vec::new();
    for (leaf_id, _) in affinities.iter().take(config.n_leaves) {
        let leaf = &leaves[*leaf_id];
        for id in leaf.members {
            let entry = by_id.get(id.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!("tree member {id} not present in memory"))
            })?;
            pool.push(Candidate {
                entry_id: entry.id.clone(),
                problem: entry.problem.clone(),
                leaf_id: *leaf_id,
                similarity: inner(query_embedding, &entry.problem_embedding)?,
            });
        }
    }
    pool.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .expect("finite similarity")
            .then(a.entry_id.cmp(&b.entry_id))
    });
    pool.truncate(config.candidate_cap);
    Ok(pool)
}

/// Re-ranking result: selected entry ids in the model's order, plus
/// whether the similarity fallback was used.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub selected: Vec<String>,
    pub fallback: bool,
}

/// Extracts the index selection from a re-rank reply: the last non-empty
/// line must be a JSON array of integers. Out-of-range and duplicate
/// indices are dropped (first occurrence wins). An unparsable reply
/// yields an empty selection.
pub fn parse_rerank_reply(reply: &str, candidate_count: usize) -> Vec<usize> {
    let Some(line) = reply.lines().rev().find(|l| !l.trim().is_empty()) else {
        return Vec::new();
    };
    let Ok(raw) = serde_json::from_str::<Vec<i64>>(line.trim()) else {
        return Vec::new();
    };
    let mut seen = std::collections::HashSet::new();
    raw.into_iter()
        .filter_map(|i| usize::try_from(i).ok())
        .filter(|i| *i < candidate_count)
        .filter(|i| seen.insert(*i))
        .collect()
}

/// Asks the chat model to pick the most useful candidates. A reply that
/// yields no usable indices, or a chat failure, falls back to the top
/// `max_selected` candidates by query similarity.
pub fn rerank(
    query: &str,
    candidates: &[Candidate],
    config: &TreeConfig,
    chat: &dyn ChatModel,
) -> Result<RerankOutcome> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let formatted: String = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{i}. {}", c.problem))
        .collect::<Vec<_>>()
        .join("\n");
    let max_k = config.max_selected.to_string();
    let prompt = prompts::fill(
        prompts::RERANK,
        &[
            ("query_problem_statement", query),
            ("formatted_candidates", formatted.as_str()),
            ("max_k", max_k.as_str()),
            ("top_k", max_k.as_str()),
        ],
    );
    let reply = match chat.chat(&ChatRequest::user(prompt, 0.0)) {
        Ok(r) => r.text,
        Err(ProviderError::ContextOverflow) => return Err(ProviderError::ContextOverflow.into()),
        Err(_) => String::new(),
    };
    let mut picked = parse_rerank_reply(&reply, candidates.len());
    picked.truncate(config.max_selected);
    if picked.is_empty() {
        // candidates are already ordered by query similarity
        return Ok(RerankOutcome {
            selected: candidates
                .iter()
                .take(config.max_selected)
                .map(|c| c.entry_id.clone())
                .collect(),
            fallback: true,
        });
    }
    Ok(RerankOutcome {
        selected: picked
            .into_iter()
            .map(|i| candidates[i].entry_id.clone())
            .collect(),
        fallback: false,
    })
}

/// Full tree retrieval output, including which leaves the selections came
/// from (the concept-group coverage of the context).
#[derive(Debug, Clone)]
pub struct TreeRetrieval {
    pub context: crate::model::RetrievedContext,
    /// Distinct source leaves of the selected entries, ascending.
    pub selected_leaf_ids: Vec<usize>,
    pub candidate_count: usize,
    pub rerank_fallback: bool,
}

/// Online half of tree retrieval: embed the query, score leaves, pool the
/// top leaves' members, re-rank, and build the context.
pub fn tree_retrieve(
    query: &str,
    tree: &ConceptTree,
    memory: &Memory,
    config: &TreeConfig,
    providers: &Providers<'_>,
    template: &ContextTemplate,
) -> Result<TreeRetrieval> {
    if memory.is_empty() || tree.root.is_none() {
        return Ok(TreeRetrieval {
            context: build_context(query, &[], template),
            selected_leaf_ids: Vec::new(),
            candidate_count: 0,
            rerank_fallback: false,
        });
    }
    let query_embedding = crate::providers::embed_one(providers.embedder, query)?;
    let affinities = leaf_affinity(&query_embedding, tree)?;
    let candidates = pool_candidates(tree, &affinities, memory, &query_embedding, config)?;
    if candidates.is_empty() {
        return Ok(TreeRetrieval {
            context: build_context(query, &[], template),
            selected_leaf_ids: Vec::new(),
            candidate_count: 0,
            rerank_fallback: false,
        });
    }
    let outcome = rerank(query, &candidates, config, providers.chat)?;
    let leaf_of: std::collections::HashMap<&str, usize> = candidates
        .iter()
        .map(|c| (c.entry_id.as_str(), c.leaf_id))
        .collect();
    let entries: Vec<&MemoryEntry> = outcome
        .selected
        .iter()
        .filter_map(|id| memory.entry_by_id(id))
        .collect();
    let mut selected_leaf_ids: Vec<usize> = outcome
        .selected
        .iter()
        .filter_map(|id| leaf_of.get(id.as_str()).copied())
        .collect();
    selected_leaf_ids.sort_unstable();
    selected_leaf_ids.dedup();
    Ok(TreeRetrieval {
        context: build_context(query, &entries, template),
        selected_leaf_ids,
        candidate_count: candidates.len(),
        rerank_fallback: outcome.fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MemoryKind, PayloadKind};
    use crate::providers::{ScriptedChat, StubEmbedder};

    fn v(values: &[f64]) -> Vector {
        Vector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn branching_factor_paper_pins() {
        assert_eq!(branching_factor(1135, 20, 2), 8);
        assert_eq!(branching_factor(13381, 50, 2), 17);
        assert_eq!(branching_factor(579, 10, 2), 8);
    }

    #[test]
    fn branching_factor_degenerate_and_edges() {
        assert_eq!(branching_factor(4, 10, 2), 1); // floor(4/10) = 0
        assert_eq!(branching_factor(1, 1, 1), 1);
        assert_eq!(branching_factor(100, 1, 1), 100); // L = 1: b = floor(N/s)
        assert_eq!(branching_factor(64, 1, 3), 4); // exact cube root
        assert_eq!(branching_factor(65, 1, 3), 5);
    }

    /// Defining property of the closed form: b is the smallest integer
    /// with b^L >= floor(N/s).
    fn check_closed_form(n: u64, s: u64, l: u32) {
        let b = branching_factor(n, s, l);
        let m = n / s;
        if m == 0 {
            assert_eq!(b, 1, "N={n} s={s} L={l}");
            return;
        }
        assert!(pow_at_least(b, l, m), "N={n} s={s} L={l} b={b} too small");
        if b > 1 {
            assert!(
                !pow_at_least(b - 1, l, m),
                "N={n} s={s} L={l} b={b} not minimal"
            );
        }
    }

    #[test]
    fn branching_factor_closed_form_sweep() {
        // the formula depends only on m = floor(N/s); m covers 0..=1e5
        // exactly when s = 1, which subsumes every (N, s) pair in range
        for m in 0..=100_000u64 {
            for l in 1..=3u32 {
                check_closed_form(m, 1, l);
            }
        }
        // spot-check the floor reduction across the full (N, s) grid
        let mut state = 0x243F_6A88_85A3_08D3u64;
        for _ in 0..20_000 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let n = 1 + state % 100_000;
            let s = 1 + (state >> 32) % 100;
            let l = 1 + ((state >> 48) % 3) as u32;
            check_closed_form(n, s, l);
        }
    }

    fn concept_memory(embs: &[Vec<f64>]) -> Memory {
        let mut m = Memory::new("cm", MemoryKind::Lesson);
        for (i, e) in embs.iter().enumerate() {
            m.entries.push(MemoryEntry {
                id: format!("e{i}"),
                problem: format!("problem {i}"),
                payload_kind: PayloadKind::Lesson,
                payload: format!("lesson {i}"),
                problem_embedding: v(e),
                payload_embedding: Some(v(e)),
                concept_description: Some(format!("concept {i}")),
                concept_embedding: Some(v(e)),
            });
        }
        m
    }

    #[test]
    fn small_memory_collapses_to_single_leaf() {
        let m = concept_memory(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.6, 0.8],
        ]);
        let cfg = TreeConfig {
            target_leaf_size: 10,
            ..TreeConfig::default()
        };
        let tree = build_tree(&m, &cfg).unwrap();
        assert_eq!(tree.branching, 1);
        let leaves = tree.leaves();
        assert_eq!(leaves.len(), 1);
        assert_eq!(leaves[0].members.len(), 4);
    }

    #[test]
    fn orthogonal_quad_splits_into_singleton_leaves() {
        let m = concept_memory(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ]);
        let cfg = TreeConfig {
            target_leaf_size: 1,
            depth: 2,
            seed: 3,
            ..TreeConfig::default()
        };
        assert_eq!(branching_factor(4, 1, 2), 2);
        let tree = build_tree(&m, &cfg).unwrap();
        let leaves = tree.leaves();
        assert_eq!(leaves.len(), 4);
        for leaf in &leaves {
            assert_eq!(leaf.members.len(), 1);
        }
        assert!(tree.depth() <= 2);
    }

    #[test]
    fn partition_property_holds_on_clustered_corpus() {
        // three tight clusters of eight points each
        let mut embs = Vec::new();
        let centers: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for (ci, c) in centers.iter().enumerate() {
            for j in 0..8 {
                let eps = 0.05 * (j as f64 + 1.0);
                let raw = v(&[
                    c[0] + eps * ((ci + j) % 3) as f64,
                    c[1] + eps * ((ci + j + 1) % 3) as f64,
                    c[2] + eps * ((ci + j + 2) % 3) as f64,
                ]);
                embs.push(normalize(&raw).unwrap().as_slice().to_vec());
            }
        }
        let m = concept_memory(&embs);
        let cfg = TreeConfig {
            target_leaf_size: 4,
            depth: 2,
            seed: 9,
            ..TreeConfig::default()
        };
        let tree = build_tree(&m, &cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut total = 0;
        for leaf in tree.leaves() {
            for id in leaf.members {
                assert!(seen.insert(id.clone()), "{id} in two leaves");
                total += 1;
            }
        }
        assert_eq!(total, m.len());
        // leaf centroids are the normalized means of their members
        for leaf in tree.leaves() {
            let members: Vec<&Vector> = leaf
                .members
                .iter()
                .map(|id| m.entry_by_id(id).unwrap().concept_embedding.as_ref().unwrap())
                .collect();
            let expect = normalize(&mean(&members).unwrap()).unwrap();
            for (a, b) in expect.as_slice().iter().zip(leaf.centroid.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn leaf_affinity_orders_and_breaks_ties() {
        let m = concept_memory(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let cfg = TreeConfig {
            target_leaf_size: 1,
            depth: 1,
            seed: 0,
            ..TreeConfig::default()
        };
        let tree = build_tree(&m, &cfg).unwrap();
        let leaves = tree.leaves();
        assert_eq!(leaves.len(), 2);

        // query equal to one centroid ranks that leaf first with score 1
        let q = leaves[1].centroid.clone();
        let aff = leaf_affinity(&q, &tree).unwrap();
        assert_eq!(aff[0].0, 1);
        assert!((aff[0].1 - 1.0).abs() < 1e-12);

        // brute-force comparison on every leaf
        for (id, score) in &aff {
            let direct = inner(&q, leaves[*id].centroid).unwrap();
            assert_eq!(*score, direct);
        }

        // a query orthogonal to every centroid ties all leaves; order
        // falls back to leaf id
        let m3 = concept_memory(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let tree3 = build_tree(&m3, &cfg).unwrap();
        let aff3 = leaf_affinity(&v(&[0.0, 0.0, 1.0]), &tree3).unwrap();
        assert_eq!(aff3.iter().map(|(id, _)| *id).collect::<Vec<_>>(), vec![0, 1]);
        assert!(aff3.iter().all(|(_, s)| s.abs() < 1e-12));

        assert!(matches!(
            leaf_affinity(&v(&[1.0]), &tree3),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn pooling_respects_cap_and_order() {
        // 12 entries in two leaves; cap at 10
        let mut embs = Vec::new();
        for i in 0..12 {
            let x = 1.0 - 0.01 * i as f64;
            embs.push(normalize(&v(&[x, 0.3, if i < 6 { 0.0 } else { 0.4 }])).unwrap()
                .as_slice()
                .to_vec());
        }
        let m = concept_memory(&embs);
        let cfg = TreeConfig {
            target_leaf_size: 6,
            depth: 1,
            candidate_cap: 10,
            n_leaves: 2,
            seed: 1,
            ..TreeConfig::default()
        };
        let tree = build_tree(&m, &cfg).unwrap();
        let q = v(&[1.0, 0.0, 0.0]);
        let aff = leaf_affinity(&q, &tree).unwrap();
        let pool = pool_candidates(&tree, &aff, &m, &q, &cfg).unwrap();
        assert_eq!(pool.len(), 10);
        // brute-force top-10 by similarity over all entries
        let mut sims: Vec<(String, f64)> = m
            .entries
            .iter()
            .map(|e| (e.id.clone(), inner(&q, &e.problem_embedding).unwrap()))
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expect: Vec<String> = sims.into_iter().take(10).map(|(id, _)| id).collect();
        let got: Vec<String> = pool.iter().map(|c| c.entry_id.clone()).collect();
        assert_eq!(got, expect);

        // under the cap: everything pooled
        let cfg_all = TreeConfig {
            candidate_cap: 300,
            ..cfg.clone()
        };
        let pool_all = pool_candidates(&tree, &aff, &m, &q, &cfg_all).unwrap();
        assert_eq!(pool_all.len(), 12);

        // more selected leaves than exist: saturates
        let cfg_many = TreeConfig {
            n_leaves: 99,
            ..cfg_all
        };
        let pool_many = pool_candidates(&tree, &aff, &m, &q, &cfg_many).unwrap();
        assert_eq!(pool_many.len(), 12);
    }

    fn toy_candidates(n: usize) -> Vec<Candidate> {
        (0..n)
            .map(|i| Candidate {
                entry_id: format!("c{i}"),
                problem: format!("candidate problem {i}"),
                leaf_id: i % 3,
                similarity: 1.0 - 0.01 * i as f64,
            })
            .collect()
    }

    #[test]
    fn rerank_takes_model_order() {
        let cands = toy_candidates(13);
        let chat = ScriptedChat::of_texts(&["thinking...\n[4, 12, 7]"]);
        let cfg = TreeConfig::default();
        let out = rerank("q", &cands, &cfg, &chat).unwrap();
        assert_eq!(out.selected, vec!["c4", "c12", "c7"]);
        assert!(!out.fallback);
        // re-rank prompts use greedy decoding
        assert_eq!(chat.calls.lock().unwrap()[0].temperature, 0.0);
    }

    #[test]
    fn rerank_dedups_and_range_filters() {
        let cands = toy_candidates(5);
        let chat = ScriptedChat::of_texts(&["[0, 0, 99]"]);
        let out = rerank("q", &cands, &TreeConfig::default(), &chat).unwrap();
        assert_eq!(out.selected, vec!["c0"]);
        assert!(!out.fallback);
    }

    #[test]
    fn rerank_falls_back_on_prose() {
        let cands = toy_candidates(6);
        let chat = ScriptedChat::of_texts(&["no relevant items."]);
        let cfg = TreeConfig {
            max_selected: 4,
            ..TreeConfig::default()
        };
        let out = rerank("q", &cands, &cfg, &chat).unwrap();
        assert_eq!(out.selected, vec!["c0", "c1", "c2", "c3"]);
        assert!(out.fallback);
    }

    #[test]
    fn rerank_truncates_to_max_selected() {
        let cands = toy_candidates(6);
        let chat = ScriptedChat::of_texts(&["[5, 4, 3, 2, 1, 0]"]);
        let cfg = TreeConfig {
            max_selected: 3,
            ..TreeConfig::default()
        };
        let out = rerank("q", &cands, &cfg, &chat).unwrap();
        assert_eq!(out.selected, vec!["c5", "c4", "c3"]);
    }

    #[test]
    fn tree_retrieve_stays_in_high_affinity_leaves() {
        // two well-separated concept groups; query sits in group A
        let mut embs = Vec::new();
        for i in 0..4 {
            embs.push(
                normalize(&v(&[1.0, 0.05 * i as f64, 0.0]))
                    .unwrap()
                    .as_slice()
                    .to_vec(),
            );
        }
        for i in 0..4 {
            embs.push(
                normalize(&v(&[0.0, 0.05 * i as f64, 1.0]))
                    .unwrap()
                    .as_slice()
                    .to_vec(),
            );
        }
        let m = concept_memory(&embs);
        let cfg = TreeConfig {
            target_leaf_size: 4,
            depth: 1,
            n_leaves: 1,
            max_selected: 2,
            seed: 2,
            ..TreeConfig::default()
        };
        let tree = build_tree(&m, &cfg).unwrap();
        assert_eq!(tree.leaf_count(), 2);

        // drive affinity → pool → rerank directly with a known query vector
        let chat = ScriptedChat::of_texts(&["[0, 1]"]);
        let q = v(&[1.0, 0.0, 0.0]);
        let aff = leaf_affinity(&q, &tree).unwrap();
        let pool = pool_candidates(&tree, &aff, &m, &q, &cfg).unwrap();
        assert_eq!(pool.len(), 4);
        let group_a: std::collections::HashSet<String> =
            (0..4).map(|i| format!("e{i}")).collect();
        assert!(pool.iter().all(|c| group_a.contains(&c.entry_id)));
        let out = rerank("query", &pool, &cfg, &chat).unwrap();
        assert_eq!(out.selected.len(), 2);
        assert!(out.selected.iter().all(|id| group_a.contains(id)));
    }

    #[test]
    fn tree_retrieve_empty_memory_gives_empty_context() {
        let m = Memory::new("empty", MemoryKind::Lesson);
        let cfg = TreeConfig::default();
        let tree = build_tree(&m, &cfg).unwrap();
        let embedder = StubEmbedder::new(8, 0);
        let chat = ScriptedChat::of_texts(&[]);
        let providers = Providers::new(&embedder, &chat);
        let got = tree_retrieve(
            "query",
            &tree,
            &m,
            &cfg,
            &providers,
            &ContextTemplate::default(),
        )
        .unwrap();
        assert!(got.context.entry_ids.is_empty());
        assert!(got.selected_leaf_ids.is_empty());
        assert_eq!(got.candidate_count, 0);
    }

    #[test]
    fn tree_round_trips_through_json() {
        let m = concept_memory(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
        let cfg = TreeConfig {
            target_leaf_size: 1,
            ..TreeConfig::default()
        };
        let tree = build_tree(&m, &cfg).unwrap();
        let json = serde_json::to_string(&tree).unwrap();
        let back: ConceptTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, tree);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
