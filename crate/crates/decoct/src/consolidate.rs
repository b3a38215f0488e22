//! Clustering-based memory consolidation: Lloyd's k-means with seeded
//! k-means++ initialization over α-blended embeddings, then one
//! centroid-nearest representative per cluster.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Memory, MemoryKind};
use crate::vector::{blend_embedding, dist2, mean, Vector};

/// Parameters for one k-means run.
#[derive(Debug, Clone)]
pub struct KmeansParams {
    pub seed: u64,
    pub max_iters: u32,
    /// Convergence threshold on the largest centroid movement.
    pub tol: f64,
    /// Independent seeded runs; the lowest-objective run wins.
    pub restarts: u32,
}

impl Default for KmeansParams {
    fn default() -> Self {
        KmeansParams {
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// Cluster index per point. Every cluster is nonempty.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vector>,
    /// Sum of squared Euclidean distances to assigned centroids.
    pub objective: f64,
    pub iterations: u32,
}

fn nearest(point: &Vector, centroids: &[Vector]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(point, c).expect("equal dims");
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

/// k-means++: first center uniform, then each next center sampled with
/// probability proportional to squared distance from the chosen set.
fn kmeanspp_init(points: &[Vector], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let n = points.len();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| dist2(p, &points[chosen[0]]).expect("equal dims"))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // all remaining mass is on already-chosen points; take the
            // first index not yet used
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
            let d = dist2(p, &points[next]).expect("equal dims");
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Reassigns, for each empty cluster, the point currently farthest from
/// its own centroid (ties to the lowest index; sole cluster members are
/// exempt so the repair cannot empty another cluster).
fn repair_empty_clusters(
    points: &[Vector],
    assignments: &mut [usize],
    centroids: &mut [Vector],
) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut farthest: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[assignments[i]] <= 1 {
                continue;
            }
            let d = dist2(p, &centroids[assignments[i]]).expect("equal dims");
            match farthest {
                Some((_, best)) if d <= best => {}
                _ => farthest = Some((i, d)),
            }
        }
        let Some((idx, _)) = farthest else {
            return;
        };
        centroids[empty] = points[idx].clone();
        assignments[idx] = empty;
    }
}

fn lloyd_once(points: &[Vector], k: usize, params: &KmeansParams, seed: u64) -> KmeansResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp_init(points, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut iterations = 0;
    for iter in 0..params.max_iters {
        iterations = iter + 1;
        for (i, p) in points.iter().enumerate() {
            assignments[i] = nearest(p, &centroids).0;
        }
        repair_empty_clusters(points, &mut assignments, &mut centroids);
        let mut movement: f64 = 0.0;
        for j in 0..k {
            let members: Vec<&Vector> = points
                .iter()
                .enumerate()
                .filter(|(i, _)| assignments[*i] == j)
                .map(|(_, p)| p)
                .collect();
            let new_centroid = mean(&members).expect("cluster nonempty after repair");
            movement = movement.max(dist2(&centroids[j], &new_centroid).unwrap().sqrt());
            centroids[j] = new_centroid;
        }
        if movement < params.tol {
            break;
        }
    }
    let objective = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| dist2(p, &centroids[a]).unwrap())
        .sum();
    KmeansResult {
        assignments,
        centroids,
        objective,
        iterations,
    }
}

/// Seeded k-means over the given points; deterministic for a fixed seed.
pub fn kmeans(points: &[Vector], k: usize, params: &KmeansParams) -> Result<KmeansResult> {
    if k < 1 || k > points.len() {
        return Err(Error::InvalidK {
            k,
            n: points.len(),
        });
    }
    let dim = points[0].dim();
    if let Some(p) = points.iter().find(|p| p.dim() != dim) {
        return Err(Error::DimMismatch {
            left: p.dim(),
            right: dim,
        });
    }
    let mut best: Option<KmeansResult> = None;
    for r in 0..params.restarts.max(1) {
        let run = lloyd_once(points, k, params, params.seed.wrapping_add(u64::from(r)));
        match &best {
            Some(b) if run.objective >= b.objective => {}
            _ => best = Some(run),
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Consolidation settings. `alpha` weights the lesson embedding in the
/// blend; `target_size` is the consolidated entry count Ñ.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ConsolidationConfig {
    pub target_size: usize,
    pub alpha: f64,
    pub seed: u64,
    pub max_iters: u32,
    pub tol: f64,
}

impl ConsolidationConfig {
    pub fn new(target_size: usize) -> Self {
        ConsolidationConfig {
            target_size,
            alpha: 0.5,
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// Compresses a lesson memory to `Ñ = target_size` entries: k-means over
/// blended embeddings, then the centroid-nearest member per cluster (ties
/// to the lowest entry index). Output entries are verbatim members of the
/// input, in input order.
pub fn consolidate(memory: &Memory, config: &ConsolidationConfig) -> Result<Memory> {
    let n = memory.len();
    if config.target_size < 1 || config.target_size > n {
        return Err(Error::InvalidK {
            k: config.target_size,
            n,
        });
    }
    let mut blended = Vec::with_capacity(n);
    for entry in &memory.entries {
        let payload = entry
            .payload_embedding
            .as_ref()
            .ok_or_else(|| Error::MissingEmbedding {
                entry_id: entry.id.clone(),
                which: "payload",
            })?;
        blended.push(blend_embedding(
            &entry.problem_embedding,
            payload,
            config.alpha,
        )?);
    }
    let params = KmeansParams {
        seed: config.seed,
        max_iters: config.max_iters,
        tol: config.tol,
        restarts: 1,
    };
    let result = kmeans(&blended, config.target_size, &params)?;
    let representatives = select_representatives(&blended, &result);

    let mut out = Memory::new(
        format!("{}-consolidated-{}", memory.id, config.target_size),
        MemoryKind::Consolidated,
    );
    out.provenance = memory.provenance.clone();
    out.push_provenance(&format!(
        "consolidate: source={} n={} target_size={} alpha={} seed={}",
        memory.id, n, config.target_size, config.alpha, config.seed
    ));
    for idx in representatives {
        out.entries.push(memory.entries[idx].clone());
    }
    Ok(out)
}

/// Lowest-index member nearest to each cluster centroid, returned in
/// ascending entry order.
pub fn select_representatives(points: &[Vector], result: &KmeansResult) -> Vec<usize> {
    let k = result.centroids.len();
    let mut reps: Vec<Option<(usize, f64)>> = vec![None; k];
    for (i, p) in points.iter().enumerate() {
        let j = result.assignments[i];
        let d = dist2(p, &result.centroids[j]).expect("equal dims");
        match reps[j] {
            Some((_, best)) if d >= best => {}
            _ => reps[j] = Some((i, d)),
        }
    }
    let mut out: Vec<usize> = reps
        .into_iter()
        .flatten()
        .map(|(i, _)| i)
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MemoryEntry, PayloadKind};
    use crate::vector::normalize;

    fn v(values: &[f64]) -> Vector {
        Vector::new(values.to_vec()).unwrap()
    }

    fn params(seed: u64) -> KmeansParams {
        KmeansParams {
            seed,
            ..KmeansParams::default()
        }
    }

    #[test]
    fn separable_pair_gets_singleton_clusters() {
        let pts = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let r = kmeans(&pts, 2, &params(1)).unwrap();
        assert_ne!(r.assignments[0], r.assignments[1]);
        assert!(r.objective.abs() < 1e-12);
        let c0 = &r.centroids[r.assignments[0]];
        assert_eq!(c0, &pts[0]);
    }

    #[test]
    fn near_pair_coclusters_against_brute_force() {
        let pts = [
            v(&[1.0, 0.0]),
            normalize(&v(&[0.99, 0.14])).unwrap(),
            v(&[0.0, 1.0]),
        ];
        let r = kmeans(&pts, 2, &params(3)).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        // brute force over the three 2-partitions
        let mut best = f64::INFINITY;
        for split in [[0, 0, 1], [0, 1, 0], [0, 1, 1]] {
            let mut sse = 0.0;
            for part in 0..2 {
                let members: Vec<&Vector> = pts
                    .iter()
                    .zip(split)
                    .filter(|(_, s)| *s == part)
                    .map(|(p, _)| p)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let c = mean(&members).unwrap();
                sse += members.iter().map(|m| dist2(m, &c).unwrap()).sum::<f64>();
            }
            best = best.min(sse);
        }
        assert!((r.objective - best).abs() < 1e-9);
    }

    #[test]
    fn k_equals_n_gives_zero_objective() {
        let pts = [v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.5, 0.5])];
        let r = kmeans(&pts, 3, &params(7)).unwrap();
        assert!(r.objective.abs() < 1e-12);
        let mut seen: Vec<usize> = r.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn invalid_k_is_rejected() {
        let pts = [v(&[1.0, 0.0])];
        assert!(matches!(
            kmeans(&pts, 0, &params(0)),
            Err(Error::InvalidK { k: 0, n: 1 })
        ));
        assert!(matches!(
            kmeans(&pts, 2, &params(0)),
            Err(Error::InvalidK { k: 2, n: 1 })
        ));
    }

    #[test]
    fn duplicate_points_still_fill_all_clusters() {
        let pts = [v(&[1.0, 0.0]), v(&[1.0, 0.0]), v(&[1.0, 0.0])];
        let r = kmeans(&pts, 2, &params(11)).unwrap();
        let mut counts = [0usize; 2];
        for &a in &r.assignments {
            counts[a] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        assert!(r.objective.abs() < 1e-12);
    }

    #[test]
    fn kmeans_deterministic_for_seed() {
        let pts: Vec<Vector> = (0..12)
            .map(|i| {
                let a = i as f64 * 0.37;
                normalize(&v(&[a.cos(), a.sin(), 0.2])).unwrap()
            })
            .collect();
        let a = kmeans(&pts, 3, &params(5)).unwrap();
        let b = kmeans(&pts, 3, &params(5)).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
    }

    fn lesson_memory(embs: &[(Vec<f64>, Vec<f64>)]) -> Memory {
        let mut m = Memory::new("m", MemoryKind::Lesson);
        for (i, (pe, le)) in embs.iter().enumerate() {
            m.entries.push(MemoryEntry {
                id: format!("e{i}"),
                problem: format!("p{i}"),
                payload_kind: PayloadKind::Lesson,
                payload: format!("l{i}"),
                problem_embedding: v(pe),
                payload_embedding: Some(v(le)),
                concept_description: None,
                concept_embedding: None,
            });
        }
        m
    }

    #[test]
    fn consolidate_at_full_size_is_identity() {
        let m = lesson_memory(&[
            (vec![1.0, 0.0], vec![1.0, 0.0]),
            (vec![0.0, 1.0], vec![0.0, 1.0]),
            (vec![0.6, 0.8], vec![0.6, 0.8]),
        ]);
        let out = consolidate(&m, &ConsolidationConfig::new(3)).unwrap();
        assert_eq!(out.len(), 3);
        for (a, b) in out.entries.iter().zip(&m.entries) {
            assert_eq!(a, b);
        }
        assert_eq!(out.kind, MemoryKind::Consolidated);
        assert!(out.provenance.contains("target_size=3"));
    }

    #[test]
    fn consolidate_tie_keeps_lowest_index() {
        // both entries equidistant from the centroid [0.5, 0.5]
        let m = lesson_memory(&[
            (vec![1.0, 0.0], vec![1.0, 0.0]),
            (vec![0.0, 1.0], vec![0.0, 1.0]),
        ]);
        let out = consolidate(&m, &ConsolidationConfig::new(1)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.entries[0].id, "e0");
    }

    #[test]
    fn consolidate_requires_payload_embeddings() {
        let mut m = lesson_memory(&[(vec![1.0, 0.0], vec![1.0, 0.0])]);
        m.entries[0].payload_embedding = None;
        assert!(matches!(
            consolidate(&m, &ConsolidationConfig::new(1)),
            Err(Error::MissingEmbedding { .. })
        ));
    }

    #[test]
    fn consolidate_is_deterministic() {
        let embs: Vec<(Vec<f64>, Vec<f64>)> = (0..10)
            .map(|i| {
                let a = i as f64;
                let p = normalize(&v(&[a.cos(), a.sin()])).unwrap();
                let l = normalize(&v(&[(a * 0.5).cos(), (a * 0.5).sin()])).unwrap();
                (p.as_slice().to_vec(), l.as_slice().to_vec())
            })
            .collect();
        let m = lesson_memory(&embs);
        let cfg = ConsolidationConfig {
            seed: 42,
            ..ConsolidationConfig::new(4)
        };
        let a = consolidate(&m, &cfg).unwrap();
        let b = consolidate(&m, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
