//! Context-quality and evaluation metrics: avg_m, Δavg_m, relevance,
//! diversity, the combined quality score Q(λ), Pearson correlation, and
//! the λ sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{inner, Vector};

/// Rewards for one query under both conditions, plus per-attempt cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSample {
    pub query_id: String,
    pub rewards_context: Vec<f64>,
    pub rewards_vanilla: Vec<f64>,
    /// Token counts (reasoning) or step counts (agentic), one per attempt.
    #[serde(default)]
    pub efficiency: Vec<f64>,
}

/// Arithmetic mean reward over m attempts.
pub fn avg_m(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// Improvement induced by the context; may be negative.
pub fn delta_avg_m(sample: &EvalSample) -> Result<f64> {
    Ok(avg_m(&sample.rewards_context)? - avg_m(&sample.rewards_vanilla)?)
}

/// Mean inner product between the query embedding and the retrieved
/// entries' embeddings.
pub fn relevance(query_embedding: &Vector, retrieved: &[Vector]) -> Result<f64> {
    if retrieved.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for z in retrieved {
        total += inner(query_embedding, z)?;
    }
    Ok(total / retrieved.len() as f64)
}

/// Negative average pairwise similarity over ordered pairs of distinct
/// retrieved entries. K = 1 returns 0 by convention.
pub fn diversity(retrieved: &[Vector]) -> Result<f64> {
    let k = retrieved.len();
    if k == 0 {
        return Err(Error::EmptyInput);
    }
    if k == 1 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, a) in retrieved.iter().enumerate() {
        for (j, b) in retrieved.iter().enumerate() {
            if i != j {
                total += inner(a, b)?;
            }
        }
    }
    Ok(-total / (k as f64 * (k as f64 - 1.0)))
}

/// Quality score Q = Rel + λ · Div.
pub fn quality(query_embedding: &Vector, retrieved: &[Vector], lambda: f64) -> Result<f64> {
    Ok(relevance(query_embedding, retrieved)? + lambda * diversity(retrieved)?)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// One query's retrieval footprint plus the measured improvement.
#[derive(Debug, Clone)]
pub struct QualitySample {
    pub query_embedding: Vector,
    pub retrieved: Vec<Vector>,
    pub delta_avg_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub points: Vec<LambdaPoint>,
    /// Row with the highest correlation; first such λ on ties.
    pub best: LambdaPoint,
}

/// Correlates Q_λ with Δavg_m for each λ and reports the argmax λ.
pub fn lambda_sweep(samples: &[QualitySample], lambdas: &[f64]) -> Result<LambdaSweep> {
    if samples.len() < 2 {
        return Err(Error::EmptyInput);
    }
    if lambdas.is_empty() {
        return Err(Error::EmptyInput);
    }
    let deltas: Vec<f64> = samples.iter().map(|s| s.delta_avg_m).collect();
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let qs: Vec<f64> = samples
            .iter()
            .map(|s| quality(&s.query_embedding, &s.retrieved, lambda))
            .collect::<Result<_>>()?;
        points.push(LambdaPoint {
            lambda,
            r: pearson(&qs, &deltas)?,
        });
    }
    let best = *points
        .iter()
        .reduce(|acc, p| if p.r > acc.r { p } else { acc })
        .expect("nonempty points");
    Ok(LambdaSweep { points, best })
}

/// Per-query metric row of a scoring run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub query_id: String,
    pub relevance: f64,
    pub diversity: f64,
    pub quality: f64,
    pub delta_avg_m: f64,
}

/// Full scoring report: per-query rows, the overall Q–Δavg_m correlation,
/// and the optional λ sweep. Emitted as JSON and CSV by the CLI; columns
/// are documented in docs/metrics.md.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub lambda: f64,
    pub rows: Vec<ScoreRow>,
    pub pearson_r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<LambdaSweep>,
}

impl ScoreReport {
    /// Plot-ready CSV: the per-query table, then a blank line and the
    /// sweep table when present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,relevance,diversity,quality,delta_avg_m\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.query_id, row.relevance, row.diversity, row.quality, row.delta_avg_m
            ));
        }
        if let Some(sweep) = &self.sweep {
            out.push_str("\nlambda,pearson_r,is_argmax\n");
            for p in &sweep.points {
                let is_best = p.lambda == sweep.best.lambda;
                out.push_str(&format!("{},{},{}\n", p.lambda, p.r, is_best));
            }
        }
        out
    }
}
