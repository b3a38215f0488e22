//! Exact vector arithmetic for embeddings.
//!
//! All stored embeddings are unit-normalized at ingestion, so the inner
//! product and cosine similarity coincide everywhere downstream. Entries
//! are finite f64 by construction; degenerate (all-zero) embeddings are
//! rejected, not repaired.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance within which a vector counts as unit-norm.
pub const UNIT_TOL: f64 = 1e-9;

/// A dense embedding vector of finite f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidVector("empty value list".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidVector(format!("non-finite entry {bad}")));
        }
        Ok(Vector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// True when the Euclidean norm is within [`UNIT_TOL`] of 1.
    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOL
    }
}

fn check_dims(a: &Vector, b: &Vector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Scales `v` to unit Euclidean norm, preserving direction.
///
/// Fails with [`Error::ZeroVector`] when every entry is zero, which signals
/// a degenerate embedding the caller must reject.
pub fn normalize(v: &Vector) -> Result<Vector> {
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(Vector(v.0.iter().map(|x| x / norm).collect()))
}

/// Standard dot product. Equals cosine similarity for unit vectors.
pub fn inner(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

/// Cosine similarity for arbitrary nonzero vectors.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(inner(a, b)? / (na * nb))
}

/// Convex blend of a problem embedding and a lesson embedding:
/// `normalize((1 - alpha) * ex + alpha * el)`.
///
/// `alpha` controls the lesson-semantics contribution. Antipodal inputs at
/// alpha = 0.5 cancel and fail with [`Error::ZeroVector`].
pub fn blend_embedding(ex: &Vector, el: &Vector, alpha: f64) -> Result<Vector> {
    check_dims(ex, el)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    let mixed: Vec<f64> = ex
        .0
        .iter()
        .zip(&el.0)
        .map(|(x, l)| (1.0 - alpha) * x + alpha * l)
        .collect();
    normalize(&Vector(mixed))
}

/// Mean of a nonempty set of equal-dimension vectors.
pub fn mean(vectors: &[&Vector]) -> Result<Vector> {
    let first = vectors.first().ok_or(Error::EmptyInput)?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        check_dims(first, v)?;
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok(Vector(acc))
}

/// Squared Euclidean distance.
pub fn dist2(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn v(values: &[f64]) -> Vector {
        Vector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn normalize_exact_cases() {
        assert_eq!(normalize(&v(&[3.0, 4.0])).unwrap(), v(&[0.6, 0.8]));
        assert_eq!(normalize(&v(&[0.0, 1.0])).unwrap(), v(&[0.0, 1.0]));
        assert!(matches!(
            normalize(&v(&[0.0, 0.0])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let dim = rng.random_range(1..16);
            let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            if raw.iter().all(|x| *x == 0.0) {
                continue;
            }
            let once = normalize(&v(&raw)).unwrap();
            let twice = normalize(&once).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn inner_exact_cases() {
        assert_eq!(inner(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(inner(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(inner(&v(&[0.6, 0.8]), &v(&[1.0, 0.0])).unwrap(), 0.6);
        assert!(matches!(
            inner(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::DimMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn inner_symmetric_bilinear_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let dim = rng.random_range(1..12);
            let raw = |rng: &mut ChaCha8Rng| -> Vector {
                loop {
                    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    if x.iter().any(|v| *v != 0.0) {
                        return v(&x);
                    }
                }
            };
            let a = raw(&mut rng);
            let b = raw(&mut rng);
            let c = raw(&mut rng);
            assert_eq!(inner(&a, &b).unwrap(), inner(&b, &a).unwrap());
            // additivity in the first argument
            let sum = Vector::new(
                a.as_slice()
                    .iter()
                    .zip(c.as_slice())
                    .map(|(x, y)| x + y)
                    .collect(),
            )
            .unwrap();
            let lhs = inner(&sum, &b).unwrap();
            let rhs = inner(&a, &b).unwrap() + inner(&c, &b).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12);
            // Cauchy-Schwarz on unit vectors
            let ua = normalize(&a).unwrap();
            let ub = normalize(&b).unwrap();
            assert!(inner(&ua, &ub).unwrap().abs() <= 1.0 + UNIT_TOL);
        }
    }

    #[test]
    fn blend_cases() {
        let ex = v(&[1.0, 0.0]);
        let el = v(&[0.0, 1.0]);
        let half = blend_embedding(&ex, &el, 0.5).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((half.as_slice()[0] - s).abs() <= 1e-12);
        assert!((half.as_slice()[1] - s).abs() <= 1e-12);
        assert_eq!(blend_embedding(&ex, &el, 0.0).unwrap(), ex);
        assert_eq!(blend_embedding(&ex, &el, 1.0).unwrap(), el);
        assert!(matches!(
            blend_embedding(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0]), 0.5),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            blend_embedding(&ex, &el, 1.5),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn blend_boundary_identity_for_unit_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let dim = rng.random_range(1..10);
            let mk = |rng: &mut ChaCha8Rng| -> Vector {
                loop {
                    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    if x.iter().any(|v| *v != 0.0) {
                        return normalize(&v(&x)).unwrap();
                    }
                }
            };
            let ex = mk(&mut rng);
            let el = mk(&mut rng);
            let at0 = blend_embedding(&ex, &el, 0.0).unwrap();
            let at1 = blend_embedding(&ex, &el, 1.0).unwrap();
            for (a, b) in at0.as_slice().iter().zip(ex.as_slice()) {
                assert!((a - b).abs() <= 1e-12);
            }
            for (a, b) in at1.as_slice().iter().zip(el.as_slice()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![f64::NAN]).is_err());
        assert!(Vector::new(vec![f64::INFINITY, 0.0]).is_err());
    }
}
