use crate::error::{Error, Result};
use crate::tensor::Real;

/// `a·b / max(‖a‖‖b‖, stabilizer)`.
pub fn cosine_similarity(a: &[Real], b: &[Real], stabilizer: Real) -> Result<Real> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine_similarity lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_parts(a, b, stabilizer).0)
}

/// `(similarity, dot, |a|², |b|², denominator)`.
pub(crate) fn cosine_parts(a: &[Real], b: &[Real], stabilizer: Real) -> (Real, Real, Real, Real, Real) {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (na.sqrt() * nb.sqrt()).max(stabilizer);
    (dot / denom, dot, na, nb, denom)
}

/// Gradients of cosine similarity w.r.t. both operands.
pub(crate) fn cosine_backward(a: &[Real], b: &[Real], stabilizer: Real, grad: Real) -> (Vec<Real>, Vec<Real>) {
    let (s, _, na, nb, denom) = cosine_parts(a, b, stabilizer);
    let clamped = na.sqrt() * nb.sqrt() <= stabilizer;
    let da = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let mut d = y / denom;
            if !clamped {
                d -= s * x / na;
            }
            grad * d
        })
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let mut d = x / denom;
            if !clamped {
                d -= s * y / nb;
            }
            grad * d
        })
        .collect();
    (da, db)
}
