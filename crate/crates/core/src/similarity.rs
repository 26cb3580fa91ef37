//! Cosine similarity with a total definition: vectors with norm below
//! [`ZERO_NORM`] compare as 0 with everything.

pub const ZERO_NORM: f64 = 1e-12;

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    finish(dot, uu, vv)
}

/// Same as [`cosine_similarity`] on single-precision storage, accumulated in f64.
pub fn cosine_similarity_f32(u: &[f32], v: &[f32]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    finish(dot, uu, vv)
}

#[inline]
fn finish(dot: f64, uu: f64, vv: f64) -> f64 {
    if uu.sqrt() < ZERO_NORM || vv.sqrt() < ZERO_NORM {
        return 0.0;
    }
    // One square root of the product keeps c(u, u) exactly 1: sqrt(x * x) == x
    // under correct rounding, and the dot product then equals the squared norm.
    let denom = (uu * vv).sqrt();
    let denom = if denom.is_finite() && denom > 0.0 {
        denom
    } else {
        uu.sqrt() * vv.sqrt()
    };
    (dot / denom).clamp(-1.0, 1.0)
}
