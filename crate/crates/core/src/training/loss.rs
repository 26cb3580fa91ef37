use ndarray::Array1;

use crate::similarity::{cosine_similarity, ZERO_NORM};

/// `max(0, c(a, n) - c(a, p) + margin)` over cosine similarities.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    let pos = cosine_similarity(anchor, positive);
    let neg = cosine_similarity(anchor, negative);
    (neg - pos + margin).max(0.0)
}

/// Gradients of `cos(u, v)` with respect to `u` and `v`. Zero when either
/// vector is (numerically) zero, matching the total cosine definition.
pub fn cosine_gradients(u: &Array1<f64>, v: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let nu = u.dot(u).sqrt();
    let nv = v.dot(v).sqrt();
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return (Array1::zeros(u.len()), Array1::zeros(v.len()));
    }
    let c = u.dot(v) / (nu * nv);
    let du = v / (nu * nv) - u * (c / (nu * nu));
    let dv = u / (nu * nv) - v * (c / (nv * nv));
    (du, dv)
}

/// Loss value and its gradients with respect to the three embeddings. An
/// inactive hinge returns exact zeros.
pub fn triplet_loss_gradients(
    anchor: &Array1<f64>,
    positive: &Array1<f64>,
    negative: &Array1<f64>,
    margin: f64,
) -> (f64, [Array1<f64>; 3]) {
    let loss = triplet_loss(
        anchor.as_slice().expect("contiguous"),
        positive.as_slice().expect("contiguous"),
        negative.as_slice().expect("contiguous"),
        margin,
    );
    if loss <= 0.0 {
        let zero = Array1::zeros(anchor.len());
        return (0.0, [zero.clone(), zero.clone(), zero]);
    }
    let (da_pos, dp) = cosine_gradients(anchor, positive);
    let (da_neg, dn) = cosine_gradients(anchor, negative);
    (loss, [da_neg - da_pos, -dp, dn])
}
