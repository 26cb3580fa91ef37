//! Dense, loop-based re-implementations of the engine. They build every
//! `N x N` matrix explicitly and share no code with the library beyond the
//! parameter containers.

use std::collections::BTreeSet;

use vrag::model::{ConcatMode, Linear, ModelParams, Pooling, RegionAggregation};
use vrag::RegionFeatureTensor;

pub type Mat = Vec<Vec<f64>>;

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn linear(l: &Linear, x: &Mat) -> Mat {
    x.iter()
        .map(|row| {
            (0..l.weight.ncols())
                .map(|o| l.bias[o] + (0..row.len()).map(|i| row[i] * l.weight[[i, o]]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `true` where node `j` lies within one frame of node `i`.
pub fn adjacency(frames: usize, regions: usize) -> Vec<Vec<bool>> {
    let n = frames * regions;
    (0..n)
        .map(|i| (0..n).map(|j| (i / regions).abs_diff(j / regions) <= 1).collect())
        .collect()
}

pub struct DenseLayer {
    /// `N x N` aggregation weights, zero outside the neighbourhood. Empty for
    /// max aggregation.
    pub weights: Mat,
    /// Full `N x N` query-key affinity matrix.
    pub affinity: Mat,
    pub output: Mat,
}

pub fn dense_layer(params: &ModelParams, k: usize, frames: usize, regions: usize, input: &Mat) -> DenseLayer {
    let cfg = params.config();
    let lp = &params.weights().layers[k];
    let n = frames * regions;
    let mask = adjacency(frames, regions);
    let a = linear(&lp.query, input);
    let b = if cfg.attention_tied { a.clone() } else { linear(&lp.key, input) };
    let affinity: Mat = (0..n).map(|i| (0..n).map(|j| dot(&a[i], &b[j])).collect()).collect();
    let width = input[0].len();
    let mut weights: Mat = Vec::new();
    let message: Mat = match cfg.region_agg {
        RegionAggregation::Attention | RegionAggregation::Average => {
            weights = (0..n)
                .map(|i| {
                    let logits: Vec<f64> = (0..n)
                        .map(|j| match (mask[i][j], cfg.region_agg) {
                            (false, _) => f64::NEG_INFINITY,
                            (true, RegionAggregation::Attention) => affinity[i][j],
                            (true, _) => 0.0,
                        })
                        .collect();
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    let z: f64 = e.iter().sum();
                    e.iter().map(|v| v / z).collect()
                })
                .collect();
            (0..n)
                .map(|i| (0..width).map(|c| (0..n).map(|j| weights[i][j] * input[j][c]).sum()).collect())
                .collect()
        }
        RegionAggregation::Max => (0..n)
            .map(|i| {
                (0..width)
                    .map(|c| {
                        (0..n)
                            .filter(|&j| mask[i][j])
                            .map(|j| input[j][c])
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect()
            })
            .collect(),
    };
    let output = linear(&lp.output, &message)
        .into_iter()
        .map(|row| row.into_iter().map(elu).collect())
        .collect();
    DenseLayer {
        weights,
        affinity,
        output,
    }
}

pub struct DenseForward {
    pub regions: Mat,
    pub layers: Vec<DenseLayer>,
    pub beta: Vec<f64>,
    pub pooled: Vec<f64>,
    pub embedding: Vec<f64>,
}

pub fn input_matrix(tensor: &RegionFeatureTensor) -> Mat {
    tensor
        .data()
        .chunks(tensor.channels())
        .map(|c| c.iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// The whole network with pooling weights derived from the dense affinity
/// matrices: `beta = softmax_i(f_att(mean_j A_ij))`.
pub fn dense_forward(params: &ModelParams, tensor: &RegionFeatureTensor) -> DenseForward {
    let cfg = params.config();
    let w = params.weights();
    let (t, r) = (tensor.frames(), tensor.regions());
    let n = t * r;
    let x = input_matrix(tensor);
    let x0: Mat = linear(&w.reduce, &x)
        .into_iter()
        .map(|row| row.into_iter().map(elu).collect())
        .collect();
    let mut layers: Vec<DenseLayer> = Vec::new();
    for k in 0..cfg.layers {
        let prev = layers.last().map_or(&x0, |l| &l.output);
        let next = dense_layer(params, k, t, r, prev);
        layers.push(next);
    }
    let mut blocks: Vec<&Mat> = Vec::new();
    match cfg.concat {
        ConcatMode::All => {
            blocks.push(&x);
            blocks.push(&x0);
            blocks.extend(layers.iter().map(|l| &l.output));
        }
        ConcatMode::FinalLayer => blocks.push(&layers.last().unwrap().output),
        ConcatMode::AllLayers => blocks.extend(layers.iter().map(|l| &l.output)),
        ConcatMode::AllLayersAndReduced => {
            blocks.push(&x0);
            blocks.extend(layers.iter().map(|l| &l.output));
        }
    }
    let regions: Mat = (0..n)
        .map(|i| blocks.iter().flat_map(|b| b[i].iter().copied()).collect())
        .collect();
    let width = regions[0].len();

    let (beta, pooled) = match cfg.pooling {
        Pooling::Attention | Pooling::Average => {
            let logits: Vec<f64> = (0..n)
                .map(|i| {
                    if cfg.pooling == Pooling::Average {
                        return 0.0;
                    }
                    let mut z = w.attention.bias[0];
                    for (k, l) in layers.iter().enumerate() {
                        let alpha = l.affinity[i].iter().sum::<f64>() / n as f64;
                        z += alpha * w.attention.weight[[k, 0]];
                    }
                    z
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let s: f64 = e.iter().sum();
            let beta: Vec<f64> = e.iter().map(|v| v / s).collect();
            let pooled: Vec<f64> = (0..width).map(|c| (0..n).map(|i| beta[i] * regions[i][c]).sum()).collect();
            (beta, pooled)
        }
        Pooling::Max => (
            Vec::new(),
            (0..width)
                .map(|c| (0..n).map(|i| regions[i][c]).fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        ),
    };
    let hidden: Vec<f64> = linear(&w.mlp_hidden, &vec![pooled.clone()])
        .remove(0)
        .into_iter()
        .map(elu)
        .collect();
    let embedding = linear(&w.mlp_out, &vec![hidden]).remove(0);
    DenseForward {
        regions,
        layers,
        beta,
        pooled,
        embedding,
    }
}

pub fn chamfer_naive(s: &Mat) -> f64 {
    let mut total = 0.0;
    for row in s {
        let mut best = f64::NEG_INFINITY;
        for &v in row {
            if v > best {
                best = v;
            }
        }
        total += best;
    }
    total / s.len() as f64
}

pub fn symmetric_chamfer_naive(s: &Mat) -> f64 {
    let transposed: Mat = (0..s[0].len()).map(|j| s.iter().map(|row| row[j]).collect()).collect();
    (chamfer_naive(s) + chamfer_naive(&transposed)) / 2.0
}

/// AP by recounting the hits in every prefix that ends on a positive.
pub fn ap_quadratic(order: &[&str], positives: &BTreeSet<&str>) -> f64 {
    let mut sum = 0.0;
    for p in 0..order.len() {
        if positives.contains(order[p]) {
            let hits = (0..=p).filter(|&i| positives.contains(order[i])).count();
            sum += hits as f64 / (p + 1) as f64;
        }
    }
    sum / positives.len() as f64
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
