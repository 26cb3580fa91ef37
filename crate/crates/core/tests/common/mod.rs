#![allow(dead_code)]

pub mod checks;
pub mod invariants;
pub mod reference;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vrag::model::{
    embed_video, embed_video_traced, init_params, ConcatMode, ModelConfig, ModelParams, Pooling,
    RegionAggregation, Weights,
};
use vrag::training::{backward, triplet_loss};
use vrag::RegionFeatureTensor;

pub fn random_tensor(rng: &mut ChaCha8Rng, id: &str, t: usize, r: usize, c: usize) -> RegionFeatureTensor {
    let data = (0..t * r * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    RegionFeatureTensor::new(id, t, r, c, data).unwrap()
}

/// Glorot weights with non-zero biases, so bias gradients are exercised too.
pub fn random_params(rng: &mut ChaCha8Rng, config: &ModelConfig) -> ModelParams {
    let mut params = init_params(config, rng.random()).unwrap();
    for l in params.weights_mut().linears_mut() {
        l.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    params
}

pub const AGGREGATIONS: [RegionAggregation; 3] =
    [RegionAggregation::Attention, RegionAggregation::Average, RegionAggregation::Max];
pub const POOLINGS: [Pooling; 3] = [Pooling::Attention, Pooling::Average, Pooling::Max];
pub const CONCATS: [ConcatMode; 4] = [
    ConcatMode::All,
    ConcatMode::FinalLayer,
    ConcatMode::AllLayers,
    ConcatMode::AllLayersAndReduced,
];

/// A tiny random configuration; `variant` cycles through every ablation.
pub fn tiny_config(rng: &mut ChaCha8Rng, variant: usize) -> ModelConfig {
    let concat = CONCATS[variant % 4];
    let min_layers = usize::from(matches!(concat, ConcatMode::FinalLayer | ConcatMode::AllLayers));
    ModelConfig {
        input_dim: rng.random_range(1..=4),
        hidden_dim: rng.random_range(1..=3),
        layers: rng.random_range(min_layers.max(1)..=2),
        embed_dim: rng.random_range(2..=3),
        attention_tied: variant / 4 % 2 == 1,
        region_agg: AGGREGATIONS[variant / 8 % 3],
        pooling: POOLINGS[variant / 24 % 3],
        concat,
    }
}

fn scalar_mut(w: &mut Weights, mut idx: usize) -> &mut f64 {
    for l in w.linears_mut() {
        if idx < l.weight.len() {
            return l.weight.iter_mut().nth(idx).unwrap();
        }
        idx -= l.weight.len();
        if idx < l.bias.len() {
            return &mut l.bias[idx];
        }
        idx -= l.bias.len();
    }
    panic!("parameter index out of range")
}

fn triplet(params: &ModelParams, videos: &[RegionFeatureTensor; 3], margin: f64) -> f64 {
    let e: Vec<Vec<f64>> = videos.iter().map(|v| embed_video(params, v).unwrap().to_vec()).collect();
    triplet_loss(&e[0], &e[1], &e[2], margin)
}

#[derive(Debug)]
pub struct GradientReport {
    pub config: ModelConfig,
    pub parameters: usize,
    pub failures: Vec<(usize, f64, f64)>,
    pub worst_relative: f64,
}

/// Compares every analytic parameter gradient of one random triplet against
/// central differences. A parameter passes when the two agree to relative
/// `1e-4` or absolute `1e-8`.
pub fn gradient_instance(rng: &mut ChaCha8Rng, variant: usize) -> GradientReport {
    let config = tiny_config(rng, variant);
    let params = random_params(rng, &config);
    let c = config.input_dim;
    let mut video = |id: &str| {
        let (t, r) = (rng.random_range(1..=3), rng.random_range(1..=2));
        random_tensor(rng, id, t, r, c)
    };
    let videos = [video("a"), video("p"), video("n")];
    // Cosines lie in [-1, 1], so this margin keeps the hinge active.
    let margin = 5.0;
    let traces: Vec<_> = videos.iter().map(|v| embed_video_traced(&params, v).unwrap()).collect();
    let (_, grads) = backward(&params, &traces[0], &traces[1], &traces[2], margin).unwrap();
    let analytic: Vec<f64> = grads.values().collect();
    let h = 1e-6;
    let mut failures = Vec::new();
    let mut worst_relative: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        *scalar_mut(plus.weights_mut(), i) += h;
        let mut minus = params.clone();
        *scalar_mut(minus.weights_mut(), i) -= h;
        let fd = (triplet(&plus, &videos, margin) - triplet(&minus, &videos, margin)) / (2.0 * h);
        let err = (fd - a).abs();
        if err <= 1e-8 {
            continue;
        }
        let rel = err / fd.abs().max(a.abs());
        worst_relative = worst_relative.max(rel);
        if rel > 1e-4 {
            failures.push((i, a, fd));
        }
    }
    GradientReport {
        config,
        parameters: analytic.len(),
        failures,
        worst_relative,
    }
}
