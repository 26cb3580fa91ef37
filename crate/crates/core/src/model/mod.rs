//! The region attention graph network.
//!
//! Regions are reduced by a dense layer, refined by `K` graph-attention layers
//! over the [`RegionGraph`](crate::graph::RegionGraph), concatenated along
//! depth, pooled with attention weights derived from mean key/query affinities,
//! and mapped to a `D`-dimensional video embedding by a two-layer head.

mod forward;
mod io;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use forward::{
    attention_pool, depth_concat, elu, elu_derivative, embed_video, embed_video_traced,
    gat_layer_forward, mlp_head, reduce_dims, write_beta_dump, ForwardTrace, HeadOutput,
    LayerOutput, PoolOutput, ReduceOutput,
};
pub use io::{load_checkpoint, load_params, save_checkpoint, save_params, PARAMS_MAGIC, PARAMS_VERSION};

/// How a graph-attention layer combines its neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegionAggregation {
    #[default]
    Attention,
    Max,
    Average,
}

/// How region embeddings are pooled into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Attention,
    Max,
    Average,
}

/// Which region representations are concatenated before pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConcatMode {
    /// Input descriptors, reduced descriptors and every attention layer.
    #[default]
    All,
    /// Output of the last attention layer only.
    FinalLayer,
    /// Every attention layer output.
    AllLayers,
    /// Reduced descriptors and every attention layer output.
    AllLayersAndReduced,
}

macro_rules! enum_codes {
    ($ty:ty { $($variant:ident = $code:literal, $name:literal;)* }) => {
        impl $ty {
            pub(crate) fn code(self) -> u8 {
                match self { $(Self::$variant => $code,)* }
            }
            pub(crate) fn from_code(code: u8) -> Option<Self> {
                match code { $($code => Some(Self::$variant),)* _ => None }
            }
            pub fn name(self) -> &'static str {
                match self { $(Self::$variant => $name,)* }
            }
        }
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s { $($name => Ok(Self::$variant),)* _ => Err(format!("unknown value {s:?}")) }
            }
        }
    };
}

enum_codes!(RegionAggregation { Attention = 0, "attention"; Max = 1, "max"; Average = 2, "average"; });
enum_codes!(Pooling { Attention = 0, "attention"; Max = 1, "max"; Average = 2, "average"; });
enum_codes!(ConcatMode {
    All = 0, "all";
    FinalLayer = 1, "final";
    AllLayers = 2, "layers";
    AllLayersAndReduced = 3, "layers-reduced";
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Channels of the input region descriptors (`C`).
    pub input_dim: usize,
    /// Width after reduction and of every attention layer (`C'`).
    pub hidden_dim: usize,
    /// Number of graph-attention layers (`K`).
    pub layers: usize,
    /// Video embedding size (`D`).
    pub embed_dim: usize,
    /// Share the query transform as the key transform.
    pub attention_tied: bool,
    pub region_agg: RegionAggregation,
    pub pooling: Pooling,
    pub concat: ConcatMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 3840,
            hidden_dim: 512,
            layers: 3,
            embed_dim: 4096,
            attention_tied: false,
            region_agg: RegionAggregation::Attention,
            pooling: Pooling::Attention,
            concat: ConcatMode::All,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be >= 1".into()));
        }
        if self.layers == 0 && matches!(self.concat, ConcatMode::FinalLayer | ConcatMode::AllLayers)
        {
            return Err(Error::InvalidConfig(format!(
                "concat mode {:?} needs at least one attention layer",
                self.concat
            )));
        }
        Ok(())
    }

    /// Width of a concatenated region row.
    pub fn concat_width(&self) -> usize {
        let (c, h, k) = (self.input_dim, self.hidden_dim, self.layers);
        match self.concat {
            ConcatMode::All => c + (k + 1) * h,
            ConcatMode::FinalLayer => h,
            ConcatMode::AllLayers => k * h,
            ConcatMode::AllLayersAndReduced => (k + 1) * h,
        }
    }
}

/// Dense layer `y = x W + b`, `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Self {
        let bound = glorot_bound(inputs, outputs);
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || {
            rng.random_range(-bound..bound)
        });
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    /// Row-wise application to an `N x in` matrix.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn apply_vec(&self, x: &Array1<f64>) -> Array1<f64> {
        x.dot(&self.weight) + &self.bias
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs(), self.outputs())
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Half-width of the Glorot uniform range for an `inputs x outputs` matrix.
pub fn glorot_bound(inputs: usize, outputs: usize) -> f64 {
    (6.0 / (inputs + outputs) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    pub query: Linear,
    /// Unused when the configuration ties keys to queries.
    pub key: Linear,
    pub output: Linear,
}

/// Every learnable tensor of the network. Also used, with the same shapes, for
/// gradients and optimiser moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub reduce: Linear,
    pub layers: Vec<GatLayerParams>,
    /// Maps the `K` mean affinities of a region to its pooling logit.
    pub attention: Linear,
    pub mlp_hidden: Linear,
    pub mlp_out: Linear,
}

impl Weights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        Self {
            reduce: Linear::zeros(config.input_dim, h),
            layers: (0..config.layers)
                .map(|_| GatLayerParams {
                    query: Linear::zeros(h, h),
                    key: Linear::zeros(h, h),
                    output: Linear::zeros(h, h),
                })
                .collect(),
            attention: Linear::zeros(config.layers, 1),
            mlp_hidden: Linear::zeros(config.concat_width(), config.embed_dim),
            mlp_out: Linear::zeros(config.embed_dim, config.embed_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            reduce: self.reduce.zeros_like(),
            layers: self
                .layers
                .iter()
                .map(|l| GatLayerParams {
                    query: l.query.zeros_like(),
                    key: l.key.zeros_like(),
                    output: l.output.zeros_like(),
                })
                .collect(),
            attention: self.attention.zeros_like(),
            mlp_hidden: self.mlp_hidden.zeros_like(),
            mlp_out: self.mlp_out.zeros_like(),
        }
    }

    /// Layers in a fixed canonical order, with stable names.
    pub fn named_linears(&self) -> Vec<(String, &Linear)> {
        let mut out = vec![("reduce".to_string(), &self.reduce)];
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("gat{}.query", k + 1), &l.query));
            out.push((format!("gat{}.key", k + 1), &l.key));
            out.push((format!("gat{}.output", k + 1), &l.output));
        }
        out.push(("attention".to_string(), &self.attention));
        out.push(("mlp.hidden".to_string(), &self.mlp_hidden));
        out.push(("mlp.out".to_string(), &self.mlp_out));
        out
    }

    pub fn linears(&self) -> Vec<&Linear> {
        self.named_linears().into_iter().map(|(_, l)| l).collect()
    }

    pub fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut out = vec![&mut self.reduce];
        for l in &mut self.layers {
            out.push(&mut l.query);
            out.push(&mut l.key);
            out.push(&mut l.output);
        }
        out.push(&mut self.attention);
        out.push(&mut self.mlp_hidden);
        out.push(&mut self.mlp_out);
        out
    }

    /// Every scalar, canonical order: per layer, weight row-major then bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.linears()
            .into_iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn len(&self) -> usize {
        self.linears().iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.linears().iter().all(|l| l.is_finite())
    }

    /// Sum of squares of every scalar.
    pub fn squared_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    pub(crate) fn shapes_match(&self, other: &Weights) -> bool {
        let (a, b) = (self.linears(), other.linears());
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.weight.dim() == y.weight.dim() && x.bias.len() == y.bias.len())
    }

    /// `self += scale * other`, element-wise.
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for (a, b) in self.linears_mut().into_iter().zip(other.linears()) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }
}

static NEXT_PARAMS_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_PARAMS_ID.fetch_add(1, Ordering::Relaxed)
}

/// Network configuration plus weights. Every mutable borrow of the weights
/// assigns a new identity, so forward traces can tell which parameter state
/// produced them.
#[derive(Debug)]
pub struct ModelParams {
    config: ModelConfig,
    weights: Weights,
    id: u64,
}

impl Clone for ModelParams {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            weights: self.weights.clone(),
            id: self.id,
        }
    }
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.weights == other.weights
    }
}

impl ModelParams {
    pub fn from_weights(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        if !weights.shapes_match(&Weights::zeros(&config)) {
            return Err(Error::ShapeMismatch("weights do not match configuration".into()));
        }
        if !weights.is_finite() {
            return Err(Error::InvalidInput("weights contain non-finite values".into()));
        }
        Ok(Self {
            config,
            weights,
            id: fresh_id(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights {
        self.id = fresh_id();
        &mut self.weights
    }

    /// Identity of the current parameter state.
    pub fn id(&self) -> u64 {
        self.id
    }
}

/// Glorot-uniform initialisation with zero biases. Deterministic in `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;
    let reduce = Linear::glorot(&mut rng, config.input_dim, h);
    let layers = (0..config.layers)
        .map(|_| GatLayerParams {
            query: Linear::glorot(&mut rng, h, h),
            key: Linear::glorot(&mut rng, h, h),
            output: Linear::glorot(&mut rng, h, h),
        })
        .collect();
    let attention = if config.layers == 0 {
        Linear::zeros(0, 1)
    } else {
        Linear::glorot(&mut rng, config.layers, 1)
    };
    let mlp_hidden = Linear::glorot(&mut rng, config.concat_width(), config.embed_dim);
    let mlp_out = Linear::glorot(&mut rng, config.embed_dim, config.embed_dim);
    ModelParams::from_weights(
        config.clone(),
        Weights {
            reduce,
            layers,
            attention,
            mlp_hidden,
            mlp_out,
        },
    )
}
