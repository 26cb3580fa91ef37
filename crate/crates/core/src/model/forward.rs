use std::io::Write;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::{ConcatMode, ModelConfig, ModelParams, Pooling, RegionAggregation};
use crate::error::{Error, Result};
use crate::features::RegionFeatureTensor;
use crate::graph::{build_region_graph, RegionGraph};

/// ELU with `alpha = 1`.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`] at pre-activation `x`.
#[inline]
pub fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Numerically stable softmax in place. Returns `false` if any input is not finite.
fn softmax_in_place(values: &mut [f64]) -> bool {
    let mut max = f64::NEG_INFINITY;
    for &v in values.iter() {
        if !v.is_finite() {
            return false;
        }
        max = max.max(v);
    }
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
    true
}

#[derive(Debug, Clone)]
pub struct ReduceOutput {
    pub pre_activation: Array2<f64>,
    pub output: Array2<f64>,
}

/// Dense reduction `ELU(X W_r + b_r)` from `C` to `C'` channels.
pub fn reduce_dims(params: &ModelParams, x: &Array2<f64>) -> Result<ReduceOutput> {
    let reduce = &params.weights().reduce;
    if x.ncols() != reduce.inputs() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, model expects {}",
            x.ncols(),
            reduce.inputs()
        )));
    }
    let pre_activation = reduce.apply(x);
    let output = pre_activation.mapv(elu);
    Ok(ReduceOutput {
        pre_activation,
        output,
    })
}

/// Everything one graph-attention layer computes, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    /// `N x C'` query embeddings.
    pub queries: Array2<f64>,
    /// `N x C'` key embeddings (equal to `queries` when tied).
    pub keys: Array2<f64>,
    /// Mean of all key rows.
    pub mean_key: Array1<f64>,
    /// Aggregation coefficients per directed edge, aligned with the graph's
    /// flattened neighbour lists. Empty for max aggregation.
    pub weights: Vec<f64>,
    /// For max aggregation, the neighbour chosen for each `(node, channel)`.
    pub argmax: Vec<usize>,
    /// Aggregated neighbour message per node.
    pub aggregated: Array2<f64>,
    pub pre_activation: Array2<f64>,
    pub output: Array2<f64>,
    /// Mean over every node `j` of `query_i . key_j`.
    pub mean_affinity: Array1<f64>,
}

/// One graph-attention layer (`layer` is 0-based).
///
/// Neighbour weights are a softmax of query-key dot products restricted to the
/// graph neighbourhood. The mean affinity uses every node, not just neighbours;
/// since `mean_j a_i . b_j = a_i . mean_j b_j`, it is computed from the mean key
/// without forming the `N x N` affinity matrix.
pub fn gat_layer_forward(
    params: &ModelParams,
    layer: usize,
    graph: &RegionGraph,
    input: &Array2<f64>,
) -> Result<LayerOutput> {
    let config = params.config();
    let lp = params
        .weights()
        .layers
        .get(layer)
        .ok_or(Error::OutOfRange {
            index: layer,
            len: config.layers,
        })?;
    let n = graph.nodes();
    if input.dim() != (n, config.hidden_dim) {
        return Err(Error::ShapeMismatch(format!(
            "layer input is {:?}, expected ({n}, {})",
            input.dim(),
            config.hidden_dim
        )));
    }

    let queries = lp.query.apply(input);
    let keys = if config.attention_tied {
        queries.clone()
    } else {
        lp.key.apply(input)
    };
    let mean_key = keys.sum_axis(Axis(0)) / n as f64;
    let mean_affinity = queries.dot(&mean_key);
    if mean_affinity.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite affinity".into()));
    }

    let width = config.hidden_dim;
    let mut aggregated = Array2::zeros((n, width));
    let mut weights = Vec::new();
    let mut argmax = Vec::new();
    match config.region_agg {
        RegionAggregation::Attention => {
            weights.reserve(graph.edge_entries());
            let mut row = Vec::new();
            for i in 0..n {
                let nbrs = graph.neighbors(i);
                let qi = queries.row(i);
                row.clear();
                row.extend(nbrs.iter().map(|&j| qi.dot(&keys.row(j))));
                if !softmax_in_place(&mut row) {
                    return Err(Error::InvalidInput(format!(
                        "non-finite attention score at node {i}"
                    )));
                }
                let mut out = aggregated.row_mut(i);
                for (&j, &w) in nbrs.iter().zip(&row) {
                    out.scaled_add(w, &input.row(j));
                }
                weights.extend_from_slice(&row);
            }
        }
        RegionAggregation::Average => {
            weights.reserve(graph.edge_entries());
            for i in 0..n {
                let nbrs = graph.neighbors(i);
                let w = 1.0 / nbrs.len() as f64;
                let mut out = aggregated.row_mut(i);
                for &j in nbrs {
                    out.scaled_add(w, &input.row(j));
                }
                weights.extend(std::iter::repeat_n(w, nbrs.len()));
            }
        }
        RegionAggregation::Max => {
            argmax.reserve(n * width);
            for i in 0..n {
                let nbrs = graph.neighbors(i);
                for c in 0..width {
                    let mut best = nbrs[0];
                    for &j in &nbrs[1..] {
                        if input[[j, c]] > input[[best, c]] {
                            best = j;
                        }
                    }
                    aggregated[[i, c]] = input[[best, c]];
                    argmax.push(best);
                }
            }
        }
    }

    let pre_activation = lp.output.apply(&aggregated);
    let output = pre_activation.mapv(elu);
    Ok(LayerOutput {
        queries,
        keys,
        mean_key,
        weights,
        argmax,
        aggregated,
        pre_activation,
        output,
        mean_affinity,
    })
}

/// Concatenates region representations along channels according to the
/// configured mode. `layers` holds `X^(1)..X^(K)`.
pub fn depth_concat(
    config: &ModelConfig,
    input: &Array2<f64>,
    reduced: &Array2<f64>,
    layers: &[&Array2<f64>],
) -> Result<Array2<f64>> {
    let n = input.nrows();
    if reduced.nrows() != n || layers.iter().any(|l| l.nrows() != n) {
        return Err(Error::ShapeMismatch("inconsistent node counts in concat".into()));
    }
    if layers.len() != config.layers {
        return Err(Error::ShapeMismatch(format!(
            "{} layer outputs for a {}-layer model",
            layers.len(),
            config.layers
        )));
    }
    let mut parts: Vec<ArrayView2<f64>> = Vec::with_capacity(config.layers + 2);
    match config.concat {
        ConcatMode::All => {
            parts.push(input.view());
            parts.push(reduced.view());
            parts.extend(layers.iter().map(|l| l.view()));
        }
        ConcatMode::FinalLayer => parts.push(layers[layers.len() - 1].view()),
        ConcatMode::AllLayers => parts.extend(layers.iter().map(|l| l.view())),
        ConcatMode::AllLayersAndReduced => {
            parts.push(reduced.view());
            parts.extend(layers.iter().map(|l| l.view()));
        }
    }
    concatenate(Axis(1), &parts).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct PoolOutput {
    /// Unnormalised pooling logits (attention mode only, otherwise zeros).
    pub logits: Array1<f64>,
    /// Pooling weights; uniform for average pooling, empty for max pooling.
    pub beta: Array1<f64>,
    /// For max pooling, the node chosen for each channel.
    pub argmax: Vec<usize>,
    pub pooled: Array1<f64>,
}

/// Pools the `N x W` region matrix into one `W` vector. `affinity` is the
/// `N x K` matrix of per-layer mean affinities.
pub fn attention_pool(
    params: &ModelParams,
    regions: &Array2<f64>,
    affinity: &Array2<f64>,
) -> Result<PoolOutput> {
    let config = params.config();
    let n = regions.nrows();
    if n == 0 {
        return Err(Error::Empty("region set"));
    }
    if affinity.dim() != (n, config.layers) {
        return Err(Error::ShapeMismatch(format!(
            "affinity matrix is {:?}, expected ({n}, {})",
            affinity.dim(),
            config.layers
        )));
    }
    match config.pooling {
        Pooling::Attention => {
            let att = &params.weights().attention;
            let logits = affinity.dot(&att.weight.column(0)) + att.bias[0];
            let mut beta = logits.to_vec();
            if !softmax_in_place(&mut beta) {
                return Err(Error::InvalidInput("non-finite pooling logit".into()));
            }
            let beta = Array1::from(beta);
            let pooled = regions.t().dot(&beta);
            Ok(PoolOutput {
                logits,
                beta,
                argmax: Vec::new(),
                pooled,
            })
        }
        Pooling::Average => {
            let beta = Array1::from_elem(n, 1.0 / n as f64);
            let pooled = regions.t().dot(&beta);
            Ok(PoolOutput {
                logits: Array1::zeros(n),
                beta,
                argmax: Vec::new(),
                pooled,
            })
        }
        Pooling::Max => {
            let mut argmax = Vec::with_capacity(regions.ncols());
            let pooled = Array1::from_shape_fn(regions.ncols(), |c| {
                let col = regions.column(c);
                let mut best = 0;
                for i in 1..n {
                    if col[i] > col[best] {
                        best = i;
                    }
                }
                argmax.push(best);
                col[best]
            });
            Ok(PoolOutput {
                logits: Array1::zeros(n),
                beta: Array1::zeros(0),
                argmax,
                pooled,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub hidden_pre: Array1<f64>,
    pub hidden: Array1<f64>,
    pub embedding: Array1<f64>,
}

/// Two dense layers with ELU between them; the output layer is linear.
pub fn mlp_head(params: &ModelParams, pooled: &Array1<f64>) -> Result<HeadOutput> {
    let w = params.weights();
    if pooled.len() != w.mlp_hidden.inputs() {
        return Err(Error::ShapeMismatch(format!(
            "pooled width {} does not match head input {}",
            pooled.len(),
            w.mlp_hidden.inputs()
        )));
    }
    let hidden_pre = w.mlp_hidden.apply_vec(pooled);
    let hidden = hidden_pre.mapv(elu);
    let embedding = w.mlp_out.apply_vec(&hidden);
    Ok(HeadOutput {
        hidden_pre,
        hidden,
        embedding,
    })
}

/// Full record of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Identity of the parameters that produced this trace.
    pub params_id: u64,
    pub graph: RegionGraph,
    pub input: Array2<f64>,
    pub reduce: ReduceOutput,
    pub layers: Vec<LayerOutput>,
    pub regions: Array2<f64>,
    /// `N x K` per-layer mean affinities.
    pub affinity: Array2<f64>,
    pub pool: PoolOutput,
    pub head: HeadOutput,
}

impl ForwardTrace {
    pub fn embedding(&self) -> &Array1<f64> {
        &self.head.embedding
    }

    pub fn into_embedding(self) -> Array1<f64> {
        self.head.embedding
    }
}

/// Encodes a video into its `D`-dimensional embedding, keeping every
/// intermediate needed for backpropagation.
pub fn embed_video_traced(
    params: &ModelParams,
    tensor: &RegionFeatureTensor,
) -> Result<ForwardTrace> {
    let config = params.config();
    if tensor.channels() != config.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "video {:?} has {} channels, model expects {}",
            tensor.video_id(),
            tensor.channels(),
            config.input_dim
        )));
    }
    let graph = build_region_graph(tensor.frames(), tensor.regions())?;
    let input = tensor.node_matrix();
    let reduce = reduce_dims(params, &input)?;

    let mut layers: Vec<LayerOutput> = Vec::with_capacity(config.layers);
    for k in 0..config.layers {
        let prev = layers.last().map_or(&reduce.output, |l| &l.output);
        let out = gat_layer_forward(params, k, &graph, prev)?;
        layers.push(out);
    }

    let outputs: Vec<&Array2<f64>> = layers.iter().map(|l| &l.output).collect();
    let regions = depth_concat(config, &input, &reduce.output, &outputs)?;
    let n = graph.nodes();
    let mut affinity = Array2::zeros((n, config.layers));
    for (k, l) in layers.iter().enumerate() {
        affinity.slice_mut(s![.., k]).assign(&l.mean_affinity);
    }
    let pool = attention_pool(params, &regions, &affinity)?;
    let head = mlp_head(params, &pool.pooled)?;
    Ok(ForwardTrace {
        params_id: params.id(),
        graph,
        input,
        reduce,
        layers,
        regions,
        affinity,
        pool,
        head,
    })
}

/// Encodes a video into its `D`-dimensional embedding.
pub fn embed_video(params: &ModelParams, tensor: &RegionFeatureTensor) -> Result<Array1<f64>> {
    embed_video_traced(params, tensor).map(ForwardTrace::into_embedding)
}

/// Writes `node<TAB>frame<TAB>beta` lines for the pooling weights of a trace.
pub fn write_beta_dump(trace: &ForwardTrace, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "# node\tframe\tbeta")?;
    for (i, b) in trace.pool.beta.iter().enumerate() {
        writeln!(out, "{i}\t{}\t{b:.9e}", trace.graph.node_frame(i))?;
    }
    Ok(())
}
