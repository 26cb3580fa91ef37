use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::loss::triplet_loss_gradients;
use crate::error::{Error, Result};
use crate::model::{
    elu_derivative, ConcatMode, ForwardTrace, Linear, ModelParams, Pooling, RegionAggregation,
    Weights,
};

/// Gradients with the same layout as the model weights.
pub type GradientSet = Weights;

/// Loss of one triplet and its exact gradient with respect to every parameter.
///
/// The traces must come from `params` in its current state.
pub fn backward(
    params: &ModelParams,
    anchor: &ForwardTrace,
    positive: &ForwardTrace,
    negative: &ForwardTrace,
    margin: f64,
) -> Result<(f64, GradientSet)> {
    for trace in [anchor, positive, negative] {
        if trace.params_id != params.id() {
            return Err(Error::ParamsMismatch {
                expected: params.id(),
                found: trace.params_id,
            });
        }
    }
    let mut grads = params.weights().zeros_like();
    let (loss, dv) = triplet_loss_gradients(
        anchor.embedding(),
        positive.embedding(),
        negative.embedding(),
        margin,
    );
    if loss > 0.0 {
        for (trace, d) in [anchor, positive, negative].into_iter().zip(&dv) {
            accumulate_embedding_gradient(params, trace, d, &mut grads)?;
        }
    }
    Ok((loss, grads))
}

/// Adds `d embedding . d embedding/d theta` for one trace into `grads`.
pub fn accumulate_embedding_gradient(
    params: &ModelParams,
    trace: &ForwardTrace,
    d_embedding: &Array1<f64>,
    grads: &mut GradientSet,
) -> Result<()> {
    if trace.params_id != params.id() {
        return Err(Error::ParamsMismatch {
            expected: params.id(),
            found: trace.params_id,
        });
    }
    let config = params.config();
    let w = params.weights();
    let k_layers = config.layers;
    let h = config.hidden_dim;
    let n = trace.graph.nodes();

    // Head.
    let head = &trace.head;
    add_outer(&mut grads.mlp_out, head.hidden.view(), d_embedding.view());
    let d_hidden = w.mlp_out.weight.dot(d_embedding);
    let d_hidden_pre = &d_hidden * &head.hidden_pre.mapv(elu_derivative);
    add_outer(&mut grads.mlp_hidden, trace.pool.pooled.view(), d_hidden_pre.view());
    let d_pooled = w.mlp_hidden.weight.dot(&d_hidden_pre);

    // Pooling.
    let pool = &trace.pool;
    let mut d_regions = Array2::<f64>::zeros(trace.regions.dim());
    let mut d_affinity = Array2::<f64>::zeros((n, k_layers));
    match config.pooling {
        Pooling::Attention => {
            for (i, mut row) in d_regions.axis_iter_mut(Axis(0)).enumerate() {
                row.scaled_add(pool.beta[i], &d_pooled);
            }
            let d_beta = trace.regions.dot(&d_pooled);
            let mean = pool.beta.dot(&d_beta);
            let d_logits = &pool.beta * &(d_beta - mean);
            let att = &mut grads.attention;
            att.weight
                .column_mut(0)
                .scaled_add(1.0, &trace.affinity.t().dot(&d_logits));
            att.bias[0] += d_logits.sum();
            for k in 0..k_layers {
                d_affinity
                    .column_mut(k)
                    .scaled_add(w.attention.weight[[k, 0]], &d_logits);
            }
        }
        Pooling::Average => {
            let scale = 1.0 / n as f64;
            for mut row in d_regions.axis_iter_mut(Axis(0)) {
                row.scaled_add(scale, &d_pooled);
            }
        }
        Pooling::Max => {
            for (c, &i) in pool.argmax.iter().enumerate() {
                d_regions[[i, c]] += d_pooled[c];
            }
        }
    }

    // Split the concatenated gradient back onto its sources.
    // `d_states[0]` is the reduced matrix, `d_states[k]` the output of layer k.
    let mut d_states: Vec<Array2<f64>> = (0..=k_layers).map(|_| Array2::zeros((n, h))).collect();
    let c = config.input_dim;
    let mut take = |state: usize, offset: usize| {
        d_states[state] += &d_regions.slice(s![.., offset..offset + h]);
    };
    match config.concat {
        ConcatMode::All => {
            for state in 0..=k_layers {
                take(state, c + state * h);
            }
        }
        ConcatMode::FinalLayer => take(k_layers, 0),
        ConcatMode::AllLayers => {
            for state in 1..=k_layers {
                take(state, (state - 1) * h);
            }
        }
        ConcatMode::AllLayersAndReduced => {
            for state in 0..=k_layers {
                take(state, state * h);
            }
        }
    }

    // Attention layers, last to first.
    for k in (0..k_layers).rev() {
        let layer = &trace.layers[k];
        let lp = &w.layers[k];
        let input = if k == 0 {
            &trace.reduce.output
        } else {
            &trace.layers[k - 1].output
        };
        let d_pre = &d_states[k + 1] * &layer.pre_activation.mapv(elu_derivative);
        let gl = &mut grads.layers[k];
        add_matmul_tn(&mut gl.output, &layer.aggregated, &d_pre);
        let d_agg = d_pre.dot(&lp.output.weight.t());

        let mut d_input = Array2::<f64>::zeros((n, h));
        let mut d_queries = Array2::<f64>::zeros((n, h));
        let mut d_keys = Array2::<f64>::zeros((n, h));
        let offsets = trace.graph.offsets();
        match config.region_agg {
            RegionAggregation::Attention => {
                let mut d_w = Vec::new();
                for i in 0..n {
                    let nbrs = trace.graph.neighbors(i);
                    let wts = &layer.weights[offsets[i]..offsets[i + 1]];
                    let dm = d_agg.row(i);
                    d_w.clear();
                    for (&j, &wij) in nbrs.iter().zip(wts) {
                        d_input.row_mut(j).scaled_add(wij, &dm);
                        d_w.push(dm.dot(&input.row(j)));
                    }
                    let mean: f64 = wts.iter().zip(&d_w).map(|(a, b)| a * b).sum();
                    for ((&j, &wij), &dwij) in nbrs.iter().zip(wts).zip(&d_w) {
                        let ds = wij * (dwij - mean);
                        d_queries.row_mut(i).scaled_add(ds, &layer.keys.row(j));
                        d_keys.row_mut(j).scaled_add(ds, &layer.queries.row(i));
                    }
                }
            }
            RegionAggregation::Average => {
                for i in 0..n {
                    let nbrs = trace.graph.neighbors(i);
                    let wts = &layer.weights[offsets[i]..offsets[i + 1]];
                    for (&j, &wij) in nbrs.iter().zip(wts) {
                        d_input.row_mut(j).scaled_add(wij, &d_agg.row(i));
                    }
                }
            }
            RegionAggregation::Max => {
                for i in 0..n {
                    for ch in 0..h {
                        d_input[[layer.argmax[i * h + ch], ch]] += d_agg[[i, ch]];
                    }
                }
            }
        }

        // Mean affinity a_i . mean(b): reaches every key through the mean.
        let d_alpha = d_affinity.column(k);
        for (mut row, &da) in d_queries.axis_iter_mut(Axis(0)).zip(d_alpha) {
            row.scaled_add(da, &layer.mean_key);
        }
        let d_mean_key = layer.queries.t().dot(&d_alpha) / n as f64;
        for mut row in d_keys.axis_iter_mut(Axis(0)) {
            row += &d_mean_key;
        }

        if config.attention_tied {
            d_queries += &d_keys;
        } else {
            add_matmul_tn(&mut gl.key, input, &d_keys);
            d_input += &d_keys.dot(&lp.key.weight.t());
        }
        add_matmul_tn(&mut gl.query, input, &d_queries);
        d_input += &d_queries.dot(&lp.query.weight.t());
        d_states[k] += &d_input;
    }

    // Reduction.
    let d_reduce_pre = &d_states[0] * &trace.reduce.pre_activation.mapv(elu_derivative);
    add_matmul_tn(&mut grads.reduce, &trace.input, &d_reduce_pre);
    Ok(())
}

/// `g.weight += x^T dy`, `g.bias += column sums of dy`.
fn add_matmul_tn(g: &mut Linear, x: &Array2<f64>, dy: &Array2<f64>) {
    g.weight += &x.t().dot(dy);
    g.bias += &dy.sum_axis(Axis(0));
}

/// Single-row version of [`add_matmul_tn`].
fn add_outer(g: &mut Linear, x: ArrayView1<f64>, dy: ArrayView1<f64>) {
    for (mut row, &xi) in g.weight.axis_iter_mut(Axis(0)).zip(x) {
        row.scaled_add(xi, &dy);
    }
    g.bias += &dy;
}
