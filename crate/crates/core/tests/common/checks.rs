//! Oracle comparisons shared by the oracle tests and the acceptance harness.
//! Each returns a one-line summary, or the first discrepancy as the error.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vrag::graph::build_region_graph;
use vrag::model::{embed_video_traced, gat_layer_forward, ModelConfig, Pooling, RegionAggregation};
use vrag::retrieval::{chamfer, mean_average_precision, symmetric_chamfer, Qrels, RankedList, Task};

use super::reference::{
    adjacency, ap_quadratic, chamfer_naive, dense_forward, dense_layer, max_abs_diff,
    symmetric_chamfer_naive, Mat,
};
use super::{random_params, random_tensor, AGGREGATIONS, CONCATS, POOLINGS};

pub type Check = Result<String, String>;

pub fn graph_vs_bruteforce(rng: &mut ChaCha8Rng, shapes: usize) -> Check {
    for _ in 0..shapes {
        let (t, r) = (rng.random_range(1..=12), rng.random_range(1..=9));
        let g = build_region_graph(t, r).map_err(|e| e.to_string())?;
        let mask = adjacency(t, r);
        let mut pairs = 0;
        for (i, row) in mask.iter().enumerate() {
            let expected: Vec<usize> = (0..t * r).filter(|&j| row[j]).collect();
            pairs += expected.len();
            if g.neighbors(i) != expected.as_slice() {
                return Err(format!("T={t} R={r}: neighbours of node {i} differ"));
            }
        }
        if g.edge_entries() != pairs {
            return Err(format!("T={t} R={r}: {} entries, {pairs} pairs", g.edge_entries()));
        }
    }
    Ok(format!("{shapes} random (T, R) shapes"))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, c), || rng.random_range(-1.0..1.0))
}

fn rows(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn gat_vs_dense(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let config = ModelConfig {
            input_dim: 3,
            hidden_dim: rng.random_range(1..=6),
            layers: 2,
            embed_dim: 2,
            attention_tied: case % 2 == 1,
            region_agg: AGGREGATIONS[case / 2 % 3],
            ..ModelConfig::default()
        };
        let params = random_params(rng, &config);
        let (t, r) = (rng.random_range(1..=6), rng.random_range(1..=4));
        let graph = build_region_graph(t, r).map_err(|e| e.to_string())?;
        let input = random_matrix(rng, t * r, config.hidden_dim);
        let layer = case % 2;
        let out = gat_layer_forward(&params, layer, &graph, &input).map_err(|e| e.to_string())?;
        let dense = dense_layer(&params, layer, t, r, &rows(&input));
        let n = t * r;
        for i in 0..n {
            worst = worst.max(max_abs_diff(out.output.row(i).as_slice().unwrap(), &dense.output[i]));
            let mean = dense.affinity[i].iter().sum::<f64>() / n as f64;
            worst = worst.max((out.mean_affinity[i] - mean).abs());
            if config.region_agg != RegionAggregation::Max {
                let offset = graph.offsets()[i];
                let mut row = vec![0.0; n];
                for (k, &j) in graph.neighbors(i).iter().enumerate() {
                    row[j] = out.weights[offset + k];
                }
                worst = worst.max(max_abs_diff(&row, &dense.weights[i]));
            }
        }
        if worst > 1e-10 {
            return Err(format!("case {case} ({config:?}, T={t}, R={r}): error {worst:.3e}"));
        }
    }
    Ok(format!("{cases} layers, worst error {worst:.2e}"))
}

pub fn pool_vs_dense(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let config = ModelConfig {
            input_dim: rng.random_range(1..=8),
            hidden_dim: rng.random_range(1..=6),
            layers: rng.random_range(1..=3),
            embed_dim: rng.random_range(1..=8),
            attention_tied: case % 2 == 1,
            region_agg: AGGREGATIONS[case / 2 % 3],
            pooling: POOLINGS[case / 6 % 3],
            concat: CONCATS[case / 18 % 4],
        };
        let params = random_params(rng, &config);
        let (t, r) = (rng.random_range(1..=6), rng.random_range(1..=4));
        let video = random_tensor(rng, "v", t, r, config.input_dim);
        let trace = embed_video_traced(&params, &video).map_err(|e| e.to_string())?;
        let dense = dense_forward(&params, &video);
        let mut err = max_abs_diff(trace.pool.pooled.as_slice().unwrap(), &dense.pooled);
        err = err.max(max_abs_diff(trace.embedding().as_slice().unwrap(), &dense.embedding));
        if config.pooling != Pooling::Max {
            err = err.max(max_abs_diff(trace.pool.beta.as_slice().unwrap(), &dense.beta));
        }
        worst = worst.max(err);
        if worst > 1e-10 {
            return Err(format!("case {case} ({config:?}, T={t}, R={r}): error {worst:.3e}"));
        }
    }
    Ok(format!("{cases} forward passes, worst error {worst:.2e}"))
}

pub fn chamfer_vs_naive(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, m) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let s = random_matrix(rng, n, m);
        let naive = rows(&s);
        let cs = chamfer(&s).map_err(|e| e.to_string())?;
        let scs = symmetric_chamfer(&s).map_err(|e| e.to_string())?;
        worst = worst
            .max((cs - chamfer_naive(&naive)).abs())
            .max((scs - symmetric_chamfer_naive(&naive)).abs());
    }
    if worst > 1e-12 {
        return Err(format!("worst error {worst:.3e}"));
    }
    Ok(format!("{cases} matrices, worst error {worst:.2e}"))
}

pub fn map_vs_quadratic(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst: f64 = 0.0;
    let mut evaluated = 0;
    for _ in 0..cases {
        let videos: Vec<String> = (0..rng.random_range(1..=15)).map(|i| format!("v{i:02}")).collect();
        let mut qrels = Qrels::new();
        let mut lists = Vec::new();
        let mut oracle = Vec::new();
        for q in 0..rng.random_range(1..=5) {
            let qid = format!("q{q}");
            let mut positives = BTreeSet::new();
            for v in &videos {
                if rng.random_bool(0.3) {
                    qrels.insert(&qid, v, "ND");
                    positives.insert(v.as_str());
                }
            }
            // Unranked positives exercise the full-denominator rule.
            if rng.random_bool(0.2) {
                qrels.insert(&qid, "missing", "ND");
                positives.insert("missing");
            }
            let items: Vec<(String, f64)> = videos.iter().map(|v| (v.clone(), rng.random::<f64>())).collect();
            let list = RankedList::new(&qid, items);
            if !positives.is_empty() {
                let order: Vec<&str> = list.ids().collect();
                oracle.push(ap_quadratic(&order, &positives));
            }
            lists.push(list);
        }
        if oracle.is_empty() {
            continue;
        }
        evaluated += 1;
        let report = mean_average_precision(&lists, &qrels, &Task::new("t", &["ND"])).map_err(|e| e.to_string())?;
        let expected = oracle.iter().sum::<f64>() / oracle.len() as f64;
        worst = worst.max((report.map - expected).abs());
    }
    if worst > 1e-12 {
        return Err(format!("worst error {worst:.3e}"));
    }
    Ok(format!("{evaluated} query sets, worst error {worst:.2e}"))
}
