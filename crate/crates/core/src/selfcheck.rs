//! Built-in invariant suite, small enough to run on every install.
//!
//! Each check compares the engine against a deliberately naive re-computation.

use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::{read_features, write_features, RegionFeatureTensor};
use crate::graph::build_region_graph;
use crate::model::{embed_video, embed_video_traced, init_params, ModelConfig, ModelParams, Weights};
use crate::retrieval::{average_precision, chamfer, symmetric_chamfer};
use crate::training::{backward, triplet_loss};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfCheckOptions {
    /// Multiplies every tolerance. Values below 1 tighten the suite; 0 makes
    /// any inexact check fail, which is how the failure path is exercised.
    pub tolerance_scale: f64,
    pub seed: u64,
}

impl Default for SelfCheckOptions {
    fn default() -> Self {
        Self {
            tolerance_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, t: usize, r: usize, c: usize) -> RegionFeatureTensor {
    let data = (0..t * r * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    RegionFeatureTensor::new("check", t, r, c, data).expect("valid random tensor")
}

fn scalar_mut(w: &mut Weights, mut idx: usize) -> &mut f64 {
    for l in w.linears_mut() {
        if idx < l.weight.len() {
            return l.weight.iter_mut().nth(idx).expect("in range");
        }
        idx -= l.weight.len();
        if idx < l.bias.len() {
            return &mut l.bias[idx];
        }
        idx -= l.bias.len();
    }
    panic!("parameter index out of range")
}

fn loss(params: &ModelParams, videos: &[RegionFeatureTensor; 3], margin: f64) -> Result<f64> {
    let e: Vec<Vec<f64>> = videos
        .iter()
        .map(|v| Ok(embed_video(params, v)?.to_vec()))
        .collect::<Result<_>>()?;
    Ok(triplet_loss(&e[0], &e[1], &e[2], margin))
}

/// Central differences on every parameter of a tiny model.
fn gradient_check(rng: &mut ChaCha8Rng, tol: f64) -> Result<(bool, String)> {
    let config = ModelConfig {
        input_dim: 3,
        hidden_dim: 2,
        layers: 2,
        embed_dim: 2,
        ..ModelConfig::default()
    };
    let mut params = init_params(&config, rng.random())?;
    for l in params.weights_mut().linears_mut() {
        l.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    let videos = [
        random_tensor(rng, 2, 2, 3),
        random_tensor(rng, 3, 1, 3),
        random_tensor(rng, 1, 2, 3),
    ];
    let margin = 5.0;
    let traces = videos
        .iter()
        .map(|v| embed_video_traced(&params, v))
        .collect::<Result<Vec<_>>>()?;
    let (_, grads) = backward(&params, &traces[0], &traces[1], &traces[2], margin)?;
    let analytic: Vec<f64> = grads.values().collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        *scalar_mut(plus.weights_mut(), i) += h;
        let mut minus = params.clone();
        *scalar_mut(minus.weights_mut(), i) -= h;
        let fd = (loss(&plus, &videos, margin)? - loss(&minus, &videos, margin)?) / (2.0 * h);
        let err = (fd - a).abs();
        if err > 1e-8 * tol {
            worst = worst.max(err / fd.abs().max(a.abs()));
        }
    }
    Ok((
        worst <= 1e-4 * tol,
        format!("{} parameters, worst relative error {worst:.2e}", analytic.len()),
    ))
}

fn graph_check(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    for _ in 0..50 {
        let (t, r) = (rng.random_range(1..7), rng.random_range(1..5));
        let g = build_region_graph(t, r)?;
        for i in 0..t * r {
            let expected: Vec<usize> = (0..t * r)
                .filter(|&j| (i / r).abs_diff(j / r) <= 1)
                .collect();
            if g.neighbors(i) != expected.as_slice() {
                return Ok((false, format!("T={t}, R={r}, node {i} differs")));
            }
        }
    }
    Ok((true, "50 random shapes".into()))
}

fn chamfer_check(rng: &mut ChaCha8Rng, tol: f64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (n, m) = (rng.random_range(1..6), rng.random_range(1..6));
        let s = Array2::from_shape_simple_fn((n, m), || rng.random_range(-1.0..1.0));
        let mut rows = 0.0;
        for i in 0..n {
            let mut best = f64::NEG_INFINITY;
            for j in 0..m {
                if s[[i, j]] > best {
                    best = s[[i, j]];
                }
            }
            rows += best;
        }
        let mut cols = 0.0;
        for j in 0..m {
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                if s[[i, j]] > best {
                    best = s[[i, j]];
                }
            }
            cols += best;
        }
        let cs = rows / n as f64;
        let scs = (cs + cols / m as f64) / 2.0;
        worst = worst
            .max((chamfer(&s)? - cs).abs())
            .max((symmetric_chamfer(&s)? - scs).abs());
    }
    Ok((worst <= 1e-12 * tol, format!("50 random matrices, worst error {worst:.2e}")))
}

fn map_check(rng: &mut ChaCha8Rng, tol: f64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..12);
        let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let mut order: Vec<&str> = ids.iter().map(String::as_str).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let positives: BTreeSet<&str> = ids
            .iter()
            .filter(|_| rng.random_bool(0.4))
            .map(String::as_str)
            .collect();
        if positives.is_empty() {
            continue;
        }
        // Precision at every relevant position, recounted from scratch.
        let mut oracle = 0.0;
        for (p, id) in order.iter().enumerate() {
            if positives.contains(id) {
                let hits = order[..=p].iter().filter(|x| positives.contains(*x)).count();
                oracle += hits as f64 / (p + 1) as f64;
            }
        }
        oracle /= positives.len() as f64;
        worst = worst.max((average_precision(order.iter().copied(), &positives) - oracle).abs());
    }
    Ok((worst <= 1e-12 * tol, format!("50 random rankings, worst error {worst:.2e}")))
}

fn round_trip_check(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let dir = std::env::temp_dir().join(format!(
        "vrag-selfcheck-{}-{}",
        std::process::id(),
        rng.random::<u32>()
    ));
    std::fs::create_dir_all(&dir).map_err(|e| crate::error::Error::io(&dir, e))?;
    let path = dir.join("check.rmf");
    let tensor = random_tensor(rng, 3, 2, 5);
    let result = write_features(&tensor, &path).and_then(|_| read_features(&path));
    let _ = std::fs::remove_dir_all(&dir);
    let back = result?;
    Ok((back.data() == tensor.data(), "RMF1 write/read".into()))
}

/// Runs every check. Individual failures are reported, not raised.
pub fn run_selfcheck(options: &SelfCheckOptions) -> SelfCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let tol = options.tolerance_scale;
    let mut checks = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<(bool, String)>| {
        let start = Instant::now();
        let (passed, detail) = match f(&mut rng) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        checks.push(CheckResult {
            name,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    };
    run("gradient vs finite differences", &mut |r| gradient_check(r, tol));
    run("graph vs brute-force adjacency", &mut graph_check);
    run("chamfer vs naive loops", &mut |r| chamfer_check(r, tol));
    run("average precision vs recount", &mut |r| map_check(r, tol));
    run("feature file round trip", &mut round_trip_check);
    SelfCheckReport { checks }
}
