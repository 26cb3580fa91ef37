//! Property bodies and strategies shared by the proptest target and the
//! acceptance harness.

use ndarray::Array1;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vrag::features::{read_features, write_features};
use vrag::model::{
    embed_video, embed_video_traced, load_checkpoint, load_params, save_checkpoint, save_params,
    ModelParams, Pooling, RegionAggregation,
};
use vrag::retrieval::{
    rank, read_index, shot_similarity_matrix, symmetric_chamfer, write_index, EmbeddingIndex, IndexMode,
};
use vrag::shots::{boundaries_to_ranges, detect_shot_boundaries};
use vrag::training::triplet_loss;
use vrag::RegionFeatureTensor;

use super::{random_params, random_tensor, tiny_config};

#[derive(Debug, Clone)]
pub struct ModelCase {
    pub params: ModelParams,
    pub video: RegionFeatureTensor,
    pub seed: u64,
}

/// A random model in any ablation mode plus a random video it accepts.
pub fn model_case() -> impl Strategy<Value = ModelCase> {
    (any::<u64>(), 0usize..72, 1usize..=6, 1usize..=4).prop_map(|(seed, variant, t, r)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = tiny_config(&mut rng, variant);
        let params = random_params(&mut rng, &config);
        let video = random_tensor(&mut rng, "v", t, r, config.input_dim);
        ModelCase { params, video, seed }
    })
}

pub fn video() -> impl Strategy<Value = RegionFeatureTensor> {
    (any::<u64>(), 1usize..=12, 1usize..=4, 1usize..=4)
        .prop_map(|(seed, t, r, c)| random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), "v", t, r, c))
}

fn vectors(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), 1..=max)
}

pub fn shot_pair() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..=6).prop_flat_map(|d| (vectors(d, 6), vectors(d, 6)))
}

fn close(a: &Array1<f64>, b: &Array1<f64>, tol: f64) -> Result<(), TestCaseError> {
    for (x, y) in a.iter().zip(b) {
        prop_assert!((x - y).abs() <= tol * x.abs().max(1.0), "{x} vs {y}");
    }
    Ok(())
}

pub fn softmax_sums(case: &ModelCase) -> Result<(), TestCaseError> {
    let trace = embed_video_traced(&case.params, &case.video).unwrap();
    let config = case.params.config();
    if config.region_agg != RegionAggregation::Max {
        for layer in &trace.layers {
            for i in 0..trace.graph.nodes() {
                let start = trace.graph.offsets()[i];
                let sum: f64 = layer.weights[start..start + trace.graph.degree(i)].iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9, "node {i} weights sum to {sum}");
            }
        }
    }
    if config.pooling != Pooling::Max {
        let sum = trace.pool.beta.sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9, "pooling weights sum to {sum}");
    }
    Ok(())
}

/// Shuffles the regions of every frame independently.
pub fn region_permutation(case: &ModelCase) -> Result<(), TestCaseError> {
    let v = &case.video;
    let (r, c) = (v.regions(), v.channels());
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed ^ 0x5eed);
    let mut data = Vec::with_capacity(v.data().len());
    for t in 0..v.frames() {
        let frame = v.frame(t).unwrap();
        let mut order: Vec<usize> = (0..r).collect();
        order.shuffle(&mut rng);
        for k in order {
            data.extend_from_slice(&frame[k * c..(k + 1) * c]);
        }
    }
    let shuffled = RegionFeatureTensor::new("v", v.frames(), r, c, data).unwrap();
    close(
        &embed_video(&case.params, v).unwrap(),
        &embed_video(&case.params, &shuffled).unwrap(),
        1e-9,
    )
}

pub fn frame_reversal(case: &ModelCase) -> Result<(), TestCaseError> {
    close(
        &embed_video(&case.params, &case.video).unwrap(),
        &embed_video(&case.params, &case.video.reversed()).unwrap(),
        1e-9,
    )
}

pub fn scs_symmetric(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(), TestCaseError> {
    let ab = symmetric_chamfer(&shot_similarity_matrix(a, b).unwrap()).unwrap();
    let ba = symmetric_chamfer(&shot_similarity_matrix(b, a).unwrap()).unwrap();
    prop_assert_eq!(ab.to_bits(), ba.to_bits());
    Ok(())
}

pub fn shot_partition(video: &RegionFeatureTensor, tau: f64) -> Result<(), TestCaseError> {
    let ranges = boundaries_to_ranges(&detect_shot_boundaries(video, tau), video.frames()).unwrap();
    let mut next = 0;
    for r in &ranges {
        prop_assert_eq!(r.start, next);
        prop_assert!(r.end > r.start);
        next = r.end;
    }
    prop_assert_eq!(next, video.frames());
    Ok(())
}

pub fn shot_count_monotone(video: &RegionFeatureTensor, t1: f64, t2: f64) -> Result<(), TestCaseError> {
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    let a = detect_shot_boundaries(video, lo).len();
    let b = detect_shot_boundaries(video, hi).len();
    prop_assert!(a <= b, "tau {lo} gives {a} shots, tau {hi} gives {b}");
    Ok(())
}

pub fn rmf1_round_trip(video: &RegionFeatureTensor) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.rmf");
    write_features(video, &path).unwrap();
    let back = read_features(&path).unwrap();
    prop_assert_eq!(back.data().len(), video.data().len());
    prop_assert!(back.data().iter().zip(video.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    prop_assert_eq!(&back, video);
    Ok(())
}

pub fn emb1_round_trip(shots: &[Vec<f64>], shot_mode: bool) -> Result<(), TestCaseError> {
    let dim = shots[0].len();
    let mode = if shot_mode { IndexMode::Shot } else { IndexMode::Video };
    let mut index = EmbeddingIndex::new(mode, dim);
    for (i, e) in shots.iter().enumerate() {
        if shot_mode {
            index.push(&format!("v{}", i / 2), Some((i % 2) as u32), e).unwrap();
        } else {
            index.push(&format!("v{i}"), None, e).unwrap();
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.emb");
    write_index(&index, &path).unwrap();
    let back = read_index(&path).unwrap();
    for (a, b) in back.entries().iter().zip(index.entries()) {
        prop_assert!(a.embedding.iter().zip(&b.embedding).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    prop_assert_eq!(back, index);
    Ok(())
}

pub fn params_round_trip(case: &ModelCase) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.vrag");
    save_params(&case.params, &path).unwrap();
    let back = load_params(&path).unwrap();
    prop_assert!(back.weights().values().zip(case.params.weights().values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    prop_assert_eq!(&back, &case.params);
    let moments = case.params.weights().zeros_like();
    save_checkpoint(&case.params, 7, &moments, &moments, &path).unwrap();
    let (back, state) = load_checkpoint(&path).unwrap();
    prop_assert_eq!(&back, &case.params);
    prop_assert_eq!(state.map(|s| s.0), Some(7));
    Ok(())
}

/// Rescaling a query by a power of two never changes its ranking.
pub fn ranking_scale_invariance(db: &[Vec<f64>], exponent: i32) -> Result<(), TestCaseError> {
    let mut index = EmbeddingIndex::new(IndexMode::Video, db[0].len());
    for (i, e) in db.iter().enumerate() {
        index.push(&format!("v{i:02}"), None, e).unwrap();
    }
    let query = &db[0];
    let scaled: Vec<f64> = query.iter().map(|v| v * 2f64.powi(exponent)).collect();
    let a = rank("q", query, &index).unwrap();
    let b = rank("q", &scaled, &index).unwrap();
    prop_assert_eq!(a.ids().collect::<Vec<_>>(), b.ids().collect::<Vec<_>>());
    Ok(())
}

/// The loss only sees cosines, so a rotation applied to all three
/// embeddings leaves it unchanged.
pub fn loss_rotation_invariance(v: &[Vec<f64>], angle: f64, margin: f64) -> Result<(), TestCaseError> {
    let d = v[0].len();
    let rotate = |x: &Vec<f64>| {
        let mut y = x.clone();
        let (c, s) = (angle.cos(), angle.sin());
        y[0] = c * x[0] - s * x[d - 1];
        y[d - 1] = s * x[0] + c * x[d - 1];
        y
    };
    let before = triplet_loss(&v[0], &v[1], &v[2], margin);
    let r: Vec<Vec<f64>> = v.iter().map(rotate).collect();
    let after = triplet_loss(&r[0], &r[1], &r[2], margin);
    prop_assert!((before - after).abs() <= 1e-12, "{before} vs {after}");
    Ok(())
}

pub fn triplet_vectors() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=6).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), 3))
}

pub fn database() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=6).prop_flat_map(|d| vectors(d, 12))
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// Runs every invariant for `cases` generated inputs each.
pub fn run_suite(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("attention rows and pooling weights sum to 1", run(cases, model_case(), |c| softmax_sums(&c))),
        ("embedding invariant to region order", run(cases, model_case(), |c| region_permutation(&c))),
        ("embedding invariant to frame reversal", run(cases, model_case(), |c| frame_reversal(&c))),
        ("symmetric Chamfer is symmetric", run(cases, shot_pair(), |(a, b)| scs_symmetric(&a, &b))),
        ("shots partition the frames", run(cases, (video(), -1.0f64..=1.0), |(v, t)| shot_partition(&v, t))),
        (
            "shot count monotone in threshold",
            run(cases, (video(), -1.0f64..=1.0, -1.0f64..=1.0), |(v, a, b)| shot_count_monotone(&v, a, b)),
        ),
        ("RMF1 round trip", run(cases, video(), |v| rmf1_round_trip(&v))),
        ("EMB1 round trip", run(cases, (database(), any::<bool>()), |(d, s)| emb1_round_trip(&d, s))),
        ("parameter round trip", run(cases, model_case(), |c| params_round_trip(&c))),
        ("ranking invariant to query scale", run(cases, (database(), -8i32..=8), |(d, e)| ranking_scale_invariance(&d, e))),
        (
            "triplet loss invariant to rotation",
            run(cases, (triplet_vectors(), -3.2f64..3.2, 0.0f64..1.0), |(v, a, m)| loss_rotation_invariance(&v, a, m)),
        ),
    ]
}
