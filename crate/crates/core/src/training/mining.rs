use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{LabeledCorpus, RegionFeatureTensor};
use crate::model::{embed_video, ModelParams};
use crate::similarity::cosine_similarity;

/// One training example. Indices refer to the corpus the triplet was mined
/// from; each window is a half-open, 0-based frame range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub windows: [Range<usize>; 3],
}

impl Triplet {
    pub fn clips(&self, corpus: &LabeledCorpus) -> Result<[RegionFeatureTensor; 3]> {
        let clip = |i: usize, w: &Range<usize>| corpus.videos[i].slice_frames(w.clone());
        Ok([
            clip(self.anchor, &self.windows[0])?,
            clip(self.positive, &self.windows[1])?,
            clip(self.negative, &self.windows[2])?,
        ])
    }
}

/// A random window of at most `max_frames` frames.
fn crop(rng: &mut ChaCha8Rng, frames: usize, max_frames: usize) -> Range<usize> {
    let len = frames.min(max_frames);
    let start = rng.random_range(0..=frames - len);
    start..start + len
}

/// Builds one pool of hard triplets.
///
/// Every video is cropped once to at most `max_frames` frames and embedded.
/// Each ordered anchor/positive pair ranks its foreign-group negatives by
/// similarity to the anchor; the pool is filled round-robin over the pairs
/// (visited in a seeded order), so every pair contributes its hardest negative
/// before any pair contributes its second hardest. The pool is then shuffled.
pub fn mine_triplets(
    corpus: &LabeledCorpus,
    params: &ModelParams,
    pool_size: usize,
    max_frames: usize,
    seed: u64,
) -> Result<Vec<Triplet>> {
    if max_frames == 0 {
        return Err(Error::InvalidConfig("clip length must be at least one frame".into()));
    }
    if corpus.videos.len() != corpus.groups.len() {
        return Err(Error::InvalidInput("corpus videos and groups differ in length".into()));
    }
    let mut distinct: Vec<&String> = corpus.groups.iter().collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "triplet mining needs at least 2 groups, corpus has {}",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows: Vec<Range<usize>> = corpus
        .videos
        .iter()
        .map(|v| crop(&mut rng, v.frames(), max_frames))
        .collect();
    let embeddings: Vec<Vec<f64>> = corpus
        .videos
        .par_iter()
        .zip(&windows)
        .map(|(v, w)| Ok(embed_video(params, &v.slice_frames(w.clone())?)?.to_vec()))
        .collect::<Result<_>>()?;

    let n = corpus.videos.len();
    let mut pairs: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for a in 0..n {
        let mut negatives: Vec<(f64, usize)> = (0..n)
            .filter(|&j| corpus.groups[j] != corpus.groups[a])
            .map(|j| (cosine_similarity(&embeddings[a], &embeddings[j]), j))
            .collect();
        negatives.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let negatives: Vec<usize> = negatives.into_iter().map(|(_, j)| j).collect();
        for p in 0..n {
            if p != a && corpus.groups[p] == corpus.groups[a] {
                pairs.push((a, p, negatives.clone()));
            }
        }
    }
    pairs.shuffle(&mut rng);

    let mut out = Vec::new();
    let depth = pairs.iter().map(|p| p.2.len()).max().unwrap_or(0);
    'fill: for round in 0..depth {
        for (a, p, negatives) in &pairs {
            if out.len() >= pool_size {
                break 'fill;
            }
            if let Some(&neg) = negatives.get(round) {
                out.push(Triplet {
                    anchor: *a,
                    positive: *p,
                    negative: neg,
                    windows: [windows[*a].clone(), windows[*p].clone(), windows[neg].clone()],
                });
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}
