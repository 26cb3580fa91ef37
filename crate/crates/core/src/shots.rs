//! Shot boundary detection and shot-level embeddings.
//!
//! Frames are 0-based here. A shot is a half-open frame range; the shot
//! manifest written to disk uses 1-based inclusive ranges.

use std::io::Write;
use std::ops::Range;

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::features::RegionFeatureTensor;
use crate::model::{embed_video, ModelParams};
use crate::similarity::cosine_similarity_f32;

pub const DEFAULT_SHOT_THRESHOLD: f64 = 0.75;

/// Start frames of every shot. Frame `t >= 1` opens a new shot when the cosine
/// between its flattened descriptors and those of frame `t - 1` is below `tau`.
pub fn detect_shot_boundaries(tensor: &RegionFeatureTensor, tau: f64) -> Vec<usize> {
    let mut boundaries = vec![0];
    for t in 1..tensor.frames() {
        let prev = tensor.frame(t - 1).expect("frame in range");
        let cur = tensor.frame(t).expect("frame in range");
        if cosine_similarity_f32(cur, prev) < tau {
            boundaries.push(t);
        }
    }
    boundaries
}

/// Converts shot start frames into half-open ranges covering `0..frames`.
pub fn boundaries_to_ranges(boundaries: &[usize], frames: usize) -> Result<Vec<Range<usize>>> {
    if boundaries.first() != Some(&0) {
        return Err(Error::InvalidInput("shot boundaries must start at frame 0".into()));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("shot boundaries must be strictly increasing".into()));
    }
    if let Some(&last) = boundaries.last() {
        if last >= frames {
            return Err(Error::OutOfRange {
                index: last,
                len: frames,
            });
        }
    }
    Ok(boundaries
        .iter()
        .zip(boundaries.iter().skip(1).chain(std::iter::once(&frames)))
        .map(|(&s, &e)| s..e)
        .collect())
}

/// Splits a video into contiguous per-shot tensors.
pub fn segment_shots(
    tensor: &RegionFeatureTensor,
    boundaries: &[usize],
) -> Result<Vec<RegionFeatureTensor>> {
    boundaries_to_ranges(boundaries, tensor.frames())?
        .into_iter()
        .map(|r| tensor.slice_frames(r))
        .collect()
}

/// A video split into shots, each with its own embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotSet {
    pub video_id: String,
    pub boundaries: Vec<usize>,
    pub shots: Vec<Range<usize>>,
    pub embeddings: Vec<Array1<f64>>,
}

impl ShotSet {
    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }
}

pub fn embed_shots(params: &ModelParams, tensor: &RegionFeatureTensor, tau: f64) -> Result<ShotSet> {
    let boundaries = detect_shot_boundaries(tensor, tau);
    let shots = boundaries_to_ranges(&boundaries, tensor.frames())?;
    let embeddings = if shots.len() == 1 {
        vec![embed_video(params, tensor)?]
    } else {
        shots
            .iter()
            .map(|r| embed_video(params, &tensor.slice_frames(r.clone())?))
            .collect::<Result<_>>()?
    };
    Ok(ShotSet {
        video_id: tensor.video_id().to_string(),
        boundaries,
        shots,
        embeddings,
    })
}

/// Writes `video_id<TAB>shot_idx<TAB>start<TAB>end` lines, frames 1-based and
/// inclusive, shot indices 0-based.
pub fn write_shot_manifest<'a>(
    sets: impl IntoIterator<Item = &'a ShotSet>,
    mut out: impl Write,
) -> std::io::Result<()> {
    for set in sets {
        for (i, r) in set.shots.iter().enumerate() {
            writeln!(out, "{}\t{i}\t{}\t{}", set.video_id, r.start + 1, r.end)?;
        }
    }
    Ok(())
}
