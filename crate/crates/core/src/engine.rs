//! Batch embedding and querying with work counters.
//!
//! The counters separate the two cost centres of retrieval: encoder passes
//! (one network forward per video or shot) and the similarity stage (cosine
//! evaluations and per-pair aggregations). Embedding-based search needs one
//! encoder pass per video regardless of how many query/database pairs are
//! scored afterwards.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::RegionFeatureTensor;
use crate::model::{embed_video, ModelParams};
use crate::retrieval::{
    average_query_expansion, rank, shot_rank, EmbeddingIndex, IndexMode, RankedList,
    ShotAggregation,
};
use crate::shots::{embed_shots, ShotSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    /// Network forward passes.
    pub encoder_passes: u64,
    /// Cosine similarities between two embeddings.
    pub similarity_evaluations: u64,
    /// Query/database video pairs scored.
    pub pair_aggregations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueryOptions {
    /// Shot-level aggregation; ignored for video indexes.
    pub aggregation: ShotAggregation,
    /// Average query expansion depth (video indexes only).
    pub expansion: Option<usize>,
    /// Drop each query's own id from its ranking.
    pub exclude_self: bool,
}

#[derive(Debug, Default)]
pub struct Engine {
    encoder_passes: AtomicU64,
    similarity_evaluations: AtomicU64,
    pair_aggregations: AtomicU64,
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> Counters {
        Counters {
            encoder_passes: self.encoder_passes.load(Ordering::Relaxed),
            similarity_evaluations: self.similarity_evaluations.load(Ordering::Relaxed),
            pair_aggregations: self.pair_aggregations.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.encoder_passes.store(0, Ordering::Relaxed);
        self.similarity_evaluations.store(0, Ordering::Relaxed);
        self.pair_aggregations.store(0, Ordering::Relaxed);
    }

    /// Embeds every video in parallel; output order follows input order.
    pub fn embed_videos(
        &self,
        params: &ModelParams,
        videos: &[RegionFeatureTensor],
    ) -> Result<Vec<Array1<f64>>> {
        let out = videos
            .par_iter()
            .map(|v| embed_video(params, v))
            .collect::<Result<Vec<_>>>()?;
        self.encoder_passes.fetch_add(out.len() as u64, Ordering::Relaxed);
        Ok(out)
    }

    pub fn embed_shot_sets(
        &self,
        params: &ModelParams,
        videos: &[RegionFeatureTensor],
        tau: f64,
    ) -> Result<Vec<ShotSet>> {
        let out = videos
            .par_iter()
            .map(|v| embed_shots(params, v, tau))
            .collect::<Result<Vec<_>>>()?;
        let shots: usize = out.iter().map(ShotSet::len).sum();
        self.encoder_passes.fetch_add(shots as u64, Ordering::Relaxed);
        Ok(out)
    }

    /// Video-level index of `videos`.
    pub fn build_video_index(
        &self,
        params: &ModelParams,
        videos: &[RegionFeatureTensor],
    ) -> Result<EmbeddingIndex> {
        let embeddings = self.embed_videos(params, videos)?;
        let mut index = EmbeddingIndex::new(IndexMode::Video, params.config().embed_dim);
        for (v, e) in videos.iter().zip(&embeddings) {
            index.push(v.video_id(), None, e.as_slice().expect("contiguous"))?;
        }
        Ok(index)
    }

    /// Shot-level index of `videos`.
    pub fn build_shot_index(
        &self,
        params: &ModelParams,
        videos: &[RegionFeatureTensor],
        tau: f64,
    ) -> Result<EmbeddingIndex> {
        let sets = self.embed_shot_sets(params, videos, tau)?;
        EmbeddingIndex::from_shot_sets(&sets, params.config().embed_dim)
    }

    /// Ranks the database for every video of `queries`. Both indexes must have
    /// the same granularity. Runs in parallel across queries; results are in
    /// query order.
    pub fn query_all(
        &self,
        queries: &EmbeddingIndex,
        database: &EmbeddingIndex,
        options: &QueryOptions,
    ) -> Result<Vec<RankedList>> {
        if queries.mode() != database.mode() {
            return Err(Error::InvalidInput(format!(
                "query file is {}-level but the index is {}-level",
                queries.mode().name(),
                database.mode().name()
            )));
        }
        if queries.dim() != database.dim() {
            return Err(Error::ShapeMismatch(format!(
                "query embeddings have {} dims, index has {}",
                queries.dim(),
                database.dim()
            )));
        }
        let items: Vec<_> = queries.videos().collect();
        items
            .par_iter()
            .map(|(id, entries)| {
                let shots: Vec<&[f64]> = entries.iter().map(|e| e.embedding.as_slice()).collect();
                self.query(id, &shots, database, options)
            })
            .collect()
    }

    /// Ranks the database for one query given as its shot embeddings (a single
    /// embedding for video-level search).
    pub fn query(
        &self,
        query_id: &str,
        shots: &[&[f64]],
        database: &EmbeddingIndex,
        options: &QueryOptions,
    ) -> Result<RankedList> {
        let exclude = options.exclude_self.then_some(query_id);
        let list = match database.mode() {
            IndexMode::Video => {
                let [query] = shots else {
                    return Err(Error::InvalidInput(format!(
                        "video-level query {query_id:?} has {} embeddings",
                        shots.len()
                    )));
                };
                let expanded;
                let query: &[f64] = match options.expansion {
                    Some(k) => {
                        expanded = average_query_expansion(query, database, k, exclude)?;
                        self.similarity_evaluations
                            .fetch_add(database.len() as u64, Ordering::Relaxed);
                        &expanded
                    }
                    None => query,
                };
                let list = rank(query_id, query, database)?;
                self.similarity_evaluations
                    .fetch_add(database.len() as u64, Ordering::Relaxed);
                list
            }
            IndexMode::Shot => {
                if options.expansion.is_some() {
                    return Err(Error::InvalidConfig(
                        "query expansion applies to video-level indexes only".into(),
                    ));
                }
                let list = shot_rank(query_id, shots, database, options.aggregation)?;
                self.similarity_evaluations
                    .fetch_add((shots.len() * database.len()) as u64, Ordering::Relaxed);
                list
            }
        };
        self.pair_aggregations
            .fetch_add(database.video_count() as u64, Ordering::Relaxed);
        Ok(match exclude {
            Some(id) => list.without(id),
            None => list,
        })
    }
}
