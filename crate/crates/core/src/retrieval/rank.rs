use std::cmp::Ordering;
use std::io::Write;

use ndarray::Array2;

use super::index::{EmbeddingIndex, IndexMode};
use crate::error::{Error, Result};
use crate::similarity::cosine_similarity;

/// Database videos for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub items: Vec<(String, f64)>,
}

impl RankedList {
    /// Sorts by descending score; equal scores keep ascending id order.
    pub fn new(query_id: &str, mut items: Vec<(String, f64)>) -> Self {
        items.sort_by(compare_scored);
        Self {
            query_id: query_id.to_string(),
            items,
        }
    }

    /// The same list with one video removed (leave-one-out evaluation).
    pub fn without(mut self, video_id: &str) -> Self {
        self.items.retain(|(v, _)| v != video_id);
        self
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.items.iter().map(|(v, _)| v.as_str())
    }
}

fn compare_scored(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn require(index: &EmbeddingIndex, mode: IndexMode) -> Result<()> {
    if index.is_empty() {
        return Err(Error::Empty("index"));
    }
    if index.mode() != mode {
        return Err(Error::InvalidInput(format!(
            "operation needs a {} index, got a {} index",
            mode.name(),
            index.mode().name()
        )));
    }
    Ok(())
}

/// Cosine similarity of `query` against every video of a video-level index.
pub fn rank(query_id: &str, query: &[f64], index: &EmbeddingIndex) -> Result<RankedList> {
    require(index, IndexMode::Video)?;
    if query.len() != index.dim() {
        return Err(Error::ShapeMismatch(format!(
            "query has {} dims, index has {}",
            query.len(),
            index.dim()
        )));
    }
    let items = index
        .entries()
        .iter()
        .map(|e| (e.video_id.clone(), cosine_similarity(query, &e.embedding)))
        .collect();
    Ok(RankedList::new(query_id, items))
}

/// Pairwise shot cosine matrix, query shots along rows.
pub fn shot_similarity_matrix<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    query: &[A],
    database: &[B],
) -> Result<Array2<f64>> {
    if query.is_empty() || database.is_empty() {
        return Err(Error::Empty("shot set"));
    }
    Ok(Array2::from_shape_fn((query.len(), database.len()), |(i, j)| {
        cosine_similarity(query[i].as_ref(), database[j].as_ref())
    }))
}

/// Mean over rows of the row maximum.
pub fn chamfer(s: &Array2<f64>) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Empty("similarity matrix"));
    }
    let total: f64 = s
        .rows()
        .into_iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / s.nrows() as f64)
}

/// Average of the Chamfer similarity of `s` and of its transpose.
pub fn symmetric_chamfer(s: &Array2<f64>) -> Result<f64> {
    Ok((chamfer(s)? + chamfer(&s.t().to_owned())?) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShotAggregation {
    #[default]
    Chamfer,
    SymmetricChamfer,
}

impl ShotAggregation {
    pub fn apply(self, s: &Array2<f64>) -> Result<f64> {
        match self {
            Self::Chamfer => chamfer(s),
            Self::SymmetricChamfer => symmetric_chamfer(s),
        }
    }
}

impl std::str::FromStr for ShotAggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cs" => Ok(Self::Chamfer),
            "scs" => Ok(Self::SymmetricChamfer),
            _ => Err(format!("unknown aggregation {s:?}, expected cs or scs")),
        }
    }
}

/// Scores every database video by aggregating its shot similarity matrix
/// against the query shots.
pub fn shot_rank<A: AsRef<[f64]>>(
    query_id: &str,
    query_shots: &[A],
    index: &EmbeddingIndex,
    aggregation: ShotAggregation,
) -> Result<RankedList> {
    require(index, IndexMode::Shot)?;
    if let Some(q) = query_shots.iter().find(|q| q.as_ref().len() != index.dim()) {
        return Err(Error::ShapeMismatch(format!(
            "query shot has {} dims, index has {}",
            q.as_ref().len(),
            index.dim()
        )));
    }
    let items = index
        .videos()
        .map(|(video, entries)| {
            let db: Vec<&[f64]> = entries.iter().map(|e| e.embedding.as_slice()).collect();
            let s = shot_similarity_matrix(query_shots, &db)?;
            Ok((video.to_string(), aggregation.apply(&s)?))
        })
        .collect::<Result<_>>()?;
    Ok(RankedList::new(query_id, items))
}

/// Mean of the query and its `k` best matches (ignoring `exclude`, usually
/// the query's own id). `k` is clamped to the number of candidates.
pub fn average_query_expansion(
    query: &[f64],
    index: &EmbeddingIndex,
    k: usize,
    exclude: Option<&str>,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("query expansion depth must be >= 1".into()));
    }
    let mut ranked = rank("", query, index)?;
    if let Some(id) = exclude {
        ranked = ranked.without(id);
    }
    if k > ranked.items.len() {
        log::warn!(
            "query expansion depth {k} exceeds {} candidates; using all of them",
            ranked.items.len()
        );
    }
    let mut sum = query.to_vec();
    let mut count = 1.0;
    for (id, _) in ranked.items.iter().take(k) {
        let e = &index.video(id).expect("ranked id is indexed")[0].embedding;
        for (s, v) in sum.iter_mut().zip(e) {
            *s += v;
        }
        count += 1.0;
    }
    Ok(sum.into_iter().map(|s| s / count).collect())
}

/// Writes `query_id<TAB>rank<TAB>video_id<TAB>score` lines, ranks 1-based.
pub fn write_rankings<'a>(
    rankings: impl IntoIterator<Item = &'a RankedList>,
    mut out: impl Write,
) -> std::io::Result<()> {
    for list in rankings {
        for (r, (video, score)) in list.items.iter().enumerate() {
            writeln!(out, "{}\t{}\t{video}\t{score:.9}", list.query_id, r + 1)?;
        }
    }
    Ok(())
}
