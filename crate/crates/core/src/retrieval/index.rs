//! Flat embedding store and the EMB1 file format.
//!
//! ```text
//! 0..8    magic "EMB1\0\0\0\0"
//! 8       mode u8 (0 = video, 1 = shot)
//! 9..13   record count u32
//! 13..17  D u32
//! records id length u32, UTF-8 id, [shot index u32 in shot mode], D x f32
//! last 4  CRC32
//! ```

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::path::Path;

use crate::binio::{self, Cursor, CRC_LEN};
use crate::error::{Error, Result};
use crate::shots::ShotSet;

pub const EMB1_MAGIC: [u8; 8] = *b"EMB1\0\0\0\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    Video,
    Shot,
}

impl IndexMode {
    fn code(self) -> u8 {
        match self {
            Self::Video => 0,
            Self::Shot => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Video => "video",
            Self::Shot => "shot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub video_id: String,
    /// Position of the shot within its video; `None` in video mode.
    pub shot: Option<u32>,
    /// Stored at single precision; kept widened so similarity math runs in f64.
    pub embedding: Vec<f64>,
}

/// Ordered, exact-scan embedding store. In shot mode the shots of a video are
/// contiguous and in ascending shot order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    mode: IndexMode,
    dim: usize,
    entries: Vec<IndexEntry>,
    /// Entry range of each video, in first-appearance order.
    videos: Vec<(String, Range<usize>)>,
    lookup: HashMap<String, usize>,
}

impl EmbeddingIndex {
    pub fn new(mode: IndexMode, dim: usize) -> Self {
        Self {
            mode,
            dim,
            entries: Vec::new(),
            videos: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    /// Appends one embedding, rounding it to single precision.
    pub fn push(&mut self, video_id: &str, shot: Option<u32>, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding of {video_id:?} has {} dims, index has {}",
                embedding.len(),
                self.dim
            )));
        }
        if let Some(i) = embedding.iter().position(|v| !(*v as f32).is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        if video_id.is_empty() || video_id.contains(['\t', '\n']) {
            return Err(Error::InvalidInput(format!("invalid video id {video_id:?}")));
        }
        let idx = self.entries.len();
        match (self.mode, shot) {
            (IndexMode::Video, None) => {
                if self.lookup.contains_key(video_id) {
                    return Err(Error::InvalidInput(format!("duplicate video id {video_id:?}")));
                }
                self.add_video(video_id, idx);
            }
            (IndexMode::Shot, Some(s)) => match self.videos.last_mut() {
                Some((v, range)) if v == video_id => {
                    if self.entries[idx - 1].shot != s.checked_sub(1) {
                        return Err(Error::InvalidInput(format!(
                            "shot {s} of {video_id:?} is out of order"
                        )));
                    }
                    range.end = idx + 1;
                }
                _ => {
                    if s != 0 {
                        return Err(Error::InvalidInput(format!(
                            "first shot of {video_id:?} has index {s}"
                        )));
                    }
                    if self.lookup.contains_key(video_id) {
                        return Err(Error::InvalidInput(format!(
                            "shots of {video_id:?} are not contiguous"
                        )));
                    }
                    self.add_video(video_id, idx);
                }
            },
            _ => {
                return Err(Error::InvalidInput(format!(
                    "{} index entries {} a shot index",
                    self.mode.name(),
                    if shot.is_some() { "cannot carry" } else { "need" }
                )))
            }
        }
        self.entries.push(IndexEntry {
            video_id: video_id.to_string(),
            shot,
            embedding: embedding.iter().map(|&v| f64::from(v as f32)).collect(),
        });
        Ok(())
    }

    fn add_video(&mut self, video_id: &str, entry: usize) {
        self.lookup.insert(video_id.to_string(), self.videos.len());
        self.videos.push((video_id.to_string(), entry..entry + 1));
    }

    pub fn from_shot_sets<'a>(sets: impl IntoIterator<Item = &'a ShotSet>, dim: usize) -> Result<Self> {
        let mut index = Self::new(IndexMode::Shot, dim);
        for set in sets {
            for (i, e) in set.embeddings.iter().enumerate() {
                let shot = u32::try_from(i)
                    .map_err(|_| Error::DimensionOverflow("shot index exceeds u32".into()))?;
                index.push(&set.video_id, Some(shot), e.as_slice().expect("contiguous"))?;
            }
        }
        Ok(index)
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct videos.
    pub fn video_count(&self) -> usize {
        self.videos.len()
    }

    /// Each video id with its entries, in index order.
    pub fn videos(&self) -> impl Iterator<Item = (&str, &[IndexEntry])> + '_ {
        self.videos
            .iter()
            .map(|(v, r)| (v.as_str(), &self.entries[r.clone()]))
    }

    /// Entries of one video.
    pub fn video(&self, video_id: &str) -> Option<&[IndexEntry]> {
        self.lookup
            .get(video_id)
            .map(|&i| &self.entries[self.videos[i].1.clone()])
    }
}

pub fn write_index(index: &EmbeddingIndex, path: impl AsRef<Path>) -> Result<()> {
    let to_u32 = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::DimensionOverflow(format!("{what} {n} exceeds u32")))
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(&EMB1_MAGIC);
    buf.push(index.mode.code());
    buf.extend_from_slice(&to_u32(index.len(), "record count")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(index.dim, "dimension")?.to_le_bytes());
    for e in &index.entries {
        buf.extend_from_slice(&to_u32(e.video_id.len(), "id length")?.to_le_bytes());
        buf.extend_from_slice(e.video_id.as_bytes());
        if let Some(s) = e.shot {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        for &v in &e.embedding {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    binio::write_with_crc(path.as_ref(), buf)
}

pub fn read_index(path: impl AsRef<Path>) -> Result<EmbeddingIndex> {
    decode_index(&binio::read_file(path.as_ref())?)
}

fn decode_index(bytes: &[u8]) -> Result<EmbeddingIndex> {
    const HEADER: usize = 8 + 1 + 4 + 4;
    if bytes.len() < HEADER + CRC_LEN {
        return Err(Error::Truncated {
            expected: (HEADER + CRC_LEN) as u64,
            found: bytes.len() as u64,
        });
    }
    binio::verify_crc(bytes)?;
    let body = &bytes[..bytes.len() - CRC_LEN];
    let mut cur = Cursor::new(body);
    let magic = cur.take(8)?;
    if magic != EMB1_MAGIC {
        return Err(Error::BadMagic {
            expected: EMB1_MAGIC.to_vec(),
            found: magic.to_vec(),
        });
    }
    let mode = match cur.u8()? {
        0 => IndexMode::Video,
        1 => IndexMode::Shot,
        m => return Err(Error::InvalidInput(format!("unknown index mode {m}"))),
    };
    let count = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let mut index = EmbeddingIndex::new(mode, dim);
    let mut seen = HashSet::new();
    let mut embedding = vec![0.0; dim];
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| Error::InvalidInput(format!("record id is not UTF-8: {e}")))?
            .to_string();
        let shot = match mode {
            IndexMode::Video => None,
            IndexMode::Shot => Some(cur.u32()?),
        };
        if !seen.insert((id.clone(), shot)) {
            return Err(Error::InvalidInput(format!("duplicate record {id:?}")));
        }
        for v in &mut embedding {
            *v = f64::from(cur.f32()?);
        }
        index.push(&id, shot, &embedding)?;
    }
    if cur.position() != body.len() {
        return Err(Error::TrailingBytes {
            expected: (cur.position() + CRC_LEN) as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(index)
}
