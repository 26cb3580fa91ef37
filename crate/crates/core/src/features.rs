//! Region descriptor tensors, the RMF1 on-disk format and corpus manifests.
//!
//! RMF1 layout, little-endian:
//!
//! ```text
//! 0..8    magic "RMF1\0\0\0\0"
//! 8..20   frames, regions, channels as u32
//! 20..    frames*regions*channels f32 values, (frame, region, channel) row-major
//! last 4  CRC32 of everything before it
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::binio::{self, Cursor, CRC_LEN};
use crate::error::{Error, Result};
use crate::retrieval::Qrels;

pub const RMF1_MAGIC: [u8; 8] = *b"RMF1\0\0\0\0";
const RMF1_HEADER_LEN: usize = 8 + 3 * 4;

/// A video as `frames x regions x channels` region descriptors, one frame per
/// second of footage.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatureTensor {
    video_id: String,
    frames: usize,
    regions: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RegionFeatureTensor {
    pub fn new(
        video_id: impl Into<String>,
        frames: usize,
        regions: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let tensor = Self {
            video_id: video_id.into(),
            frames,
            regions,
            channels,
            data,
        };
        tensor.validate()?;
        Ok(tensor)
    }

    /// Re-checks every invariant. Cheap relative to any forward pass.
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.regions == 0 || self.channels == 0 {
            return Err(Error::InvalidTensor(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.frames, self.regions, self.channels
            )));
        }
        let expected = element_count(self.frames, self.regions, self.channels)?;
        if self.data.len() != expected {
            return Err(Error::InvalidTensor(format!(
                "data length {} does not match {}x{}x{}",
                self.data.len(),
                self.frames,
                self.regions,
                self.channels
            )));
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(())
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of region nodes, `frames * regions`.
    pub fn nodes(&self) -> usize {
        self.frames * self.regions
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn with_video_id(mut self, video_id: impl Into<String>) -> Self {
        self.video_id = video_id.into();
        self
    }

    /// Raw region descriptors of frame `t` (0-based), region-major.
    pub fn frame(&self, t: usize) -> Result<&[f32]> {
        if t >= self.frames {
            return Err(Error::OutOfRange {
                index: t,
                len: self.frames,
            });
        }
        let width = self.regions * self.channels;
        Ok(&self.data[t * width..(t + 1) * width])
    }

    /// Frame `t` (0-based) as a single `regions * channels` vector, the frame
    /// representation compared by the shot detector.
    pub fn flatten_frame(&self, t: usize) -> Result<Vec<f64>> {
        Ok(self.frame(t)?.iter().map(|&v| f64::from(v)).collect())
    }

    /// All region descriptors as an `N x C` matrix, node `i` belonging to frame
    /// `i / regions`.
    pub fn node_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.nodes(), self.channels), |(i, c)| {
            f64::from(self.data[i * self.channels + c])
        })
    }

    /// Contiguous frame slice `range` (0-based, half-open) as a new tensor.
    pub fn slice_frames(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.frames {
            return Err(Error::InvalidInput(format!(
                "frame range {range:?} invalid for {} frames",
                self.frames
            )));
        }
        let width = self.regions * self.channels;
        Ok(Self {
            video_id: self.video_id.clone(),
            frames: range.len(),
            regions: self.regions,
            channels: self.channels,
            data: self.data[range.start * width..range.end * width].to_vec(),
        })
    }

    /// Keeps the listed frames in the given order.
    pub fn select_frames(&self, frames: &[usize]) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("frame selection"));
        }
        let mut data = Vec::with_capacity(frames.len() * self.regions * self.channels);
        for &t in frames {
            data.extend_from_slice(self.frame(t)?);
        }
        Ok(Self {
            video_id: self.video_id.clone(),
            frames: frames.len(),
            regions: self.regions,
            channels: self.channels,
            data,
        })
    }

    /// Same video played backwards.
    pub fn reversed(&self) -> Self {
        let order: Vec<usize> = (0..self.frames).rev().collect();
        self.select_frames(&order).expect("non-empty")
    }

    /// Joins tensors along the frame axis. All parts must share region and
    /// channel counts; the first part's id is kept.
    pub fn concat_frames(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("tensor list"))?;
        let mut data = Vec::new();
        let mut frames = 0;
        for part in parts {
            if part.regions != first.regions || part.channels != first.channels {
                return Err(Error::ShapeMismatch(format!(
                    "cannot concatenate {}x{} frames onto {}x{}",
                    part.regions, part.channels, first.regions, first.channels
                )));
            }
            frames += part.frames;
            data.extend_from_slice(&part.data);
        }
        Ok(Self {
            video_id: first.video_id.clone(),
            frames,
            regions: first.regions,
            channels: first.channels,
            data,
        })
    }
}

fn element_count(frames: usize, regions: usize, channels: usize) -> Result<usize> {
    frames
        .checked_mul(regions)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| {
            Error::DimensionOverflow(format!("{frames}x{regions}x{channels} overflows"))
        })
}

/// Serialises a tensor to RMF1. The tensor is validated before anything is
/// written.
pub fn write_features(tensor: &RegionFeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    tensor.validate()?;
    let dims = [tensor.frames, tensor.regions, tensor.channels];
    let mut buf = Vec::with_capacity(RMF1_HEADER_LEN + 4 * tensor.data.len() + CRC_LEN);
    buf.extend_from_slice(&RMF1_MAGIC);
    for d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::DimensionOverflow(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in &tensor.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    binio::write_with_crc(path.as_ref(), buf)
}

/// Reads an RMF1 file. The video id is taken from the file stem; manifests
/// override it with their own id.
pub fn read_features(path: impl AsRef<Path>) -> Result<RegionFeatureTensor> {
    let path = path.as_ref();
    let bytes = binio::read_file(path)?;
    let video_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_features(&bytes, video_id)
}

pub fn decode_features(bytes: &[u8], video_id: String) -> Result<RegionFeatureTensor> {
    if bytes.len() < RMF1_HEADER_LEN + CRC_LEN {
        if bytes.len() >= 8 && bytes[..8] != RMF1_MAGIC {
            return Err(bad_magic(&bytes[..8]));
        }
        return Err(Error::Truncated {
            expected: (RMF1_HEADER_LEN + CRC_LEN) as u64,
            found: bytes.len() as u64,
        });
    }
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(8)?;
    if magic != RMF1_MAGIC {
        return Err(bad_magic(magic));
    }
    let frames = cur.u32()? as usize;
    let regions = cur.u32()? as usize;
    let channels = cur.u32()? as usize;
    if frames == 0 || regions == 0 || channels == 0 {
        return Err(Error::InvalidTensor(format!(
            "header dimensions {frames}x{regions}x{channels} must be positive"
        )));
    }
    let count = (frames as u64)
        .checked_mul(regions as u64)
        .and_then(|n| n.checked_mul(channels as u64))
        .filter(|&n| usize::try_from(n).is_ok())
        .ok_or_else(|| {
            Error::DimensionOverflow(format!("{frames}x{regions}x{channels} overflows"))
        })?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add((RMF1_HEADER_LEN + CRC_LEN) as u64))
        .ok_or_else(|| Error::DimensionOverflow(format!("{count} elements overflow")))?;
    binio::check_len(expected, bytes.len())?;
    binio::verify_crc(bytes)?;

    let count = count as usize;
    let mut data = Vec::with_capacity(count);
    for index in 0..count {
        let v = cur.f32()?;
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        data.push(v);
    }
    RegionFeatureTensor::new(video_id, frames, regions, channels, data)
}

fn bad_magic(found: &[u8]) -> Error {
    Error::BadMagic {
        expected: RMF1_MAGIC.to_vec(),
        found: found.to_vec(),
    }
}

/// One manifest line: `video_id<TAB>path<TAB>group_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub path: PathBuf,
    pub group_id: String,
}

/// A labelled corpus. Videos sharing a `group_id` are related (partial copies);
/// videos from different groups are not.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct group ids in first-seen order.
    pub fn groups(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.group_id.as_str()))
            .map(|e| e.group_id.as_str())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.video_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate video id {:?} in manifest",
                    e.video_id
                )));
            }
            if e.video_id.contains(['\t', '\n']) || e.group_id.contains(['\t', '\n']) {
                return Err(Error::InvalidInput(format!(
                    "ids must not contain tabs or newlines: {:?}",
                    e.video_id
                )));
            }
        }
        Ok(())
    }

    /// Loads the tensor of entry `i`, relabelled with the manifest's video id.
    pub fn load(&self, i: usize) -> Result<RegionFeatureTensor> {
        let entry = self.entries.get(i).ok_or(Error::OutOfRange {
            index: i,
            len: self.entries.len(),
        })?;
        Ok(read_features(&entry.path)?.with_video_id(entry.video_id.clone()))
    }

    pub fn load_all(&self) -> Result<Vec<RegionFeatureTensor>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }

    /// Writes the manifest. Paths inside `base` are stored relative to it.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = String::new();
        for e in &self.entries {
            let stored = e.path.strip_prefix(base).unwrap_or(&e.path);
            let _ = writeln!(out, "{}\t{}\t{}", e.video_id, stored.display(), e.group_id);
        }
        fs::write(path, out).map_err(|err| Error::io(path, err))
    }

    /// Reads a manifest; relative paths resolve against the manifest's
    /// directory and must exist.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = || format!("{}:{}", path.display(), lineno + 1);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(loc(), "expected video_id<TAB>path<TAB>group_id"));
            }
            let file = base.join(fields[1]);
            if !file.is_file() {
                return Err(Error::parse(
                    loc(),
                    format!("feature file {} not found", file.display()),
                ));
            }
            entries.push(ManifestEntry {
                video_id: fields[0].to_string(),
                path: file,
                group_id: fields[2].to_string(),
            });
        }
        let manifest = Self { entries };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Videos with relatedness labels: same `group` means related.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub videos: Vec<RegionFeatureTensor>,
    pub groups: Vec<String>,
}

impl LabeledCorpus {
    /// Writes one RMF1 file per video plus `manifest.tsv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<CorpusManifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.videos.len());
        for (video, group) in self.videos.iter().zip(&self.groups) {
            let path = dir.join(format!("{}.rmf", video.video_id()));
            write_features(video, &path)?;
            entries.push(ManifestEntry {
                video_id: video.video_id().to_string(),
                path,
                group_id: group.clone(),
            });
        }
        let manifest = CorpusManifest { entries };
        manifest.write(dir.join("manifest.tsv"))?;
        Ok(manifest)
    }

    /// Leave-one-out relevance: every video is a query whose positives are the
    /// other members of its group.
    pub fn qrels(&self) -> Qrels {
        let mut qrels = Qrels::new();
        for (q, qg) in self.videos.iter().zip(&self.groups) {
            for (d, dg) in self.videos.iter().zip(&self.groups) {
                if qg == dg && q.video_id() != d.video_id() {
                    qrels.insert(q.video_id(), d.video_id(), "ND");
                }
            }
            qrels.set_query_group(q.video_id(), qg);
        }
        qrels
    }

    /// Loads every manifest entry.
    pub fn from_manifest(manifest: &CorpusManifest) -> Result<Self> {
        Ok(Self {
            videos: manifest.load_all()?,
            groups: manifest.entries.iter().map(|e| e.group_id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(frames: usize, regions: usize, channels: usize) -> RegionFeatureTensor {
        let data = (0..frames * regions * channels).map(|i| i as f32 * 0.25 - 1.0).collect();
        RegionFeatureTensor::new("v", frames, regions, channels, data).unwrap()
    }

    #[test]
    fn smallest_tensor_is_28_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.rmf");
        let t = RegionFeatureTensor::new("one", 1, 1, 1, vec![0.5]).unwrap();
        write_features(&t, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        // 8 magic + 12 dims + 4 payload + 4 checksum
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[..8], b"RMF1\0\0\0\0");
        assert_eq!(&bytes[8..20], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &0.5f32.to_le_bytes());
        let back = read_features(&path).unwrap();
        assert_eq!(back.data(), &[0.5]);
        assert_eq!(back.video_id(), "one");
    }

    #[test]
    fn nan_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.rmf");
        let bad = RegionFeatureTensor {
            video_id: "x".into(),
            frames: 1,
            regions: 1,
            channels: 2,
            data: vec![1.0, f32::NAN],
        };
        assert!(matches!(write_features(&bad, &path), Err(Error::NonFinite { index: 1 })));
        assert!(!path.exists());
        assert!(RegionFeatureTensor::new("x", 1, 1, 2, vec![1.0, f32::NAN]).is_err());
    }

    #[test]
    fn read_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.rmf");
        write_features(&tensor(2, 2, 3), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut corrupt = good.clone();
        *corrupt.last_mut().unwrap() ^= 0xff;
        assert!(matches!(
            decode_features(&corrupt, "t".into()),
            Err(Error::ChecksumMismatch { .. })
        ));

        let truncated = &good[..good.len() - 9];
        assert!(matches!(
            decode_features(truncated, "t".into()),
            Err(Error::Truncated { .. })
        ));

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode_features(&magic, "t".into()), Err(Error::BadMagic { .. })));

        let mut huge = good.clone();
        huge[8..20].copy_from_slice(&[0xff; 12]);
        let err = decode_features(&huge, "t".into()).unwrap_err();
        assert!(
            matches!(err, Error::DimensionOverflow(_) | Error::Truncated { .. }),
            "{err}"
        );

        // NaN payload with a valid checksum.
        let mut nan = good[..good.len() - 4].to_vec();
        nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        let crc = crc32fast::hash(&nan);
        nan.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_features(&nan, "t".into()),
            Err(Error::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn flatten_frame_is_region_major() {
        let t = RegionFeatureTensor::new("v", 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.flatten_frame(0).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(t.flatten_frame(1), Err(Error::OutOfRange { index: 1, len: 1 })));
        let big = tensor(3, 4, 5);
        for f in 0..3 {
            assert_eq!(big.flatten_frame(f).unwrap().len(), 20);
        }
    }

    #[test]
    fn frame_ops_compose() {
        let t = tensor(5, 2, 3);
        let a = t.slice_frames(0..2).unwrap();
        let b = t.slice_frames(2..5).unwrap();
        assert_eq!(RegionFeatureTensor::concat_frames(&[a, b]).unwrap(), t);
        assert_eq!(t.reversed().reversed(), t);
        assert_eq!(t.reversed().frame(0).unwrap(), t.frame(4).unwrap());
        assert!(t.slice_frames(3..3).is_err());
        assert!(t.slice_frames(4..6).is_err());
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for i in 0..3 {
            let p = dir.path().join(format!("v{i}.rmf"));
            write_features(&tensor(1, 1, 2), &p).unwrap();
            entries.push(ManifestEntry {
                video_id: format!("vid{i}"),
                path: p,
                group_id: format!("g{}", i % 2),
            });
        }
        let manifest = CorpusManifest { entries };
        let mpath = dir.path().join("manifest.tsv");
        manifest.write(&mpath).unwrap();
        let text = fs::read_to_string(&mpath).unwrap();
        assert!(text.starts_with("vid0\tv0.rmf\tg0\n"));
        let back = CorpusManifest::read(&mpath).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(back.groups(), vec!["g0", "g1"]);
        assert_eq!(back.load(2).unwrap().video_id(), "vid2");

        fs::write(&mpath, "a\tv0.rmf\tg\na\tv1.rmf\tg\n").unwrap();
        assert!(CorpusManifest::read(&mpath).is_err());
        fs::write(&mpath, "a\tmissing.rmf\tg\n").unwrap();
        assert!(CorpusManifest::read(&mpath).is_err());
    }
}
