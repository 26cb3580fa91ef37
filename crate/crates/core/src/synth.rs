//! Synthetic corpora standing in for real R-MAC features at desk scale.
//!
//! A *scene* is a sequence of frames whose regions share a fixed base
//! descriptor plus a slowly drifting AR(1) component, so consecutive frames
//! are highly similar and frames far apart only share the base. Groups of
//! related videos are noisy, temporally cropped copies of one scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::{LabeledCorpus, RegionFeatureTensor};
use crate::retrieval::Qrels;

/// Shape of the scene process shared by every generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneStyle {
    /// Weight of the per-region base descriptor.
    pub base_scale: f64,
    /// Weight of the drifting component.
    pub drift_scale: f64,
    /// Frame-to-frame correlation of the drift, in `[0, 1)`.
    pub drift_corr: f64,
}

impl Default for SceneStyle {
    fn default() -> Self {
        Self {
            base_scale: 1.0,
            drift_scale: 1.0,
            drift_corr: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub groups: usize,
    pub videos_per_group: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub regions: usize,
    pub channels: usize,
    /// Standard deviation of the per-element Gaussian noise.
    pub noise_scale: f64,
    /// Probability of dropping each frame (order is preserved, one frame is
    /// always kept).
    pub drop_prob: f64,
    /// Per-video offset added to the first `nuisance_dims` channels, constant
    /// across the video. Models global photometric changes between copies.
    pub nuisance_scale: f64,
    pub nuisance_dims: usize,
    pub scene: SceneStyle,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            groups: 8,
            videos_per_group: 4,
            min_frames: 20,
            max_frames: 60,
            regions: 4,
            channels: 32,
            noise_scale: 0.1,
            drop_prob: 0.0,
            nuisance_scale: 0.0,
            nuisance_dims: 0,
            scene: SceneStyle::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.videos_per_group == 0 {
            return Err(Error::InvalidConfig("group and video counts must be >= 1".into()));
        }
        if self.regions == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig("regions and channels must be >= 1".into()));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::InvalidConfig(format!(
                "unsatisfiable frame range [{}, {}]",
                self.min_frames, self.max_frames
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig("noise scale must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::InvalidConfig("drop probability must be in [0, 1)".into()));
        }
        if self.nuisance_dims > self.channels {
            return Err(Error::InvalidConfig("nuisance dims exceed channel count".into()));
        }
        validate_style(&self.scene)
    }
}

fn validate_style(style: &SceneStyle) -> Result<()> {
    if !(0.0..1.0).contains(&style.drift_corr) {
        return Err(Error::InvalidConfig("drift correlation must be in [0, 1)".into()));
    }
    Ok(())
}

/// Frame-major scene buffer, `frames x regions x channels`.
#[derive(Debug, Clone)]
struct Scene {
    frames: usize,
    width: usize,
    data: Vec<f64>,
}

impl Scene {
    fn generate(
        rng: &mut ChaCha8Rng,
        frames: usize,
        regions: usize,
        channels: usize,
        style: &SceneStyle,
    ) -> Self {
        let width = regions * channels;
        let base: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
        let mut drift: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
        let innovation = (1.0 - style.drift_corr * style.drift_corr).sqrt();
        let mut data = Vec::with_capacity(frames * width);
        for t in 0..frames {
            if t > 0 {
                for d in drift.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *d = style.drift_corr * *d + innovation * e;
                }
            }
            data.extend(
                base.iter()
                    .zip(&drift)
                    .map(|(b, d)| style.base_scale * b + style.drift_scale * d),
            );
        }
        Self {
            frames,
            width,
            data,
        }
    }

    /// `corr * self + sqrt(1 - corr^2) * other`: a related but distinct scene.
    fn blend(&self, other: &Scene, corr: f64) -> Self {
        let rest = (1.0 - corr * corr).sqrt();
        Self {
            frames: self.frames,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| corr * a + rest * b)
                .collect(),
        }
    }

    fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }
}

/// Builds the f32 payload for the chosen frames of a scene with additive noise.
fn render(
    rng: &mut ChaCha8Rng,
    scene: &Scene,
    frames: &[usize],
    noise_scale: f64,
    offset: &[f64],
    out: &mut Vec<f32>,
) {
    let channels = offset.len();
    for &t in frames {
        for (k, &v) in scene.frame(t).iter().enumerate() {
            let noise: f64 = if noise_scale > 0.0 {
                noise_scale * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            out.push((v + noise + offset[k % channels]) as f32);
        }
    }
}

fn crop(rng: &mut ChaCha8Rng, available: usize, min: usize, max: usize) -> std::ops::Range<usize> {
    let len = rng.random_range(min..=max.min(available));
    let start = rng.random_range(0..=available - len);
    start..start + len
}

/// Generates a labelled corpus of partial copies. Deterministic in `seed`.
pub fn synth_corpus(config: &SynthConfig) -> Result<LabeledCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut videos = Vec::with_capacity(config.groups * config.videos_per_group);
    let mut groups = Vec::with_capacity(videos.capacity());
    for g in 0..config.groups {
        let proto = Scene::generate(
            &mut rng,
            config.max_frames,
            config.regions,
            config.channels,
            &config.scene,
        );
        let group_id = format!("g{g:03}");
        for v in 0..config.videos_per_group {
            let window = crop(&mut rng, config.max_frames, config.min_frames, config.max_frames);
            let mut frames: Vec<usize> = window.clone().collect();
            if config.drop_prob > 0.0 {
                let keep: Vec<usize> = frames
                    .iter()
                    .copied()
                    .filter(|_| rng.random::<f64>() >= config.drop_prob)
                    .collect();
                frames = if keep.is_empty() { vec![window.start] } else { keep };
            }
            let mut offset = vec![0.0; config.channels];
            if config.nuisance_scale > 0.0 {
                for o in offset.iter_mut().take(config.nuisance_dims) {
                    *o = config.nuisance_scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let mut data = Vec::with_capacity(frames.len() * proto.width);
            render(&mut rng, &proto, &frames, config.noise_scale, &offset, &mut data);
            let id = format!("{group_id}_v{v:02}");
            videos.push(RegionFeatureTensor::new(
                id,
                frames.len(),
                config.regions,
                config.channels,
                data,
            )?);
            groups.push(group_id.clone());
        }
    }
    Ok(LabeledCorpus { videos, groups })
}

/// Corpus of multi-scene database videos and single-scene queries.
///
/// Each group owns one scene. A positive database video is three concatenated
/// segments, exactly one of which is a crop of its group's scene; the other two
/// are unrelated scenes. Queries are short single-scene clips. Each group also
/// gets single-scene "related" videos whose scene is correlated with, but not
/// equal to, the group scene; they are negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCompositeConfig {
    pub groups: usize,
    pub positives_per_group: usize,
    pub related_per_group: usize,
    pub queries_per_group: usize,
    pub min_segment: usize,
    pub max_segment: usize,
    pub min_query: usize,
    pub max_query: usize,
    pub regions: usize,
    pub channels: usize,
    pub noise_scale: f64,
    /// Correlation between a group scene and its related negatives.
    pub related_corr: f64,
    pub scene: SceneStyle,
    pub seed: u64,
}

impl Default for SceneCompositeConfig {
    fn default() -> Self {
        Self {
            groups: 8,
            positives_per_group: 3,
            related_per_group: 3,
            queries_per_group: 1,
            min_segment: 10,
            max_segment: 20,
            min_query: 8,
            max_query: 12,
            regions: 4,
            channels: 32,
            noise_scale: 0.1,
            related_corr: 0.7,
            scene: SceneStyle::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneCorpus {
    pub queries: Vec<RegionFeatureTensor>,
    pub query_groups: Vec<usize>,
    pub database: Vec<RegionFeatureTensor>,
    /// Group whose scene each database video shares, `None` for videos that
    /// share no scene with any query.
    pub database_groups: Vec<Option<usize>>,
    /// Scene boundaries (0-based start frames) of each database video.
    pub database_cuts: Vec<Vec<usize>>,
}

impl SceneCorpus {
    /// Positives (`DS`) are database videos containing the query's scene;
    /// related single-scene videos are labelled `IS` and are not positives
    /// under the default task.
    pub fn qrels(&self) -> Qrels {
        let mut qrels = Qrels::new();
        for (q, &g) in self.queries.iter().zip(&self.query_groups) {
            for (d, dg) in self.database.iter().zip(&self.database_groups) {
                if *dg == Some(g) {
                    let label = if d.video_id().contains("_rel") { "IS" } else { "DS" };
                    qrels.insert(q.video_id(), d.video_id(), label);
                }
            }
            qrels.set_query_group(q.video_id(), &format!("g{g:03}"));
        }
        qrels
    }
}

pub fn synth_scene_composite(config: &SceneCompositeConfig) -> Result<SceneCorpus> {
    if config.groups == 0 || config.positives_per_group == 0 || config.queries_per_group == 0 {
        return Err(Error::InvalidConfig("scene corpus counts must be >= 1".into()));
    }
    if config.min_segment == 0 || config.min_segment > config.max_segment {
        return Err(Error::InvalidConfig("unsatisfiable segment range".into()));
    }
    if config.min_query == 0 || config.min_query > config.max_query {
        return Err(Error::InvalidConfig("unsatisfiable query range".into()));
    }
    if !(0.0..=1.0).contains(&config.related_corr) {
        return Err(Error::InvalidConfig("related correlation must be in [0, 1]".into()));
    }
    validate_style(&config.scene)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (r, c) = (config.regions, config.channels);
    let scene_len = config.max_segment.max(config.max_query);
    let zero = vec![0.0; c];
    let width = r * c;

    let scenes: Vec<Scene> = (0..config.groups)
        .map(|_| Scene::generate(&mut rng, scene_len, r, c, &config.scene))
        .collect();

    let mut corpus = SceneCorpus {
        queries: Vec::new(),
        query_groups: Vec::new(),
        database: Vec::new(),
        database_groups: Vec::new(),
        database_cuts: Vec::new(),
    };

    for (g, scene) in scenes.iter().enumerate() {
        for q in 0..config.queries_per_group {
            let window = crop(&mut rng, scene_len, config.min_query, config.max_query);
            let frames: Vec<usize> = window.collect();
            let mut data = Vec::with_capacity(frames.len() * width);
            render(&mut rng, scene, &frames, config.noise_scale, &zero, &mut data);
            corpus.queries.push(RegionFeatureTensor::new(
                format!("q{g:03}_{q:02}"),
                frames.len(),
                r,
                c,
                data,
            )?);
            corpus.query_groups.push(g);
        }

        for p in 0..config.positives_per_group {
            let shared_slot = rng.random_range(0..3);
            let mut data = Vec::new();
            let mut cuts = Vec::with_capacity(3);
            let mut total = 0;
            for slot in 0..3 {
                cuts.push(total);
                let fresh;
                let source = if slot == shared_slot {
                    scene
                } else {
                    fresh = Scene::generate(&mut rng, scene_len, r, c, &config.scene);
                    &fresh
                };
                let window = crop(&mut rng, scene_len, config.min_segment, config.max_segment);
                let frames: Vec<usize> = window.collect();
                total += frames.len();
                render(&mut rng, source, &frames, config.noise_scale, &zero, &mut data);
            }
            corpus.database.push(RegionFeatureTensor::new(
                format!("d{g:03}_{p:02}"),
                total,
                r,
                c,
                data,
            )?);
            corpus.database_groups.push(Some(g));
            corpus.database_cuts.push(cuts);
        }

        for k in 0..config.related_per_group {
            let other = Scene::generate(&mut rng, scene_len, r, c, &config.scene);
            let related = scene.blend(&other, config.related_corr);
            let window = crop(&mut rng, scene_len, config.min_segment, config.max_segment);
            let frames: Vec<usize> = window.collect();
            let mut data = Vec::with_capacity(frames.len() * width);
            render(&mut rng, &related, &frames, config.noise_scale, &zero, &mut data);
            corpus.database.push(RegionFeatureTensor::new(
                format!("d{g:03}_rel{k:02}"),
                frames.len(),
                r,
                c,
                data,
            )?);
            corpus.database_groups.push(Some(g));
            corpus.database_cuts.push(vec![0]);
        }
    }
    Ok(corpus)
}
